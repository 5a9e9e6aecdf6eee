use lspsim_core::metrics::{fmt_f64, Table};
use lspsim_core::sim::SimReport;
use serde::Serialize;

use crate::chart::LineChart;

/// One pass/fail judgment, with the numbers it was made from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub id: String,
    pub description: String,
    pub observed: String,
    pub expected: String,
    /// `None` when the check could not run (for example a single mode was
    /// requested); skipped checks neither pass nor fail.
    pub passed: Option<bool>,
}

impl Check {
    pub fn new(
        id: &str,
        description: impl Into<String>,
        observed: impl Into<String>,
        expected: impl Into<String>,
        passed: bool,
    ) -> Self {
        Check {
            id: id.into(),
            description: description.into(),
            observed: observed.into(),
            expected: expected.into(),
            passed: Some(passed),
        }
    }

    pub fn skipped(id: &str, description: impl Into<String>, why: &str) -> Self {
        Check {
            id: id.into(),
            description: description.into(),
            observed: why.into(),
            expected: String::new(),
            passed: None,
        }
    }

    pub fn status(&self) -> &'static str {
        match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ratio {
    pub name: String,
    pub numerator_label: String,
    pub numerator: f64,
    pub denominator_label: String,
    pub denominator: f64,
    pub value: f64,
}

impl Ratio {
    pub fn new(
        name: impl Into<String>,
        num_label: impl Into<String>,
        num: f64,
        den_label: impl Into<String>,
        den: f64,
    ) -> Self {
        Ratio {
            name: name.into(),
            numerator_label: num_label.into(),
            numerator: num,
            denominator_label: den_label.into(),
            denominator: den,
            value: num / den,
        }
    }
}

/// Packet accounting over every simulation an experiment ran.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Accounting {
    pub runs: u64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    /// Runs whose end state breaks injected = delivered + dropped + in flight,
    /// or whose in-flight count disagrees with the packets left in the model.
    pub unbalanced_runs: u64,
    pub conservation_violations: u64,
    pub work_conservation_violations: u64,
    pub token_bucket_violations: u64,
    pub dequeue_checks: u64,
    pub police_checks: u64,
}

impl Accounting {
    pub fn add(&mut self, r: &SimReport) {
        let c = &r.counters;
        self.runs += 1;
        self.injected += c.injected;
        self.delivered += c.delivered;
        self.dropped += c.dropped_total();
        self.in_flight += c.in_flight;
        if !c.conserved() || c.in_flight != r.resident_packets {
            self.unbalanced_runs += 1;
        }
        self.conservation_violations += r.violations.conservation;
        self.work_conservation_violations += r.violations.work_conservation;
        self.token_bucket_violations += r.violations.token_bucket;
        self.dequeue_checks += r.violations.dequeue_checks;
        self.police_checks += r.violations.police_checks;
    }

    pub fn balanced(&self) -> bool {
        self.unbalanced_runs == 0
            && self.conservation_violations == 0
            && self.injected == self.delivered + self.dropped + self.in_flight
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub id: String,
    pub title: String,
    pub seed: u64,
    pub scenario_hash: String,
    pub modes: Vec<String>,
    pub ratios: Vec<Ratio>,
    pub checks: Vec<Check>,
    pub accounting: Accounting,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub charts: Vec<LineChart>,
}

impl ExperimentResult {
    pub fn new(id: &str, title: &str, seed: u64, scenario_hash: String) -> Self {
        ExperimentResult {
            id: id.into(),
            title: title.into(),
            seed,
            scenario_hash,
            modes: Vec::new(),
            ratios: Vec::new(),
            checks: Vec::new(),
            accounting: Accounting::default(),
            tables: Vec::new(),
            charts: Vec::new(),
        }
    }

    /// True when no check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn ratio(&self, name: &str) -> Option<&Ratio> {
        self.ratios.iter().find(|r| r.name == name)
    }

    pub fn ratio_table(&self) -> Table {
        let mut t = Table::new(
            format!("{}_ratios", self.id),
            &[
                "ratio",
                "numerator",
                "numerator_value",
                "denominator",
                "denominator_value",
                "value",
            ],
        );
        for r in &self.ratios {
            t.push(vec![
                r.name.clone(),
                r.numerator_label.clone(),
                fmt_f64(r.numerator),
                r.denominator_label.clone(),
                fmt_f64(r.denominator),
                format!("{:.4}", r.value),
            ]);
        }
        t
    }

    pub fn check_table(&self) -> Table {
        let mut t = Table::new(
            format!("{}_checks", self.id),
            &["check", "status", "observed", "expected", "description"],
        );
        for c in &self.checks {
            t.push(vec![
                c.id.clone(),
                c.status().into(),
                c.observed.clone(),
                c.expected.clone(),
                c.description.clone(),
            ]);
        }
        t
    }
}

pub fn mean(v: &[u64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    Some(v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64)
}
