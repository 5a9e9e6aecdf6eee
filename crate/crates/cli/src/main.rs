use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use lspsim_experiments::calibrate::{cost_toml, run_calibration, CalibrationParams};
use lspsim_experiments::output::{emit_outputs, prepare_dir};
use lspsim_experiments::scenario::scenario_result;
use lspsim_experiments::{e1, e2, e3, e4, load_scenario, run_scenario, ExperimentResult, ModeSelect};

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "lspsim",
    version,
    about = "Discrete-event simulator comparing IP routing and MPLS switching"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and write its tables.
    Run {
        scenario: PathBuf,
        /// Output directory (overrides the scenario's [output] dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the canned experiments.
    Experiment {
        id: ExperimentId,
        #[arg(long, default_value = "both")]
        mode: ModeSelect,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search the cost constants against the E1 and E2 targets.
    Calibrate {
        #[arg(long, default_value = "out/calibrate")]
        out: PathBuf,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
}

impl ExperimentId {
    fn name(self) -> &'static str {
        match self {
            ExperimentId::E1 => "e1",
            ExperimentId::E2 => "e2",
            ExperimentId::E3 => "e3",
            ExperimentId::E4 => "e4",
        }
    }
}

fn report(res: &ExperimentResult, dir: &Path) -> ExitCode {
    match emit_outputs(res, dir) {
        Ok(files) => println!("wrote {} files to {}", files.len(), dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    for c in &res.checks {
        println!("{} {}: {} (expected {})", c.status(), c.id, c.observed, c.expected);
    }
    if res.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}

fn prepare(dir: &Path) -> Result<(), ExitCode> {
    prepare_dir(dir).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn experiment(id: ExperimentId, mode: ModeSelect, seed: u64, out: Option<PathBuf>) -> ExitCode {
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(id.name()));
    if let Err(code) = prepare(&dir) {
        return code;
    }
    let modes = mode.modes();
    let start = Instant::now();
    let res = match id {
        ExperimentId::E1 => e1::run_e1(&e1::E1Params {
            seed,
            modes,
            ..Default::default()
        }),
        ExperimentId::E2 => e2::run_e2(&e2::E2Params {
            seed,
            modes,
            ..Default::default()
        }),
        ExperimentId::E3 => e3::run_e3(&e3::E3Params {
            seed,
            modes,
            ..Default::default()
        }),
        ExperimentId::E4 => e4::run_e4(&e4::E4Params {
            seed,
            modes,
            ..Default::default()
        }),
    };
    let res = match res {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    eprintln!("{} finished in {:.1} s", id.name(), start.elapsed().as_secs_f64());
    report(&res, &dir)
}

fn run(path: &Path, out: Option<PathBuf>) -> ExitCode {
    let s = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let dir = out
        .or_else(|| s.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&s.name));
    if let Err(code) = prepare(&dir) {
        return code;
    }
    match run_scenario(&s) {
        Ok(r) => report(&scenario_result(&s, &r), &dir),
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn calibrate(out: PathBuf) -> ExitCode {
    if let Err(code) = prepare(&out) {
        return code;
    }
    let (res, all) = run_calibration(&CalibrationParams::default());
    if let Some(best) = all.iter().find(|c| c.feasible) {
        let path = out.join("calibration.toml");
        if let Err(e) = std::fs::write(&path, cost_toml(&best.cost)) {
            eprintln!("error: writing {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
        print!("{}", cost_toml(&best.cost));
        println!(
            "e1 ratios {:.4}..{:.4} (mean {:.4}), e2 ratio {:.4}",
            best.e1_large_min, best.e1_large_max, best.e1_large_mean, best.e2_ratio
        );
    }
    report(&res, &out)
}

fn validate(path: &Path) -> ExitCode {
    match load_scenario(path) {
        Ok(s) => {
            println!(
                "{}: ok ({} nodes, {} links, {} flows, hash {})",
                s.name,
                s.topology.node_count(),
                s.topology.links().len(),
                s.flows.len(),
                s.hash
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.cmd {
        Cmd::Run { scenario, out } => run(&scenario, out),
        Cmd::Experiment { id, mode, seed, out } => experiment(id, mode, seed, out),
        Cmd::Calibrate { out } => calibrate(out),
        Cmd::Validate { scenario } => validate(&scenario),
    }
}
