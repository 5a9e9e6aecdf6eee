//! Label information base: the incoming label map (ILM → NHLFE) used by
//! label-switching routers and the FEC-to-NHLFE map used at ingress.

use std::collections::{BTreeSet, HashMap};

use crate::ids::{IfaceId, NextHop};
use crate::packet::{check_label, PacketError};
use crate::prefix::Prefix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IlmKey {
    pub in_iface: IfaceId,
    pub label: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelOp {
    Swap(u32),
    Pop,
    PushAdditional(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NhlfeEntry {
    pub op: LabelOp,
    /// `None` hands the packet to the local node after a pop.
    pub next: Option<NextHop>,
}

/// What an ingress router does with an unlabeled packet of a FEC.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FtnEntry {
    Push {
        label: u32,
        next: NextHop,
    },
    /// Ingress is also the egress of the FEC: switched on the binding
    /// without a label.
    Forward {
        next: NextHop,
    },
}

impl FtnEntry {
    pub fn next(&self) -> NextHop {
        match *self {
            FtnEntry::Push { next, .. } | FtnEntry::Forward { next } => next,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum LibError {
    #[error(transparent)]
    Label(#[from] PacketError),
    #[error("{0:?} needs a next hop")]
    MissingNextHop(LabelOp),
}

/// Flat label tables. Lookups are hash probes and their modeled cost does
/// not depend on how many bindings are installed.
#[derive(Clone, Debug, Default)]
pub struct Lib {
    ilm: HashMap<IlmKey, NhlfeEntry>,
    ftn: HashMap<Prefix, FtnEntry>,
    fec_lengths: BTreeSet<u8>,
}

impl Lib {
    pub fn new() -> Self {
        Lib::default()
    }

    pub fn install(&mut self, key: IlmKey, entry: NhlfeEntry) -> Result<Option<NhlfeEntry>, LibError> {
        check_label(key.label)?;
        match entry.op {
            LabelOp::Swap(l) | LabelOp::PushAdditional(l) => {
                check_label(l)?;
                if entry.next.is_none() {
                    return Err(LibError::MissingNextHop(entry.op));
                }
            }
            LabelOp::Pop => {}
        }
        Ok(self.ilm.insert(key, entry))
    }

    pub fn lookup(&self, key: IlmKey) -> Result<Option<&NhlfeEntry>, PacketError> {
        check_label(key.label)?;
        Ok(self.ilm.get(&key))
    }

    pub fn bind_fec(&mut self, fec: Prefix, entry: FtnEntry) -> Result<Option<FtnEntry>, LibError> {
        if let FtnEntry::Push { label, .. } = entry {
            check_label(label)?;
        }
        self.fec_lengths.insert(fec.len());
        Ok(self.ftn.insert(fec, entry))
    }

    pub fn fec_binding(&self, fec: &Prefix) -> Option<&FtnEntry> {
        self.ftn.get(fec)
    }

    /// Binding for the FEC containing `dst`. FECs are destination prefixes,
    /// so this probes one exact key per distinct FEC length, most specific
    /// first.
    pub fn classify(&self, dst: u32) -> Option<(Prefix, &FtnEntry)> {
        self.fec_lengths.iter().rev().find_map(|&len| {
            let fec = Prefix::truncating(dst, len);
            self.ftn.get(&fec).map(|e| (fec, e))
        })
    }

    pub fn ilm_len(&self) -> usize {
        self.ilm.len()
    }

    pub fn ftn_len(&self) -> usize {
        self.ftn.len()
    }

    /// ILM entries sorted by key.
    pub fn ilm_entries(&self) -> Vec<(IlmKey, NhlfeEntry)> {
        let mut v: Vec<_> = self.ilm.iter().map(|(k, e)| (*k, *e)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }

    pub fn ftn_entries(&self) -> Vec<(Prefix, FtnEntry)> {
        let mut v: Vec<_> = self.ftn.iter().map(|(k, e)| (*k, *e)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }
}
