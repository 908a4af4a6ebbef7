use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartyId {
    Server,
    Node(usize),
}

impl PartyId {
    pub fn is_edge(self) -> bool {
        matches!(self, PartyId::Node(_))
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Server => write!(f, "server"),
            PartyId::Node(k) => write!(f, "node{k}"),
        }
    }
}

impl std::str::FromStr for PartyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "server" {
            return Ok(PartyId::Server);
        }
        s.strip_prefix("node")
            .and_then(|k| k.parse().ok())
            .map(PartyId::Node)
            .ok_or_else(|| Error::Contract(format!("unknown party '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Transfer,
    Compute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Inference,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Transfer => "transfer",
            EventKind::Compute => "compute",
        })
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Inference => "inference",
        })
    }
}

/// One ledger entry. Compute events have no receiver and zero bytes;
/// transfers have zero FLOPs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub step: u64,
    pub kind: EventKind,
    pub from: PartyId,
    pub to: Option<PartyId>,
    pub bytes: u64,
    pub flops: u64,
    pub phase: Phase,
    pub label: String,
}

/// Running totals for one `(party, phase)` cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PartyTotals {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub flops: u64,
}

fn fold_into(totals: &mut BTreeMap<(PartyId, Phase), PartyTotals>, e: &Event) {
    match e.kind {
        EventKind::Transfer => {
            totals.entry((e.from, e.phase)).or_default().bytes_sent += e.bytes;
            if let Some(to) = e.to {
                totals.entry((to, e.phase)).or_default().bytes_received += e.bytes;
            }
        }
        EventKind::Compute => totals.entry((e.from, e.phase)).or_default().flops += e.flops,
    }
}

/// Append-only log of transfers and compute with cached per-party totals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    events: Vec<Event>,
    totals: BTreeMap<(PartyId, Phase), PartyTotals>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, mut e: Event) {
        e.step = self.events.len() as u64;
        fold_into(&mut self.totals, &e);
        self.events.push(e);
    }

    pub fn transfer(&mut self, from: PartyId, to: PartyId, bytes: u64, phase: Phase, label: impl Into<String>) {
        self.push(Event {
            step: 0,
            kind: EventKind::Transfer,
            from,
            to: Some(to),
            bytes,
            flops: 0,
            phase,
            label: label.into(),
        });
    }

    pub fn compute(&mut self, party: PartyId, flops: u64, phase: Phase, label: impl Into<String>) {
        self.push(Event {
            step: 0,
            kind: EventKind::Compute,
            from: party,
            to: None,
            bytes: 0,
            flops,
            phase,
            label: label.into(),
        });
    }

    /// Appends another ledger's events in order, renumbering steps.
    pub fn absorb(&mut self, shard: CostLedger) {
        for e in shard.events {
            self.push(e);
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn totals(&self, party: PartyId, phase: Phase) -> PartyTotals {
        self.totals.get(&(party, phase)).copied().unwrap_or_default()
    }

    pub fn cached_totals(&self) -> &BTreeMap<(PartyId, Phase), PartyTotals> {
        &self.totals
    }

    pub fn transfers(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Transfer)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_csv_with(out, None)
    }

    /// Writes the log, optionally prefixing every row with a few leading
    /// key columns.
    pub(crate) fn write_csv_with<W: Write>(&self, out: W, prefix: Option<(&[&str], &[String])>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = prefix.map(|p| p.0.to_vec()).unwrap_or_default();
        header.extend(["step", "kind", "from", "to", "bytes", "flops", "phase", "label"]);
        w.write_record(&header)?;
        self.write_rows(&mut w, prefix.map(|p| p.1))?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>, prefix: Option<&[String]>) -> Result<()> {
        for e in &self.events {
            let mut rec: Vec<String> = prefix.map(|p| p.to_vec()).unwrap_or_default();
            rec.extend([
                e.step.to_string(),
                e.kind.to_string(),
                e.from.to_string(),
                e.to.map(|t| t.to_string()).unwrap_or_default(),
                e.bytes.to_string(),
                e.flops.to_string(),
                e.phase.to_string(),
                e.label.clone(),
            ]);
            w.write_record(&rec)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Exact fold of a ledger with Table-1 style derived fields.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerSummary {
    pub per_party: BTreeMap<(PartyId, Phase), PartyTotals>,
    /// Every transferred byte, counted once.
    pub bytes_total: u64,
    pub edge_train_flops: u64,
    pub server_train_flops: u64,
    pub edge_infer_flops: u64,
    pub server_infer_flops: u64,
}

impl LedgerSummary {
    pub fn party(&self, party: PartyId, phase: Phase) -> PartyTotals {
        self.per_party.get(&(party, phase)).copied().unwrap_or_default()
    }
}

/// Recomputes all totals from the raw event log.
pub fn ledger_summary(ledger: &CostLedger) -> LedgerSummary {
    let mut s = LedgerSummary::default();
    for e in ledger.events() {
        fold_into(&mut s.per_party, e);
        match e.kind {
            EventKind::Transfer => s.bytes_total += e.bytes,
            EventKind::Compute => {
                let slot = match (e.from.is_edge(), e.phase) {
                    (true, Phase::Train) => &mut s.edge_train_flops,
                    (false, Phase::Train) => &mut s.server_train_flops,
                    (true, Phase::Inference) => &mut s.edge_infer_flops,
                    (false, Phase::Inference) => &mut s.server_infer_flops,
                };
                *slot += e.flops;
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_summary_is_zero() {
        assert_eq!(ledger_summary(&CostLedger::new()), LedgerSummary::default());
    }

    #[test]
    fn transfers_add_up() {
        let mut l = CostLedger::new();
        l.transfer(PartyId::Server, PartyId::Node(0), 10, Phase::Train, "a");
        l.transfer(PartyId::Server, PartyId::Node(1), 32, Phase::Train, "b");
        l.compute(PartyId::Node(1), 7, Phase::Train, "c");
        let s = ledger_summary(&l);
        assert_eq!(s.bytes_total, 42);
        assert_eq!(s.edge_train_flops, 7);
        assert_eq!(s.per_party, *l.cached_totals());
        assert_eq!(l.totals(PartyId::Node(1), Phase::Train).bytes_received, 32);
        assert_eq!(l.events()[2].step, 2);
    }

    #[test]
    fn csv_layout() {
        let mut l = CostLedger::new();
        l.transfer(PartyId::Server, PartyId::Node(2), 5, Phase::Train, "student");
        l.compute(PartyId::Node(2), 9, Phase::Inference, "infer");
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,kind,from,to,bytes,flops,phase,label\n0,transfer,server,node2,5,0,train,student\n1,compute,node2,,0,9,inference,infer\n"
        );
        assert_eq!("node2".parse::<PartyId>().unwrap(), PartyId::Node(2));
    }
}
