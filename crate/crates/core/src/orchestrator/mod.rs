//! Distillation topologies between a server and edge nodes, with an
//! event-sourced cost ledger.
//!
//! * centralized: teacher and students trained at the server, students
//!   shipped to nodes;
//! * decentralized: teacher shipped, each node distills its own student and
//!   then discards the teacher;
//! * semi-centralized: centralized training followed by local fine-tuning
//!   with a rehearsal buffer of server rows and cached teacher logits.
//!
//! Byte counts use `bytes_per_value` per parameter or feature; at the
//! default of 4 a model transfer equals its `.mdl` length.

mod ledger;
mod party;
mod plan;
mod run;

pub use ledger::{ledger_summary, CostLedger, Event, EventKind, LedgerSummary, PartyId, PartyTotals, Phase};
pub use party::{select_student, Context, Party, Registry, SelectionRule};
pub use plan::{SemiSettings, Topology, TopologyPlan};
pub use run::{
    run, run_centralized, run_centralized_with_teacher, run_decentralized, run_decentralized_with_teacher,
    run_semi_centralized, run_semi_centralized_with_teacher, run_with_teacher, train_flops, train_teacher,
    RunOutcome, TrainedTeacher,
};
