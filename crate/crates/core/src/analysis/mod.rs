//! Linear probes on frozen features, task-gradient conflict and the
//! pairwise synergy sweep.

mod gradient;
mod probe;
mod synergy;

pub use gradient::{conflict_matrix, gcd, task_gradient, ConflictMatrix, GcdConfig, GradientVector};
pub use probe::{
    probe_features, probe_workspace, train_probe, FeatureSource, LinearProbe, ProbeConfig, ProbeReport, ProbeResult,
    ProbeTaskReport,
};
pub use synergy::{read_ledger, sweep_regimes, synergy_sweep, LedgerEntry, SynergyGrid, SynergyRow};
