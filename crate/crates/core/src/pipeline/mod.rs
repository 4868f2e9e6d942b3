//! Configuration, orchestration and persistence.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;
pub mod run;

pub use config::RunConfig;
pub use experiments::{run_ablation, run_budget_sweep, run_efficiency, AblationRow, EfficiencyReport, SweepReport, SweepRow};
pub use report::{AttackReport, RunStatus};
pub use run::{border_region, run_attack, run_heatmap, run_iterative, run_rounds, AttackInstance, RoundPolicy, RunArtifacts, RunHooks};
