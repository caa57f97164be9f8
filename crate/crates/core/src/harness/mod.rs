mod checks;
mod config;
mod csvio;
mod plot;
mod run;
mod summary;

pub use checks::{env_check, gradcheck_all, greedy_trajectory, reward_oracle, write_trajectory, EnvCheckReport, TrajectoryRow};
pub use config::{ArchEntry, ExperimentConfig, ExperimentSection, RunConfig};
pub use csvio::{read_metrics, write_metrics, MetricsWriter, CSV_HEADER};
pub use plot::{emit_plots, render_svg, seed_curve, Series, ENTROPY_FIGURE, RETURN_FIGURE};
pub use run::{
    grid, run_dir, run_experiment, run_single, RunOutcome, RunRecord, RunStatus, CHECKPOINT_FILE, METRICS_FILE,
    SNAPSHOT_FILE, STATUS_FILE,
};
pub use summary::{find_runs, load_run, relative_improvement, summarize, Better, Metric, RunResult, Stat, SummaryTable};
