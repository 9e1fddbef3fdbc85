//! Command implementations behind the `twinroute` binary.

mod kpi;
mod serve;
mod sweep;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::comms::SvcMode;
use crate::error::{Error, Result};
use crate::sim::{run_with, Journals, MetricsSummary, SimulationScenario};

pub use kpi::{cmd_kpi, KpiOptions, KpiOutcome};
pub use serve::{
    cmd_serve, handle_line, RouteStatus, ServiceHandle, ServiceMessage, ServiceState, WireLink, WireNode,
};
pub use sweep::{cmd_sweep, run_sweep, SweepParam, SweepResult, SweepSpec, SWEEP_HEADER};

/// Overrides and outputs for a single run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Directory receiving `metrics.csv`; created if missing.
    pub out_dir: PathBuf,
    pub twin_journal: Option<PathBuf>,
    pub routes_journal: Option<PathBuf>,
    pub svc_single_v2c: bool,
}

pub fn load_scenario(path: &Path, seed: Option<u64>, single_v2c: bool) -> Result<SimulationScenario> {
    let mut sc = SimulationScenario::load(path)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if single_v2c {
        sc.svc_mode = SvcMode::SingleV2c;
    }
    Ok(sc)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs one scenario file and writes `metrics.csv` plus any requested journals.
pub fn cmd_run(scenario_path: &Path, opts: &RunOptions) -> Result<MetricsSummary> {
    let sc = load_scenario(scenario_path, opts.seed, opts.svc_single_v2c)?;
    let mut twin = opts.twin_journal.as_deref().map(create).transpose()?;
    let mut routes = opts.routes_journal.as_deref().map(create).transpose()?;
    let journals = Journals {
        twin: twin.as_mut().map(|w| w as &mut dyn std::io::Write),
        routes: routes.as_mut().map(|w| w as &mut dyn std::io::Write),
    };
    let out = run_with(&sc, journals, |_| {})?;
    write_file(&opts.out_dir.join("metrics.csv"), &out.metrics.to_csv())?;
    Ok(out.metrics)
}
