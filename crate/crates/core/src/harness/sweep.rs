use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sweep_seed;
use crate::sim::{fmt_opt, run, EventKind, EventPlan, MetricsSummary, RandomEvents, SimulationScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PUser,
    Events,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_user" => Ok(SweepParam::PUser),
            "events" => Ok(SweepParam::Events),
            _ => Err(Error::config(format!("unknown sweep parameter `{s}` (p_user | events)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: SimulationScenario,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: u32,
    /// Receives `sweep.csv` and `sweep.dat` when set.
    pub out_dir: Option<PathBuf>,
}

pub const SWEEP_HEADER: &str = "kind,value,seed,mean_tt_all_s,mean_tt_cav_s,mean_tt_unc_s,mean_enc_all,mean_enc_cav,mean_enc_unc,blocking_all,completed";

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// `runs[point][replicate]`.
    pub runs: Vec<Vec<MetricsSummary>>,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep needs at least one value"));
        }
        if self.seeds == 0 {
            return Err(Error::config("sweep needs at least one seed"));
        }
        for &v in &self.values {
            self.scenario_for(v, 0, 0).validate()?;
        }
        Ok(())
    }

    /// Scenario for sweep point `point` (value `value`), replicate `rep`.
    pub fn scenario_for(&self, value: f64, point: u32, rep: u32) -> SimulationScenario {
        let mut sc = self.base.clone();
        sc.seed = sweep_seed(self.base.seed, point, rep);
        match self.param {
            SweepParam::PUser => sc.p_user = value,
            SweepParam::Events => {
                let mut r = match &self.base.events {
                    EventPlan::Random(r) => r.clone(),
                    EventPlan::Fixed(_) => RandomEvents {
                        count: 0,
                        kinds: vec![EventKind::Accident, EventKind::Gathering],
                        onset_min_s: 0.0,
                        onset_max_s: None,
                        duration_s: None,
                    },
                };
                r.count = value.round() as usize;
                sc.events = EventPlan::Random(r);
            }
        }
        sc
    }
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs.flatten() {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Column means over replicates, skipping empty classes.
pub(crate) fn aggregate(runs: &[MetricsSummary]) -> [Option<f64>; 8] {
    let col = |f: &dyn Fn(&MetricsSummary) -> Option<f64>| mean(runs.iter().map(f));
    [
        col(&|m| m.overall.mean_travel_time_s),
        col(&|m| m.cav.mean_travel_time_s),
        col(&|m| m.unconnected.mean_travel_time_s),
        col(&|m| m.overall.mean_encounters),
        col(&|m| m.cav.mean_encounters),
        col(&|m| m.unconnected.mean_encounters),
        col(&|m| m.overall.blocking_probability),
        col(&|m| Some(m.overall.completed as f64)),
    ]
}

impl SweepResult {
    pub fn means(&self, point: usize) -> [Option<f64>; 8] {
        aggregate(&self.runs[point])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{SWEEP_HEADER}");
        for (v, runs) in self.values.iter().zip(&self.runs) {
            for m in runs {
                let _ = writeln!(s, "run,{v},{}", m.csv_row());
            }
            let cols: Vec<String> = aggregate(runs).iter().map(|&x| fmt_opt(x)).collect();
            let _ = writeln!(s, "mean,{v},,{}", cols.join(","));
        }
        s
    }

    /// Whitespace-separated aggregate table for gnuplot.
    pub fn to_dat(&self) -> String {
        let mut s = String::from(
            "# value mean_tt_all_s mean_tt_cav_s mean_tt_unc_s mean_enc_all mean_enc_cav mean_enc_unc blocking_all completed\n",
        );
        for (i, v) in self.values.iter().enumerate() {
            let cols: Vec<String> = self.means(i).iter().map(|&x| fmt_opt(x)).collect();
            let _ = writeln!(s, "{v} {}", cols.join(" "));
        }
        s
    }
}

/// Runs every (value, replicate) pair in parallel; results come back in
/// sweep order regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let jobs: Vec<(usize, u32)> = (0..spec.values.len())
        .flat_map(|p| (0..spec.seeds).map(move |r| (p, r)))
        .collect();
    let flat: Vec<MetricsSummary> = jobs
        .par_iter()
        .map(|&(p, r)| run(&spec.scenario_for(spec.values[p], p as u32, r)))
        .collect::<Result<_>>()?;
    let runs = flat
        .chunks(spec.seeds as usize)
        .map(<[MetricsSummary]>::to_vec)
        .collect();
    Ok(SweepResult {
        runs,
        values: spec.values.clone(),
    })
}

/// Runs the sweep and writes `sweep.csv` and `sweep.dat` into the output directory.
pub fn cmd_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    let res = run_sweep(spec)?;
    if let Some(dir) = &spec.out_dir {
        super::write_file(&dir.join("sweep.csv"), &res.to_csv())?;
        super::write_file(&dir.join("sweep.dat"), &res.to_dat())?;
    }
    Ok(res)
}
