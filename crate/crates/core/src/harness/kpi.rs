use std::path::PathBuf;

use crate::comms::{collect_samples, kpi_report, KpiBudget, KpiReport, LatencyModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KpiOptions {
    pub samples: usize,
    pub seed: u64,
    /// Speed at which the service deadline is evaluated, m/s.
    pub v_free_mps: f64,
    pub budget: KpiBudget,
    /// Receives `kpi.csv` and `kpi.txt` when set.
    pub out_dir: Option<PathBuf>,
}

impl Default for KpiOptions {
    fn default() -> Self {
        KpiOptions {
            samples: 1_000_000,
            seed: 1,
            v_free_mps: 20.0 / 3.6,
            budget: KpiBudget::default(),
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KpiOutcome {
    pub report: KpiReport,
    pub text: String,
}

/// Monte-Carlo evaluation of both service-latency modes against the budget.
pub fn cmd_kpi(model: &LatencyModel, opts: &KpiOptions) -> Result<KpiOutcome> {
    if opts.samples < 1 {
        return Err(Error::config("--samples must be at least 1"));
    }
    if !(opts.v_free_mps > 0.0) {
        return Err(Error::config("v_free must be positive"));
    }
    model.validate()?;
    let samples = collect_samples(model, opts.seed, opts.samples);
    let report = kpi_report(&samples, &opts.budget, opts.v_free_mps)?;
    let text = report.to_text();
    if let Some(dir) = &opts.out_dir {
        super::write_file(&dir.join("kpi.csv"), &report.to_csv())?;
        super::write_file(&dir.join("kpi.txt"), &text)?;
    }
    Ok(KpiOutcome { report, text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::FlowSpec;

    fn opts(n: usize) -> KpiOptions {
        KpiOptions {
            samples: n,
            ..Default::default()
        }
    }

    #[test]
    fn zero_model_passes_everything_but_separation() {
        let out = cmd_kpi(&LatencyModel::zero(), &opts(100)).unwrap();
        for c in &out.report.checks {
            if c.name != "dt_below_svc_ms" {
                assert!(c.pass, "{}", c.name);
            }
        }
    }

    #[test]
    fn slow_v2c_fails_deadline() {
        let m = LatencyModel {
            v2c: FlowSpec::fixed(500.0),
            ..LatencyModel::measured()
        };
        let out = cmd_kpi(&m, &opts(1000)).unwrap();
        assert!(!out.report.check("svc_deadline_ms").unwrap().pass);
        assert!(!out.report.check("info_e2e_max_ms").unwrap().pass);
    }

    #[test]
    fn zero_samples_is_usage_error() {
        assert_eq!(cmd_kpi(&LatencyModel::measured(), &opts(0)).unwrap_err().exit_code(), 2);
    }
}
