//! Communication and computation latency model, packet delivery, the route
//! service deadline and the KPI report.
//!
//! All latencies are configured in milliseconds and returned in seconds.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nav::REQUEST_COEFF;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    #[default]
    Uniform,
    /// Mode placed so the distribution mean equals `mean_ms` (clamped into range);
    /// without `mean_ms` the mode is the midpoint.
    Triangular,
}

/// One latency contributor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub min_ms: f64,
    pub max_ms: f64,
    #[serde(default)]
    pub dist: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ms: Option<f64>,
}

impl FlowSpec {
    pub fn uniform(min_ms: f64, max_ms: f64) -> Self {
        FlowSpec {
            min_ms,
            max_ms,
            dist: Distribution::Uniform,
            mean_ms: None,
        }
    }

    pub fn fixed(ms: f64) -> Self {
        Self::uniform(ms, ms)
    }

    fn with_mean(mut self, mean: f64) -> Self {
        self.mean_ms = Some(mean);
        self
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min_ms >= 0.0 && self.min_ms <= self.max_ms && self.max_ms.is_finite()) {
            return Err(Error::config(format!(
                "latency flow {name}: need 0 <= min_ms <= max_ms, got [{}, {}]",
                self.min_ms, self.max_ms
            )));
        }
        Ok(())
    }

    fn mode(&self) -> f64 {
        let mid = 0.5 * (self.min_ms + self.max_ms);
        match self.mean_ms {
            Some(mean) => (3.0 * mean - self.min_ms - self.max_ms).clamp(self.min_ms, self.max_ms),
            None => mid,
        }
    }

    /// One draw in milliseconds.
    pub fn sample_ms<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = (self.min_ms, self.max_ms);
        if a == b {
            return a;
        }
        let u: f64 = rng.random();
        match self.dist {
            Distribution::Uniform => a + u * (b - a),
            Distribution::Triangular => {
                // inverse CDF
                let c = self.mode();
                let f = (c - a) / (b - a);
                if u < f {
                    a + (u * (b - a) * (c - a)).sqrt()
                } else {
                    b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
                }
            }
        }
    }
}

/// How the V2C round trip enters the service latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvcMode {
    /// `T_local + T_exe + T_cloud + 2 T_V2C`.
    #[default]
    RoundTrip,
    /// Counts `T_V2C` once; reproduces the published 810.59 ms total.
    SingleV2c,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    /// RSU edge detection.
    pub rsu: FlowSpec,
    pub i2c: FlowSpec,
    pub v2c: FlowSpec,
    pub cloud_monitor: FlowSpec,
    pub cloud_plan: FlowSpec,
    /// On-board localisation.
    pub local: FlowSpec,
    /// Route loading and execution.
    pub exe: FlowSpec,
    pub pdr_ssms: f64,
    pub pdr_info: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::measured()
    }
}

impl LatencyModel {
    /// Ranges from the field measurements (max / min / mean in ms). The route
    /// loading row is printed with its bounds swapped; `[500.97, 501.35]` is used.
    pub fn measured() -> Self {
        LatencyModel {
            i2c: FlowSpec::uniform(1.10, 1.74).with_mean(1.37),
            rsu: FlowSpec::uniform(70.01, 153.41).with_mean(106.23),
            v2c: FlowSpec::uniform(20.16, 42.13).with_mean(32.30),
            cloud_monitor: FlowSpec::uniform(42.72, 56.29).with_mean(45.07),
            cloud_plan: FlowSpec::uniform(173.27, 201.07).with_mean(183.68),
            local: FlowSpec::uniform(2.56, 10.13).with_mean(6.14),
            exe: FlowSpec::uniform(500.97, 501.35).with_mean(501.18),
            pdr_ssms: 0.9953,
            pdr_info: 1.0,
        }
    }

    /// Every flow pinned at its published "Max." column value. For route
    /// loading that column holds 500.97.
    pub fn pinned_max() -> Self {
        LatencyModel {
            rsu: FlowSpec::fixed(153.41),
            i2c: FlowSpec::fixed(1.74),
            v2c: FlowSpec::fixed(42.13),
            cloud_monitor: FlowSpec::fixed(56.29),
            cloud_plan: FlowSpec::fixed(201.07),
            local: FlowSpec::fixed(10.13),
            exe: FlowSpec::fixed(500.97),
            ..Self::measured()
        }
    }

    /// Every flow pinned at its lower bound.
    pub fn pinned_min() -> Self {
        Self::measured().map_flows(|f| FlowSpec::fixed(f.min_ms))
    }

    pub fn zero() -> Self {
        let mut m = Self::measured().map_flows(|_| FlowSpec::fixed(0.0));
        m.pdr_ssms = 1.0;
        m.pdr_info = 1.0;
        m
    }

    pub fn map_flows(&self, f: impl Fn(&FlowSpec) -> FlowSpec) -> Self {
        LatencyModel {
            rsu: f(&self.rsu),
            i2c: f(&self.i2c),
            v2c: f(&self.v2c),
            cloud_monitor: f(&self.cloud_monitor),
            cloud_plan: f(&self.cloud_plan),
            local: f(&self.local),
            exe: f(&self.exe),
            pdr_ssms: self.pdr_ssms,
            pdr_info: self.pdr_info,
        }
    }

    fn flows(&self) -> [(&'static str, &FlowSpec); 7] {
        [
            ("rsu", &self.rsu),
            ("i2c", &self.i2c),
            ("v2c", &self.v2c),
            ("cloud_monitor", &self.cloud_monitor),
            ("cloud_plan", &self.cloud_plan),
            ("local", &self.local),
            ("exe", &self.exe),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in self.flows() {
            f.validate(name)?;
        }
        for (name, p) in [("pdr_ssms", self.pdr_ssms), ("pdr_info", self.pdr_info)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Bounds of the DT-modelling latency in seconds.
    pub fn dt_bounds(&self) -> (f64, f64) {
        (
            (self.rsu.min_ms + self.i2c.min_ms) / 1e3,
            (self.rsu.max_ms + self.i2c.max_ms) / 1e3,
        )
    }

    /// Bounds of the service latency in seconds.
    pub fn svc_bounds(&self, mode: SvcMode) -> (f64, f64) {
        let k = match mode {
            SvcMode::RoundTrip => 2.0,
            SvcMode::SingleV2c => 1.0,
        };
        let sum = |g: fn(&FlowSpec) -> f64| {
            g(&self.local) + g(&self.exe) + g(&self.cloud_monitor) + g(&self.cloud_plan) + k * g(&self.v2c)
        };
        (sum(|f| f.min_ms) / 1e3, sum(|f| f.max_ms) / 1e3)
    }
}

/// Per-flow random streams derived from one seed.
#[derive(Debug, Clone)]
pub struct LatencyStreams {
    rsu: ChaCha8Rng,
    i2c: ChaCha8Rng,
    v2c: ChaCha8Rng,
    cloud_monitor: ChaCha8Rng,
    cloud_plan: ChaCha8Rng,
    local: ChaCha8Rng,
    exe: ChaCha8Rng,
    ssms: ChaCha8Rng,
    info: ChaCha8Rng,
}

impl LatencyStreams {
    pub fn new(seed: u64) -> Self {
        LatencyStreams {
            rsu: stream_rng(seed, Stream::LatencyRsu),
            i2c: stream_rng(seed, Stream::LatencyI2c),
            v2c: stream_rng(seed, Stream::LatencyV2c),
            cloud_monitor: stream_rng(seed, Stream::LatencyCloudMonitor),
            cloud_plan: stream_rng(seed, Stream::LatencyCloudPlan),
            local: stream_rng(seed, Stream::LatencyLocal),
            exe: stream_rng(seed, Stream::LatencyExe),
            ssms: stream_rng(seed, Stream::DeliverySsms),
            info: stream_rng(seed, Stream::DeliveryInfo),
        }
    }

    pub fn ssms_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.ssms
    }

    pub fn info_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.info
    }
}

/// Breakdown of one service-latency draw, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvcDraw {
    pub local: f64,
    pub exe: f64,
    pub cloud: f64,
    pub v2c: f64,
}

impl SvcDraw {
    pub fn total_s(&self, mode: SvcMode) -> f64 {
        let k = match mode {
            SvcMode::RoundTrip => 2.0,
            SvcMode::SingleV2c => 1.0,
        };
        (self.local + self.exe + self.cloud + k * self.v2c) / 1e3
    }
}

/// Breakdown of one DT-modelling latency draw, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtDraw {
    pub rsu: f64,
    pub i2c: f64,
}

impl DtDraw {
    pub fn total_s(&self) -> f64 {
        (self.rsu + self.i2c) / 1e3
    }
}

pub fn draw_dt(model: &LatencyModel, s: &mut LatencyStreams) -> DtDraw {
    DtDraw {
        rsu: model.rsu.sample_ms(&mut s.rsu),
        i2c: model.i2c.sample_ms(&mut s.i2c),
    }
}

pub fn draw_svc(model: &LatencyModel, s: &mut LatencyStreams) -> SvcDraw {
    SvcDraw {
        local: model.local.sample_ms(&mut s.local),
        exe: model.exe.sample_ms(&mut s.exe),
        cloud: model.cloud_monitor.sample_ms(&mut s.cloud_monitor)
            + model.cloud_plan.sample_ms(&mut s.cloud_plan),
        v2c: model.v2c.sample_ms(&mut s.v2c),
    }
}

/// DT-modelling latency `T_RSU + T_I2C`, seconds.
pub fn sample_dt_latency(model: &LatencyModel, s: &mut LatencyStreams) -> f64 {
    draw_dt(model, s).total_s()
}

/// Route service latency, seconds.
pub fn sample_service_latency(model: &LatencyModel, s: &mut LatencyStreams, mode: SvcMode) -> f64 {
    draw_svc(model, s).total_s(mode)
}

/// Whether a service latency fits in the time needed to cover the request
/// distance at free-flow speed.
pub fn check_deadline(t_svc_s: f64, v_free_mps: f64) -> bool {
    t_svc_s <= service_deadline(v_free_mps)
}

pub fn service_deadline(v_free_mps: f64) -> f64 {
    REQUEST_COEFF * v_free_mps
}

/// Bernoulli delivery draw.
pub fn deliver<R: Rng + ?Sized>(pdr: f64, rng: &mut R) -> bool {
    rng.random_bool(pdr.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiBudget {
    pub ssms_e2e_max_ms: f64,
    pub info_e2e_max_ms: f64,
    pub ssms_reliability_min: f64,
}

impl Default for KpiBudget {
    fn default() -> Self {
        KpiBudget {
            ssms_e2e_max_ms: 10.0,
            info_e2e_max_ms: 100.0,
            ssms_reliability_min: 0.95,
        }
    }
}

impl KpiBudget {
    pub fn service_deadline_s(&self, v_free_mps: f64) -> f64 {
        service_deadline(v_free_mps)
    }
}

/// Raw draws fed to [`kpi_report`]. Latencies in milliseconds.
#[derive(Debug, Clone, Default)]
pub struct KpiSamples {
    pub i2c_ms: Vec<f64>,
    pub v2c_ms: Vec<f64>,
    pub dt_ms: Vec<f64>,
    pub svc_ms: Vec<f64>,
    pub svc_single_ms: Vec<f64>,
    pub ssms_sent: u64,
    pub ssms_delivered: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowStats {
    pub n: usize,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
}

impl FlowStats {
    fn of(name: &str, xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Report(format!("no samples for {name}")));
        }
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &x in xs {
            lo = lo.min(x);
            hi = hi.max(x);
            sum += x;
        }
        Ok(FlowStats {
            n: xs.len(),
            max: hi,
            min: lo,
            mean: sum / xs.len() as f64,
        })
    }
}

/// One pass/fail line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpiCheck {
    pub name: String,
    pub observed: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpiReport {
    pub ssms_e2e: FlowStats,
    pub info_e2e: FlowStats,
    pub t_dt: FlowStats,
    pub t_svc: FlowStats,
    pub t_svc_single: Option<FlowStats>,
    pub ssms_pdr: Option<f64>,
    pub v_free_mps: f64,
    pub checks: Vec<KpiCheck>,
}

impl KpiReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&KpiCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,observed,limit,pass\n");
        for c in &self.checks {
            let _ = writeln!(s, "{},{},{},{}", c.name, c.observed, c.limit, c.pass);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, name: &str, f: &FlowStats| {
            let _ = writeln!(
                s,
                "  {name:<28} max {:>9.3} ms  min {:>9.3} ms  mean {:>9.3} ms  (n={})",
                f.max, f.min, f.mean, f.n
            );
        };
        s.push_str("latency\n");
        row(&mut s, "SSMS E2E (I2C)", &self.ssms_e2e);
        row(&mut s, "info sharing E2E (V2C)", &self.info_e2e);
        row(&mut s, "T_dt", &self.t_dt);
        row(&mut s, "T_svc (round trip V2C)", &self.t_svc);
        if let Some(f) = &self.t_svc_single {
            row(&mut s, "T_svc (single V2C)", f);
        }
        if let Some(p) = self.ssms_pdr {
            let _ = writeln!(s, "  SSMS delivery rate           {:.5}", p);
        }
        let _ = writeln!(
            s,
            "checks (v_free = {:.3} m/s, deadline {:.2} ms)",
            self.v_free_mps,
            service_deadline(self.v_free_mps) * 1e3
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "  [{}] {:<26} observed {:.5} limit {:.5}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.observed,
                c.limit
            );
        }
        s
    }
}

/// Summarises latency draws against the budget. `v_free_mps` sets the
/// service deadline.
pub fn kpi_report(samples: &KpiSamples, budget: &KpiBudget, v_free_mps: f64) -> Result<KpiReport> {
    let ssms_e2e = FlowStats::of("ssms_e2e", &samples.i2c_ms)?;
    let info_e2e = FlowStats::of("info_e2e", &samples.v2c_ms)?;
    let t_dt = FlowStats::of("t_dt", &samples.dt_ms)?;
    let t_svc = FlowStats::of("t_svc", &samples.svc_ms)?;
    let t_svc_single = if samples.svc_single_ms.is_empty() {
        None
    } else {
        Some(FlowStats::of("t_svc_single", &samples.svc_single_ms)?)
    };
    let deadline_ms = service_deadline(v_free_mps) * 1e3;

    let mut checks = vec![
        KpiCheck {
            name: "ssms_e2e_max_ms".into(),
            observed: ssms_e2e.max,
            limit: budget.ssms_e2e_max_ms,
            pass: ssms_e2e.max <= budget.ssms_e2e_max_ms,
        },
        KpiCheck {
            name: "info_e2e_max_ms".into(),
            observed: info_e2e.max,
            limit: budget.info_e2e_max_ms,
            pass: info_e2e.max <= budget.info_e2e_max_ms,
        },
        KpiCheck {
            name: "svc_deadline_ms".into(),
            observed: t_svc.max,
            limit: deadline_ms,
            pass: t_svc.max <= deadline_ms,
        },
    ];
    if let Some(f) = &t_svc_single {
        checks.push(KpiCheck {
            name: "svc_single_v2c_deadline_ms".into(),
            observed: f.max,
            limit: deadline_ms,
            pass: f.max <= deadline_ms,
        });
    }
    checks.push(KpiCheck {
        name: "dt_below_svc_ms".into(),
        observed: t_dt.max,
        limit: t_svc.min,
        pass: t_dt.max < t_svc.min,
    });
    let ssms_pdr = (samples.ssms_sent > 0)
        .then(|| samples.ssms_delivered as f64 / samples.ssms_sent as f64);
    if let Some(p) = ssms_pdr {
        checks.push(KpiCheck {
            name: "ssms_reliability".into(),
            observed: p,
            limit: budget.ssms_reliability_min,
            pass: p > budget.ssms_reliability_min,
        });
    }
    Ok(KpiReport {
        ssms_e2e,
        info_e2e,
        t_dt,
        t_svc,
        t_svc_single,
        ssms_pdr,
        v_free_mps,
        checks,
    })
}

/// Monte-Carlo draws of every flow plus `n` SSMS delivery trials.
pub fn collect_samples(model: &LatencyModel, seed: u64, n: usize) -> KpiSamples {
    let mut streams = LatencyStreams::new(seed);
    let mut out = KpiSamples {
        i2c_ms: Vec::with_capacity(n),
        v2c_ms: Vec::with_capacity(n),
        dt_ms: Vec::with_capacity(n),
        svc_ms: Vec::with_capacity(n),
        svc_single_ms: Vec::with_capacity(n),
        ..Default::default()
    };
    for _ in 0..n {
        let dt = draw_dt(model, &mut streams);
        let svc = draw_svc(model, &mut streams);
        out.i2c_ms.push(dt.i2c);
        out.dt_ms.push(dt.rsu + dt.i2c);
        out.v2c_ms.push(svc.v2c);
        out.svc_ms.push(svc.total_s(SvcMode::RoundTrip) * 1e3);
        out.svc_single_ms.push(svc.total_s(SvcMode::SingleV2c) * 1e3);
        out.ssms_sent += 1;
        if deliver(model.pdr_ssms, streams.ssms_rng()) {
            out.ssms_delivered += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const V20: f64 = 20.0 / 3.6;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn dt_latency_examples() {
        let mut s = LatencyStreams::new(1);
        assert!(close(sample_dt_latency(&LatencyModel::pinned_max(), &mut s), 0.15515, 1e-12));
        assert_eq!(sample_dt_latency(&LatencyModel::zero(), &mut s), 0.0);
        let mut m = LatencyModel::zero();
        m.rsu = FlowSpec::fixed(100.0);
        m.i2c = FlowSpec::fixed(2.0);
        assert!(close(sample_dt_latency(&m, &mut s), 0.102, 1e-12));
    }

    #[test]
    fn service_latency_examples() {
        let mut s = LatencyStreams::new(1);
        // 10.13 + 500.97 + 56.29 + 201.07 + 2 * 42.13
        let max = sample_service_latency(&LatencyModel::pinned_max(), &mut s, SvcMode::RoundTrip);
        assert!(close(max, 0.85272, 1e-9), "{max}");
        let single = sample_service_latency(&LatencyModel::pinned_max(), &mut s, SvcMode::SingleV2c);
        assert!(close(single, 0.81059, 1e-9), "{single}");
        // 2.56 + 500.97 + 42.72 + 173.27 + 2 * 20.16
        let min = sample_service_latency(&LatencyModel::pinned_min(), &mut s, SvcMode::RoundTrip);
        assert!(close(min, 0.75984, 1e-9), "{min}");
        assert_eq!(
            sample_service_latency(&LatencyModel::zero(), &mut s, SvcMode::RoundTrip),
            0.0
        );
    }

    #[test]
    fn deadline_examples() {
        assert!(check_deadline(0.81059, 5.556));
        assert!(!check_deadline(0.95, 5.556));
        assert!(check_deadline(0.0, 0.1));
        assert!(close(service_deadline(V20) * 1e3, 911.11, 0.01));
    }

    #[test]
    fn delivery_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| deliver(1.0, &mut rng)));
        assert!((0..1000).all(|_| !deliver(0.0, &mut rng)));
    }

    #[test]
    fn delivery_rate_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| deliver(0.9953, &mut rng)).count();
        assert!(close(hits as f64 / n as f64, 0.9953, 0.002));
    }

    #[test]
    fn measured_model_report_passes() {
        let samples = collect_samples(&LatencyModel::measured(), 5, 20_000);
        let r = kpi_report(&samples, &KpiBudget::default(), V20).unwrap();
        assert!(r.ssms_e2e.max <= 1.74 && r.ssms_e2e.min >= 1.10);
        assert!(r.info_e2e.max <= 42.13);
        assert!(r.all_pass(), "{}", r.to_text());
    }

    #[test]
    fn slow_v2c_fails_info_budget() {
        let mut m = LatencyModel::measured();
        m.v2c = FlowSpec::fixed(150.0);
        let r = kpi_report(&collect_samples(&m, 5, 100), &KpiBudget::default(), V20).unwrap();
        assert!(!r.check("info_e2e_max_ms").unwrap().pass);
    }

    #[test]
    fn empty_samples_is_report_error() {
        assert!(matches!(
            kpi_report(&KpiSamples::default(), &KpiBudget::default(), V20),
            Err(Error::Report(_))
        ));
    }

    #[test]
    fn triangular_matches_requested_mean() {
        let f = FlowSpec {
            min_ms: 0.0,
            max_ms: 10.0,
            dist: Distribution::Triangular,
            mean_ms: Some(4.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = f.sample_ms(&mut rng);
            assert!((0.0..=10.0).contains(&x));
            sum += x;
        }
        assert!(close(sum / n as f64, 4.0, 0.03));
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut m = LatencyModel::measured();
        m.v2c = FlowSpec::uniform(5.0, 1.0);
        assert!(m.validate().is_err());
        let mut m = LatencyModel::measured();
        m.pdr_info = 1.5;
        assert!(m.validate().is_err());
        assert!(LatencyModel::measured().validate().is_ok());
    }
}
