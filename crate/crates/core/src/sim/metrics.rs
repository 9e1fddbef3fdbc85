use std::fmt::Write as _;

use serde::Serialize;

/// Aggregates for one vehicle class (or all vehicles).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassMetrics {
    pub spawned: usize,
    pub completed: usize,
    /// Over completed vehicles.
    pub mean_travel_time_s: Option<f64>,
    /// Over spawned vehicles, including those still en route.
    pub mean_encounters: Option<f64>,
    /// Share of spawned vehicles ever stopped by an event.
    pub blocking_probability: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ClassAccumulator {
    spawned: usize,
    completed: usize,
    travel_time_sum: f64,
    encounters: usize,
    blocked: usize,
}

impl ClassAccumulator {
    pub(crate) fn add(&mut self, travel_time_s: Option<f64>, encounters: usize, blocked: bool) {
        self.spawned += 1;
        if let Some(t) = travel_time_s {
            self.completed += 1;
            self.travel_time_sum += t;
        }
        self.encounters += encounters;
        self.blocked += usize::from(blocked);
    }

    pub(crate) fn finish(&self) -> ClassMetrics {
        let per_spawned = |x: usize| (self.spawned > 0).then(|| x as f64 / self.spawned as f64);
        ClassMetrics {
            spawned: self.spawned,
            completed: self.completed,
            mean_travel_time_s: (self.completed > 0)
                .then(|| self.travel_time_sum / self.completed as f64),
            mean_encounters: per_spawned(self.encounters),
            blocking_probability: per_spawned(self.blocked),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsSummary {
    pub seed: u64,
    pub p_user: f64,
    pub events: usize,
    pub overall: ClassMetrics,
    pub cav: ClassMetrics,
    pub unconnected: ClassMetrics,
    pub routes_issued: usize,
    pub routes_deferred: usize,
    pub info_dropped: usize,
    pub uploads_dropped: usize,
}

pub const METRICS_HEADER: &str =
    "seed,mean_tt_all_s,mean_tt_cav_s,mean_tt_unc_s,mean_enc_all,mean_enc_cav,mean_enc_unc,blocking_all,completed";

pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v}"),
        None => "NaN".to_string(),
    }
}

impl MetricsSummary {
    /// Data row matching [`METRICS_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.seed,
            fmt_opt(self.overall.mean_travel_time_s),
            fmt_opt(self.cav.mean_travel_time_s),
            fmt_opt(self.unconnected.mean_travel_time_s),
            fmt_opt(self.overall.mean_encounters),
            fmt_opt(self.cav.mean_encounters),
            fmt_opt(self.unconnected.mean_encounters),
            fmt_opt(self.overall.blocking_probability),
            self.overall.completed,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{METRICS_HEADER}");
        let _ = writeln!(s, "{}", self.csv_row());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_means() {
        let mut a = ClassAccumulator::default();
        a.add(Some(10.0), 1, true);
        a.add(Some(20.0), 0, false);
        a.add(None, 2, true);
        let m = a.finish();
        assert_eq!(m.spawned, 3);
        assert_eq!(m.completed, 2);
        assert_eq!(m.mean_travel_time_s, Some(15.0));
        assert_eq!(m.mean_encounters, Some(1.0));
        assert_eq!(m.blocking_probability, Some(2.0 / 3.0));
        assert_eq!(ClassAccumulator::default().finish().mean_travel_time_s, None);
    }

    #[test]
    fn csv_has_nine_columns() {
        let m = MetricsSummary::default();
        assert_eq!(METRICS_HEADER.split(',').count(), 9);
        assert_eq!(m.csv_row().split(',').count(), 9);
    }
}
