use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::comms::{LatencyModel, SvcMode};
use crate::error::{Error, Result};
use crate::jsonpos;
use crate::network::{generate_grid_network, GridSpec, LinkId, NodeId, TrafficNetwork};
use crate::twin::EventThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// Stationary wreck that stops all traffic on one link.
    Accident,
    /// Crowd at an intersection; traffic cannot enter the node.
    Gathering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventLocation {
    Link(LinkId),
    Node(NodeId),
}

/// Ground-truth event, active for steps `onset_step <= k < end_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    pub kind: EventKind,
    pub location: EventLocation,
    pub onset_step: u64,
    pub end_step: Option<u64>,
    /// Pedestrian density reported at a gathering, persons per square metre.
    pub density: f64,
}

impl ScheduledEvent {
    pub fn is_active(&self, step: u64) -> bool {
        step >= self.onset_step && self.end_step.is_none_or(|e| step < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEvents {
    pub count: usize,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<EventKind>,
    /// Onset drawn uniformly in `[onset_min_s, onset_max_s]`.
    #[serde(default)]
    pub onset_min_s: f64,
    /// Defaults to half the simulated horizon.
    #[serde(default)]
    pub onset_max_s: Option<f64>,
    /// Event lifetime; `None` keeps events active to the end of the run.
    #[serde(default)]
    pub duration_s: Option<f64>,
}

fn default_kinds() -> Vec<EventKind> {
    vec![EventKind::Accident, EventKind::Gathering]
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPlan {
    Fixed(Vec<ScheduledEvent>),
    Random(RandomEvents),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsuSpec {
    pub node: NodeId,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSpec {
    #[serde(default)]
    pub rsus: Vec<RsuSpec>,
    /// One virtual source observing every node and link.
    #[serde(default)]
    pub full_coverage: bool,
    /// CAV users upload what they see on their current link.
    #[serde(default = "yes")]
    pub cav_sensing: bool,
}

fn yes() -> bool {
    true
}

impl Default for SensingSpec {
    fn default() -> Self {
        SensingSpec {
            rsus: Vec::new(),
            full_coverage: false,
            cav_sensing: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnSpec {
    /// Fraction of the horizon over which the mean arrival rate spreads `n_vel`.
    #[serde(default = "default_horizon")]
    pub horizon_frac: f64,
}

fn default_horizon() -> f64 {
    0.8
}

impl Default for SpawnSpec {
    fn default() -> Self {
        SpawnSpec {
            horizon_frac: default_horizon(),
        }
    }
}

/// Fully resolved scenario.
#[derive(Debug, Clone)]
pub struct SimulationScenario {
    pub dt_s: f64,
    pub t_sim_s: f64,
    pub seed: u64,
    pub network: Arc<TrafficNetwork>,
    pub n_vel: usize,
    pub p_user: f64,
    pub spawn: SpawnSpec,
    pub events: EventPlan,
    pub thresholds: EventThresholds,
    pub latency: LatencyModel,
    pub svc_mode: SvcMode,
    pub sensing: SensingSpec,
}

impl SimulationScenario {
    /// Scenario with the experiment defaults on `network`: 1 s steps over
    /// 600 s, 300 vehicles, one in six a CAV user, no events, no RSUs.
    pub fn with_network(network: Arc<TrafficNetwork>) -> Self {
        SimulationScenario {
            dt_s: 1.0,
            t_sim_s: 600.0,
            seed: 1,
            network,
            n_vel: 300,
            p_user: 0.167,
            spawn: SpawnSpec::default(),
            events: EventPlan::Fixed(Vec::new()),
            thresholds: EventThresholds::default(),
            latency: LatencyModel::measured(),
            svc_mode: SvcMode::RoundTrip,
            sensing: SensingSpec::default(),
        }
    }

    pub fn steps(&self) -> u64 {
        (self.t_sim_s / self.dt_s).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(Error::config(format!("dt_s must be positive, got {}", self.dt_s)));
        }
        if !(self.t_sim_s > 0.0) {
            return Err(Error::config(format!("t_sim_s must be positive, got {}", self.t_sim_s)));
        }
        let ratio = self.t_sim_s / self.dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(format!(
                "t_sim_s ({}) must be a multiple of dt_s ({})",
                self.t_sim_s, self.dt_s
            )));
        }
        if !(0.0..=1.0).contains(&self.p_user) {
            return Err(Error::config(format!("p_user must be in [0, 1], got {}", self.p_user)));
        }
        if self.network.node_count() < 2 {
            return Err(Error::config("network needs at least two nodes"));
        }
        if !(self.spawn.horizon_frac > 0.0 && self.spawn.horizon_frac <= 1.0) {
            return Err(Error::config("spawn.horizon_frac must be in (0, 1]"));
        }
        self.thresholds.validate()?;
        self.latency.validate()?;
        for r in &self.sensing.rsus {
            if !self.network.contains(r.node) {
                return Err(Error::config(format!("RSU at unknown node {}", r.node)));
            }
            if !(r.radius_m >= 0.0) {
                return Err(Error::config("RSU radius must be non-negative"));
            }
        }
        match &self.events {
            EventPlan::Fixed(evs) => {
                for e in evs {
                    match e.location {
                        EventLocation::Link(l) if l.0 >= self.network.link_count() => {
                            return Err(Error::config("event on unknown link"))
                        }
                        EventLocation::Node(n) if !self.network.contains(n) => {
                            return Err(Error::config(format!("event at unknown node {n}")))
                        }
                        _ => {}
                    }
                }
            }
            EventPlan::Random(r) => {
                if r.kinds.is_empty() && r.count > 0 {
                    return Err(Error::config("events_random.kinds is empty"));
                }
                if r.count > self.network.link_count().min(self.network.node_count()) {
                    return Err(Error::config("events_random.count exceeds available locations"));
                }
            }
        }
        Ok(())
    }

    /// Loads a scenario file; `network_file` resolves relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, &base).map_err(|e| e.with_path(path))
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let doc: ScenarioDoc = serde_json::from_str(text)
            .map_err(|e| Error::config_at(Some(e.line()), e.to_string()))?;
        let network = match (&doc.network_file, &doc.network_grid) {
            (Some(f), None) => {
                let p = base_dir.join(f);
                Arc::new(TrafficNetwork::load(&p)?)
            }
            (None, Some(g)) => Arc::new(generate_grid_network(g)?),
            _ => {
                return Err(Error::config(
                    "exactly one of network_file or network_grid is required",
                ))
            }
        };
        let dt = doc.sim.dt_s;
        let events = match (doc.events, doc.events_random) {
            (Some(evs), None) => {
                let mut out = Vec::with_capacity(evs.len());
                for (i, e) in evs.into_iter().enumerate() {
                    let at = || jsonpos::array_element_line(text, "events", i);
                    let location = match (e.kind, e.link, e.node) {
                        (EventKind::Accident, Some((a, b)), None) => EventLocation::Link(
                            network.link_between(a, b).ok_or_else(|| {
                                Error::config_at(at(), format!("accident on missing link {a}->{b}"))
                            })?,
                        ),
                        (EventKind::Gathering, None, Some(n)) if network.contains(n) => {
                            EventLocation::Node(n)
                        }
                        (EventKind::Gathering, None, Some(n)) => {
                            return Err(Error::config_at(at(), format!("gathering at unknown node {n}")))
                        }
                        _ => {
                            return Err(Error::config_at(
                                at(),
                                "accidents need `link: [from, to]`, gatherings need `node`",
                            ))
                        }
                    };
                    if e.end_step.is_some_and(|end| end <= e.onset_step) {
                        return Err(Error::config_at(at(), "end_step must follow onset_step"));
                    }
                    out.push(ScheduledEvent {
                        kind: e.kind,
                        location,
                        onset_step: e.onset_step,
                        end_step: e.end_step,
                        density: e.density.unwrap_or(DEFAULT_GATHERING_DENSITY),
                    });
                }
                EventPlan::Fixed(out)
            }
            (None, Some(r)) => EventPlan::Random(r),
            (None, None) => EventPlan::Fixed(Vec::new()),
            (Some(_), Some(_)) => {
                return Err(Error::config("give either events or events_random, not both"))
            }
        };
        let sc = SimulationScenario {
            dt_s: dt,
            t_sim_s: doc.sim.t_sim_s,
            seed: doc.sim.seed,
            network,
            n_vel: doc.traffic.n_vel,
            p_user: doc.traffic.p_user,
            spawn: doc.traffic.spawn.unwrap_or_default(),
            events,
            thresholds: doc.thresholds.unwrap_or_default(),
            latency: doc.latency.unwrap_or_default(),
            svc_mode: doc.svc_mode.unwrap_or_default(),
            sensing: doc.sensing.unwrap_or_default(),
        };
        sc.validate()?;
        Ok(sc)
    }
}

pub const DEFAULT_GATHERING_DENSITY: f64 = 1.0;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    network_file: Option<PathBuf>,
    network_grid: Option<GridSpec>,
    sim: SimDoc,
    traffic: TrafficDoc,
    events: Option<Vec<EventDoc>>,
    events_random: Option<RandomEvents>,
    sensing: Option<SensingSpec>,
    thresholds: Option<EventThresholds>,
    latency: Option<LatencyModel>,
    svc_mode: Option<SvcMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimDoc {
    dt_s: f64,
    t_sim_s: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficDoc {
    n_vel: usize,
    p_user: f64,
    spawn: Option<SpawnSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventDoc {
    kind: EventKind,
    #[serde(default)]
    link: Option<(NodeId, NodeId)>,
    #[serde(default)]
    node: Option<NodeId>,
    onset_step: u64,
    #[serde(default)]
    end_step: Option<u64>,
    #[serde(default)]
    density: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const NET: &str = r#"{"nodes":[{"id":1,"x_m":0,"y_m":0},{"id":2,"x_m":100,"y_m":0}],
        "links":[{"from":1,"to":2,"length_m":100,"v_free_mps":10,"k_max_veh_per_m":0.2},
                 {"from":2,"to":1,"length_m":100,"v_free_mps":10,"k_max_veh_per_m":0.2}]}"#;

    fn dir_with_net() -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("net.json"), NET).unwrap();
        d
    }

    #[test]
    fn parses_minimal_scenario() {
        let d = dir_with_net();
        let text = r#"{"network_file":"net.json","sim":{"dt_s":1,"t_sim_s":60,"seed":3},
            "traffic":{"n_vel":5,"p_user":0.5},
            "events":[{"kind":"accident","link":[1,2],"onset_step":10}]}"#;
        let sc = SimulationScenario::from_json_str(text, d.path()).unwrap();
        assert_eq!(sc.steps(), 60);
        assert_eq!(sc.seed, 3);
        match &sc.events {
            EventPlan::Fixed(e) => {
                assert_eq!(e[0].location, EventLocation::Link(LinkId(0)));
                assert!(e[0].is_active(10) && !e[0].is_active(9));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_event_with_line() {
        let d = dir_with_net();
        let text = "{\"network_file\":\"net.json\",\"sim\":{\"dt_s\":1,\"t_sim_s\":60},\n\"traffic\":{\"n_vel\":5,\"p_user\":0.5},\n\"events\":[\n{\"kind\":\"gathering\",\"node\":1,\"onset_step\":1},\n{\"kind\":\"accident\",\"link\":[1,3],\"onset_step\":1}]}";
        match SimulationScenario::from_json_str(text, d.path()) {
            Err(Error::Config { line, .. }) => assert_eq!(line, Some(5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        let d = dir_with_net();
        for bad in [
            r#""sim":{"dt_s":0.7,"t_sim_s":60},"traffic":{"n_vel":5,"p_user":0.5}"#,
            r#""sim":{"dt_s":1,"t_sim_s":60},"traffic":{"n_vel":5,"p_user":1.5}"#,
            r#""sim":{"dt_s":0,"t_sim_s":60},"traffic":{"n_vel":5,"p_user":0.5}"#,
        ] {
            let text = format!("{{\"network_file\":\"net.json\",{bad}}}");
            assert!(SimulationScenario::from_json_str(&text, d.path()).is_err(), "{bad}");
        }
        let missing = r#"{"network_file":"nope.json","sim":{"dt_s":1,"t_sim_s":60},"traffic":{"n_vel":5,"p_user":0.5}}"#;
        assert!(matches!(
            SimulationScenario::from_json_str(missing, d.path()),
            Err(Error::Io { .. })
        ));
    }
}
