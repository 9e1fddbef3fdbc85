//! Cloud-side traffic twin.
//!
//! RSUs and CAVs upload per-element observations; delivered uploads overwrite
//! the last known values, dropped uploads leave stale values in place. Event
//! detection runs over the twin only, never over simulator ground truth.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nav::EventSets;
use crate::network::{LinkId, NodeId, TrafficNetwork};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Rsu,
    Cav,
}

/// Sources order RSUs before CAVs, then by ascending id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceId {
    pub kind: SourceKind,
    pub id: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coverage {
    pub nodes: BTreeSet<NodeId>,
    pub links: BTreeSet<LinkId>,
}

impl Coverage {
    /// Nodes within `radius_m` of `node`, and links whose midpoint is.
    pub fn rsu(net: &TrafficNetwork, node: NodeId, radius_m: f64) -> Self {
        let c = net.node(node);
        let nodes = net
            .nodes()
            .iter()
            .filter(|n| ((n.x_m - c.x_m).powi(2) + (n.y_m - c.y_m).powi(2)).sqrt() <= radius_m)
            .map(|n| n.id)
            .collect();
        let links = net
            .link_ids()
            .filter(|&l| net.link_midpoint_distance(l, c.x_m, c.y_m) <= radius_m)
            .collect();
        Coverage { nodes, links }
    }

    /// A CAV sees the link it drives on and the intersection ahead.
    pub fn cav(net: &TrafficNetwork, link: LinkId) -> Self {
        Coverage {
            nodes: [net.link(link).to].into(),
            links: [link].into(),
        }
    }

    pub fn full(net: &TrafficNetwork) -> Self {
        Coverage {
            nodes: net.node_ids().collect(),
            links: net.link_ids().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingSource {
    pub id: SourceId,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkObservation {
    pub link: LinkId,
    pub volume: f64,
    /// Slowest vehicle speed seen on the link; `None` when nothing was measured.
    pub min_speed_mps: Option<f64>,
    /// Vehicles or a stationary obstacle present.
    pub occupied: bool,
    /// Event flag raised (or cleared) by the source's own edge detection.
    pub event: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeObservation {
    pub node: NodeId,
    pub ped_density: Option<f64>,
    pub event: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time_s: f64,
    pub links: Vec<LinkObservation>,
    pub nodes: Vec<NodeObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventThresholds {
    /// Pedestrian density, persons per square metre.
    pub d_thre: f64,
    /// Speed below which traffic counts as stopped, m/s.
    pub v_thre: f64,
    /// Seconds of continuous stopped traffic needed to infer an accident.
    pub accident_window_s: f64,
}

impl Default for EventThresholds {
    fn default() -> Self {
        EventThresholds {
            d_thre: 0.5,
            v_thre: 0.5,
            accident_window_s: 10.0,
        }
    }
}

impl EventThresholds {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("d_thre", self.d_thre),
            ("v_thre", self.v_thre),
            ("accident_window_s", self.accident_window_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("threshold {n} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SpeedSample {
    t: f64,
    speed: Option<f64>,
    occupied: bool,
}

/// Why an element sits in an event set; decides what clears it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventReason {
    Gathering,
    StoppedTraffic,
    Reported,
}

#[derive(Debug, Clone)]
pub struct TwinState {
    volumes: Vec<Option<f64>>,
    ped_density: Vec<Option<f64>>,
    speed_history: Vec<VecDeque<SpeedSample>>,
    link_updated: Vec<Option<f64>>,
    node_updated: Vec<Option<f64>>,
    n_eve: BTreeMap<NodeId, EventReason>,
    l_eve: BTreeMap<LinkId, EventReason>,
    source_updated: BTreeMap<SourceId, f64>,
    in_links: Vec<Vec<LinkId>>,
    link_ends: Vec<(NodeId, NodeId)>,
    retention_s: f64,
    now: f64,
}

impl TwinState {
    /// `retention_s` bounds the speed history and must cover the longest
    /// accident window the state will be queried with.
    pub fn new(net: &TrafficNetwork, retention_s: f64) -> Self {
        TwinState {
            volumes: vec![None; net.link_count()],
            ped_density: vec![None; net.node_count()],
            speed_history: vec![VecDeque::new(); net.link_count()],
            link_updated: vec![None; net.link_count()],
            node_updated: vec![None; net.node_count()],
            n_eve: BTreeMap::new(),
            l_eve: BTreeMap::new(),
            source_updated: BTreeMap::new(),
            in_links: net.node_ids().map(|n| net.in_links(n).to_vec()).collect(),
            link_ends: net.links().iter().map(|l| (l.from, l.to)).collect(),
            retention_s,
            now: 0.0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Moves the twin clock forward; never backwards.
    pub fn advance_clock(&mut self, t: f64) {
        self.now = self.now.max(t);
    }

    pub fn volume(&self, l: LinkId) -> Option<f64> {
        self.volumes[l.0]
    }

    pub fn ped_density(&self, n: NodeId) -> Option<f64> {
        self.ped_density[n.index()]
    }

    pub fn source_timestamp(&self, s: SourceId) -> Option<f64> {
        self.source_updated.get(&s).copied()
    }

    pub fn link_timestamp(&self, l: LinkId) -> Option<f64> {
        self.link_updated[l.0]
    }

    pub fn node_events(&self) -> BTreeSet<NodeId> {
        self.n_eve.keys().copied().collect()
    }

    pub fn link_events(&self) -> BTreeSet<LinkId> {
        self.l_eve.keys().copied().collect()
    }

    pub fn node_event_reason(&self, n: NodeId) -> Option<EventReason> {
        self.n_eve.get(&n).copied()
    }

    pub fn link_event_reason(&self, l: LinkId) -> Option<EventReason> {
        self.l_eve.get(&l).copied()
    }

    /// Event sets in planner form.
    pub fn event_sets(&self) -> EventSets {
        EventSets {
            nodes: self.node_events(),
            links: self.l_eve.keys().map(|l| self.link_ends[l.0]).collect(),
        }
    }

    /// Stopped-traffic streak start for `l`: the earliest sample time from
    /// which every later sample was occupied and below `v_thre`.
    fn slow_since(&self, l: LinkId, v_thre: f64) -> Option<f64> {
        let mut since = None;
        for s in self.speed_history[l.0].iter().rev() {
            let slow = s.occupied && s.speed.is_some_and(|v| v < v_thre);
            if !slow {
                break;
            }
            since = Some(s.t);
        }
        since
    }

    fn link_stopped(&self, l: LinkId, th: &EventThresholds) -> bool {
        self.slow_since(l, th.v_thre)
            .is_some_and(|t0| t0 <= self.now - th.accident_window_s + TIME_EPS)
    }

    /// Adds detected elements to the event sets, keeping an existing reason.
    pub fn merge_events(
        &mut self,
        nodes: impl IntoIterator<Item = (NodeId, EventReason)>,
        links: impl IntoIterator<Item = (LinkId, EventReason)>,
    ) {
        for (n, r) in nodes {
            self.n_eve.entry(n).or_insert(r);
        }
        for (l, r) in links {
            self.l_eve.entry(l).or_insert(r);
        }
    }

    /// Empties both event sets; measurements are kept.
    pub fn clear_events(&mut self) {
        self.n_eve.clear();
        self.l_eve.clear();
    }
}

/// Applies one upload. Observations outside the source's coverage are a
/// contract violation and leave the state untouched.
pub fn ingest_observation(
    state: &mut TwinState,
    source: &SensingSource,
    obs: &Observation,
    delivered: bool,
) -> Result<()> {
    for lo in &obs.links {
        if !source.coverage.links.contains(&lo.link) {
            return Err(Error::Contract(format!(
                "{:?} {} reported link {} outside its coverage",
                source.id.kind, source.id.id, lo.link.0
            )));
        }
        if !(lo.volume >= 0.0) {
            return Err(Error::Contract(format!("negative volume on link {}", lo.link.0)));
        }
    }
    for no in &obs.nodes {
        if !source.coverage.nodes.contains(&no.node) {
            return Err(Error::Contract(format!(
                "{:?} {} reported node {} outside its coverage",
                source.id.kind, source.id.id, no.node
            )));
        }
        if no.ped_density.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::Contract(format!("negative density at node {}", no.node)));
        }
    }
    if !delivered {
        return Ok(());
    }

    let t = obs.time_s;
    state.advance_clock(t);
    for lo in &obs.links {
        let i = lo.link.0;
        state.volumes[i] = Some(lo.volume);
        bump(&mut state.link_updated[i], t);
        let h = &mut state.speed_history[i];
        // same-step overwrite: a later source replaces the earlier sample
        if h.back().is_some_and(|s| (s.t - t).abs() < TIME_EPS) {
            h.pop_back();
        }
        h.push_back(SpeedSample {
            t,
            speed: lo.min_speed_mps,
            occupied: lo.occupied,
        });
        while h.front().is_some_and(|s| s.t < t - state.retention_s - TIME_EPS) {
            h.pop_front();
        }
        match lo.event {
            Some(true) => {
                state.l_eve.insert(lo.link, EventReason::Reported);
            }
            Some(false) => {
                state.l_eve.remove(&lo.link);
            }
            None => {}
        }
    }
    for no in &obs.nodes {
        let i = no.node.index();
        if no.ped_density.is_some() {
            state.ped_density[i] = no.ped_density;
        }
        bump(&mut state.node_updated[i], t);
        match no.event {
            Some(true) => {
                state.n_eve.insert(no.node, EventReason::Reported);
            }
            Some(false) => {
                state.n_eve.remove(&no.node);
            }
            None => {}
        }
    }
    let e = state.source_updated.entry(source.id).or_insert(t);
    *e = e.max(t);
    Ok(())
}

fn bump(slot: &mut Option<f64>, t: f64) {
    *slot = Some(slot.map_or(t, |old| old.max(t)));
}

/// Nodes whose last known pedestrian density exceeds `d_thre`.
pub fn detect_pedestrian_gathering(state: &TwinState, th: &EventThresholds) -> BTreeSet<NodeId> {
    state
        .ped_density
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_some_and(|d| d > th.d_thre))
        .map(|(i, _)| NodeId::from_index(i))
        .collect()
}

/// Links whose traffic stayed occupied and below `v_thre` for the whole
/// accident window, and nodes all of whose incoming links did.
pub fn detect_accident(state: &TwinState, th: &EventThresholds) -> (BTreeSet<NodeId>, BTreeSet<LinkId>) {
    let links: BTreeSet<LinkId> = (0..state.volumes.len())
        .map(LinkId)
        .filter(|&l| state.link_stopped(l, th))
        .collect();
    let nodes = state
        .in_links
        .iter()
        .enumerate()
        .filter(|(_, ins)| !ins.is_empty() && ins.iter().all(|l| links.contains(l)))
        .map(|(i, _)| NodeId::from_index(i))
        .collect();
    (nodes, links)
}

/// Runs both detectors, merges new detections and drops elements whose
/// latest delivered observation no longer meets their criterion.
pub fn update_events(state: &mut TwinState, th: &EventThresholds) {
    let gatherings = detect_pedestrian_gathering(state, th);
    let (acc_nodes, acc_links) = detect_accident(state, th);

    let stale_nodes: Vec<NodeId> = state
        .n_eve
        .iter()
        .filter(|(n, r)| match r {
            EventReason::Gathering => !gatherings.contains(n) && !acc_nodes.contains(n),
            EventReason::StoppedTraffic => !acc_nodes.contains(n) && !gatherings.contains(n),
            EventReason::Reported => false,
        })
        .map(|(n, _)| *n)
        .collect();
    for n in stale_nodes {
        state.n_eve.remove(&n);
    }
    // A flagged link clears on the first delivered sample that is not stopped.
    let stale_links: Vec<LinkId> = state
        .l_eve
        .iter()
        .filter(|(l, r)| {
            **r == EventReason::StoppedTraffic
                && state.speed_history[l.0].back().is_some_and(|s| {
                    !(s.occupied && s.speed.is_some_and(|v| v < th.v_thre))
                })
        })
        .map(|(l, _)| *l)
        .collect();
    for l in stale_links {
        state.l_eve.remove(&l);
    }

    state.merge_events(
        gatherings
            .into_iter()
            .map(|n| (n, EventReason::Gathering))
            .chain(acc_nodes.into_iter().map(|n| (n, EventReason::StoppedTraffic))),
        acc_links.into_iter().map(|l| (l, EventReason::StoppedTraffic)),
    );
}

/// Last known volume per link, zero where never observed.
pub fn twin_volumes(state: &TwinState, net: &TrafficNetwork) -> Vec<f64> {
    debug_assert_eq!(state.volumes.len(), net.link_count());
    state.volumes.iter().map(|v| v.unwrap_or(0.0)).collect()
}

/// One line of the twin journal.
#[derive(Debug, Clone, Serialize)]
pub struct TwinSnapshot {
    pub step: u64,
    pub t_s: f64,
    pub volumes: Vec<f64>,
    pub densities: Vec<Option<f64>>,
    pub n_eve: Vec<NodeId>,
    pub l_eve: Vec<(NodeId, NodeId)>,
}

impl TwinSnapshot {
    pub fn capture(state: &TwinState, net: &TrafficNetwork, step: u64) -> Self {
        let ev = state.event_sets();
        TwinSnapshot {
            step,
            t_s: state.now,
            volumes: twin_volumes(state, net),
            densities: state.ped_density.clone(),
            n_eve: ev.nodes.into_iter().collect(),
            l_eve: ev.links.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Link, Node};

    fn net() -> TrafficNetwork {
        let nodes = (1..=3)
            .map(|i| Node {
                id: NodeId(i),
                x_m: 100.0 * (i - 1) as f64,
                y_m: 0.0,
            })
            .collect();
        let mk = |a, b| Link {
            from: NodeId(a),
            to: NodeId(b),
            length_m: 100.0,
            v_free_mps: 10.0,
            k_max_veh_per_m: 0.2,
        };
        TrafficNetwork::new(nodes, vec![mk(1, 2), mk(2, 3), mk(3, 2)]).unwrap()
    }

    fn rsu(id: usize, cov: Coverage) -> SensingSource {
        SensingSource {
            id: SourceId {
                kind: SourceKind::Rsu,
                id,
            },
            coverage: cov,
        }
    }

    fn link_obs(t: f64, link: usize, volume: f64, speed: Option<f64>) -> Observation {
        Observation {
            time_s: t,
            links: vec![LinkObservation {
                link: LinkId(link),
                volume,
                min_speed_mps: speed,
                occupied: volume > 0.0,
                event: None,
            }],
            nodes: vec![],
        }
    }

    #[test]
    fn delivered_observation_overwrites() {
        let n = net();
        let mut st = TwinState::new(&n, 20.0);
        let src = rsu(1, Coverage::full(&n));
        ingest_observation(&mut st, &src, &link_obs(1.0, 0, 3.0, Some(5.0)), true).unwrap();
        assert_eq!(twin_volumes(&st, &n), vec![3.0, 0.0, 0.0]);
        assert_eq!(st.source_timestamp(src.id), Some(1.0));
    }

    #[test]
    fn dropped_observation_leaves_state_unchanged() {
        let n = net();
        let mut st = TwinState::new(&n, 20.0);
        let src = rsu(1, Coverage::full(&n));
        ingest_observation(&mut st, &src, &link_obs(1.0, 0, 3.0, Some(5.0)), false).unwrap();
        assert_eq!(twin_volumes(&st, &n), vec![0.0; 3]);
        assert_eq!(st.source_timestamp(src.id), None);

        ingest_observation(&mut st, &src, &link_obs(1.0, 0, 3.0, None), true).unwrap();
        ingest_observation(&mut st, &src, &link_obs(2.0, 0, 9.0, None), false).unwrap();
        ingest_observation(&mut st, &src, &link_obs(2.0, 1, 2.0, None), true).unwrap();
        assert_eq!(twin_volumes(&st, &n), vec![3.0, 2.0, 0.0]);
    }

    #[test]
    fn cav_overwrites_rsu_value() {
        let n = net();
        let mut st = TwinState::new(&n, 20.0);
        let r = rsu(1, Coverage::full(&n));
        let cav = SensingSource {
            id: SourceId {
                kind: SourceKind::Cav,
                id: 7,
            },
            coverage: Coverage::cav(&n, LinkId(1)),
        };
        ingest_observation(&mut st, &r, &link_obs(1.0, 1, 4.0, None), true).unwrap();
        ingest_observation(&mut st, &cav, &link_obs(1.0, 1, 1.0, None), true).unwrap();
        assert_eq!(st.volume(LinkId(1)), Some(1.0));
        assert!(SourceId { kind: SourceKind::Rsu, id: 9 } < cav.id);
    }

    #[test]
    fn uncovered_element_is_contract_violation() {
        let n = net();
        let mut st = TwinState::new(&n, 20.0);
        let cov = Coverage {
            nodes: BTreeSet::new(),
            links: [LinkId(0)].into(),
        };
        let src = rsu(1, cov);
        let err = ingest_observation(&mut st, &src, &link_obs(1.0, 2, 1.0, None), true);
        assert!(matches!(err, Err(Error::Contract(_))));
        assert_eq!(st.volume(LinkId(2)), None);
    }

    #[test]
    fn gathering_threshold_is_strict() {
        let n = net();
        let th = EventThresholds::default();
        let mut st = TwinState::new(&n, 20.0);
        assert!(detect_pedestrian_gathering(&st, &th).is_empty());
        let src = rsu(1, Coverage::full(&n));
        let dens = |d| Observation {
            time_s: 1.0,
            links: vec![],
            nodes: vec![NodeObservation {
                node: NodeId(3),
                ped_density: Some(d),
                event: None,
            }],
        };
        ingest_observation(&mut st, &src, &dens(0.5), true).unwrap();
        assert!(detect_pedestrian_gathering(&st, &th).is_empty());
        ingest_observation(&mut st, &src, &dens(0.6), true).unwrap();
        assert_eq!(detect_pedestrian_gathering(&st, &th), [NodeId(3)].into());
    }

    fn feed(st: &mut TwinState, src: &SensingSource, samples: &[(f64, f64, Option<f64>)]) {
        for &(t, vol, sp) in samples {
            ingest_observation(st, src, &link_obs(t, 0, vol, sp), true).unwrap();
        }
    }

    #[test]
    fn accident_requires_consistent_slowness() {
        let n = net();
        let th = EventThresholds::default();
        let src = rsu(1, Coverage::full(&n));

        let mut st = TwinState::new(&n, 20.0);
        feed(&mut st, &src, &[(0.0, 2.0, Some(0.1)), (5.0, 2.0, Some(0.2)), (10.0, 2.0, Some(0.1))]);
        assert_eq!(detect_accident(&st, &th).1, [LinkId(0)].into());

        let mut st = TwinState::new(&n, 20.0);
        feed(&mut st, &src, &[(0.0, 2.0, Some(0.1)), (5.0, 2.0, Some(3.0)), (10.0, 2.0, Some(0.1))]);
        assert!(detect_accident(&st, &th).1.is_empty());

        let mut st = TwinState::new(&n, 20.0);
        feed(&mut st, &src, &[(0.0, 0.0, Some(0.0)), (5.0, 0.0, Some(0.0)), (10.0, 0.0, Some(0.0))]);
        assert!(detect_accident(&st, &th).1.is_empty());
    }

    #[test]
    fn accident_window_must_elapse() {
        let n = net();
        let th = EventThresholds::default();
        let src = rsu(1, Coverage::full(&n));
        let mut st = TwinState::new(&n, 20.0);
        feed(&mut st, &src, &[(3.0, 1.0, Some(0.0)), (12.0, 1.0, Some(0.0))]);
        assert!(detect_accident(&st, &th).1.is_empty());
        feed(&mut st, &src, &[(13.0, 1.0, Some(0.0))]);
        assert_eq!(detect_accident(&st, &th).1, [LinkId(0)].into());
    }

    #[test]
    fn node_accident_needs_all_incoming_links_stopped() {
        let n = net();
        let th = EventThresholds::default();
        let src = rsu(1, Coverage::full(&n));
        let mut st = TwinState::new(&n, 20.0);
        // node 2 has incoming links 0 (1->2) and 2 (3->2)
        for t in 0..=10 {
            let t = t as f64;
            for l in [0, 2] {
                ingest_observation(&mut st, &src, &link_obs(t, l, 1.0, Some(0.0)), true).unwrap();
            }
        }
        let (nodes, links) = detect_accident(&st, &th);
        assert_eq!(links, [LinkId(0), LinkId(2)].into());
        assert_eq!(nodes, [NodeId(2)].into());
    }

    #[test]
    fn events_merge_and_clear() {
        let n = net();
        let th = EventThresholds::default();
        let src = rsu(1, Coverage::full(&n));
        let mut st = TwinState::new(&n, 20.0);
        for t in 0..=10 {
            feed(&mut st, &src, &[(t as f64, 1.0, Some(0.0))]);
            update_events(&mut st, &th);
        }
        assert_eq!(st.link_events(), [LinkId(0)].into());
        assert_eq!(st.event_sets().links, [(NodeId(1), NodeId(2))].into());
        // a stale repeat keeps it, a moving sample clears it
        update_events(&mut st, &th);
        assert_eq!(st.link_events(), [LinkId(0)].into());
        feed(&mut st, &src, &[(11.0, 1.0, Some(8.0))]);
        update_events(&mut st, &th);
        assert!(st.link_events().is_empty());
    }

    #[test]
    fn reported_event_flags_are_sticky_until_cleared() {
        let n = net();
        let th = EventThresholds::default();
        let src = rsu(1, Coverage::full(&n));
        let mut st = TwinState::new(&n, 20.0);
        let mut o = link_obs(1.0, 1, 0.0, None);
        o.links[0].event = Some(true);
        ingest_observation(&mut st, &src, &o, true).unwrap();
        update_events(&mut st, &th);
        assert_eq!(st.link_events(), [LinkId(1)].into());
        o.links[0].event = Some(false);
        ingest_observation(&mut st, &src, &o, true).unwrap();
        assert!(st.link_events().is_empty());
    }

    #[test]
    fn timestamps_never_decrease() {
        let n = net();
        let src = rsu(1, Coverage::full(&n));
        let mut st = TwinState::new(&n, 20.0);
        feed(&mut st, &src, &[(5.0, 1.0, None), (3.0, 1.0, None)]);
        assert_eq!(st.source_timestamp(src.id), Some(5.0));
        assert_eq!(st.link_timestamp(LinkId(0)), Some(5.0));
    }

    #[test]
    fn rsu_coverage_by_radius() {
        let n = net();
        let c = Coverage::rsu(&n, NodeId(2), 60.0);
        assert_eq!(c.nodes, [NodeId(2)].into());
        // every link midpoint is 50 m from node 2
        assert_eq!(c.links.len(), 3);
        let c = Coverage::rsu(&n, NodeId(1), 10.0);
        assert!(c.links.is_empty());
    }
}
