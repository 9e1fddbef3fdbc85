use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use log::{debug, info};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use super::metrics::{ClassAccumulator, MetricsSummary};
use super::scenario::{EventKind, EventLocation, EventPlan, ScheduledEvent, SimulationScenario};
use crate::comms::{check_deadline, deliver, draw_svc, LatencyStreams};
use crate::error::{Error, Result};
use crate::nav::{
    dijkstra_fastest, mask_events, plan_new_users, replan_affected, PlanningInput, Route,
    UserState, VehicleId,
};
use crate::network::{build_journey_matrix, journey_speed, LinkId, NodeId, TrafficNetwork};
use crate::rng::{stream_rng, Stream};
use crate::twin::{
    ingest_observation, twin_volumes, update_events, Coverage, LinkObservation, NodeObservation,
    Observation, SensingSource, SourceId, SourceKind, TwinSnapshot, TwinState,
};

const POS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    CavUser,
    Unconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VehiclePlace {
    /// Spawned, not yet on the road.
    Origin,
    OnLink { link: LinkId, pos_m: f64 },
    Arrived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleState {
    Moving,
    Queued,
    Arrived,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub origin: NodeId,
    pub destination: NodeId,
    /// `None` only for a CAV user still waiting for its first route.
    pub route: Option<Route>,
    pub place: VehiclePlace,
    pub spawn_step: u64,
    /// Step count at which the vehicle left the network (end of its last step).
    pub arrival_step: Option<u64>,
    pub encountered: BTreeSet<usize>,
    pub blocked: bool,
    /// Reached the end of its link but could not leave it this step.
    waiting: bool,
    /// Stopped on an event-closed link during the last movement phase.
    stopped: bool,
}

impl Vehicle {
    /// A freshly spawned vehicle waiting at its origin.
    pub fn new(
        id: VehicleId,
        class: VehicleClass,
        origin: NodeId,
        destination: NodeId,
        route: Option<Route>,
        spawn_step: u64,
    ) -> Self {
        Vehicle {
            id,
            class,
            origin,
            destination,
            route,
            place: VehiclePlace::Origin,
            spawn_step,
            arrival_step: None,
            encountered: BTreeSet::new(),
            blocked: false,
            waiting: false,
            stopped: false,
        }
    }

    pub fn events_encountered(&self) -> usize {
        self.encountered.len()
    }

    pub fn state(&self) -> VehicleState {
        match self.place {
            VehiclePlace::Arrived => VehicleState::Arrived,
            VehiclePlace::Origin => VehicleState::Queued,
            VehiclePlace::OnLink { .. } if self.waiting || self.stopped => VehicleState::Queued,
            VehiclePlace::OnLink { .. } => VehicleState::Moving,
        }
    }

    pub fn travel_time_s(&self, dt_s: f64) -> Option<f64> {
        self.arrival_step
            .map(|a| (a - self.spawn_step) as f64 * dt_s)
    }

    pub fn current_link(&self) -> Option<LinkId> {
        match self.place {
            VehiclePlace::OnLink { link, .. } => Some(link),
            _ => None,
        }
    }
}

/// Shortest route by static link length; ties go to the lower node id.
pub fn shortest_distance_route(
    net: &TrafficNetwork,
    vehicle: VehicleId,
    start: NodeId,
    end: NodeId,
) -> Result<Option<Route>> {
    shortest_on(&net.length_matrix(), vehicle, start, end)
}

fn shortest_on(
    lengths: &crate::network::JourneyTimeMatrix,
    vehicle: VehicleId,
    start: NodeId,
    end: NodeId,
) -> Result<Option<Route>> {
    Ok(dijkstra_fastest(lengths, start, end)?.map(|p| Route::new(vehicle, p.nodes)))
}

/// Updates encounter and blocking counters of `v` against the active events.
/// An event is met when the vehicle sits on the event link, or on a link
/// entering the event node.
pub fn record_encounter(
    v: &mut Vehicle,
    net: &TrafficNetwork,
    events: &[ScheduledEvent],
    step: u64,
) {
    let Some(l) = v.current_link() else {
        return;
    };
    let to = net.link(l).to;
    for (i, e) in events.iter().enumerate() {
        if !e.is_active(step) {
            continue;
        }
        let hit = match e.location {
            EventLocation::Link(el) => el == l,
            EventLocation::Node(n) => n == to,
        };
        if hit {
            v.encountered.insert(i);
            v.blocked = true;
        }
    }
}

/// Turns the scenario's event plan into a concrete schedule.
pub fn resolve_events(sc: &SimulationScenario) -> Vec<ScheduledEvent> {
    let r = match &sc.events {
        EventPlan::Fixed(v) => return v.clone(),
        EventPlan::Random(r) => r,
    };
    let net = &sc.network;
    let mut rng = stream_rng(sc.seed, Stream::EventPlacement);
    let mut free_links: Vec<LinkId> = net.link_ids().collect();
    let mut free_nodes: Vec<NodeId> = net.node_ids().collect();
    let lo = r.onset_min_s.max(0.0);
    let hi = r.onset_max_s.unwrap_or(sc.t_sim_s / 2.0).max(lo);
    let mut out = Vec::with_capacity(r.count);
    for _ in 0..r.count {
        let kind = r.kinds[rng.random_range(0..r.kinds.len())];
        let location = match kind {
            EventKind::Accident => {
                EventLocation::Link(free_links.swap_remove(rng.random_range(0..free_links.len())))
            }
            EventKind::Gathering => {
                EventLocation::Node(free_nodes.swap_remove(rng.random_range(0..free_nodes.len())))
            }
        };
        let onset_s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let onset_step = (onset_s / sc.dt_s).round() as u64;
        let end_step = r
            .duration_s
            .map(|d| onset_step + ((d / sc.dt_s).round() as u64).max(1));
        out.push(ScheduledEvent {
            kind,
            location,
            onset_step,
            end_step,
            density: super::DEFAULT_GATHERING_DENSITY,
        });
    }
    out
}

/// Optional per-step journal sinks (JSON lines).
#[derive(Default)]
pub struct Journals<'a> {
    pub twin: Option<&'a mut dyn Write>,
    pub routes: Option<&'a mut dyn Write>,
}

/// State exposed to a step observer after each completed step.
pub struct StepView<'a> {
    pub step: u64,
    pub network: &'a TrafficNetwork,
    pub twin: &'a TwinState,
    /// True per-link counts at sensing time.
    pub sensed_counts: &'a [usize],
    /// True per-link counts after movement.
    pub counts: &'a [usize],
    pub vehicles: &'a [Vehicle],
    pub events: &'a [ScheduledEvent],
    /// Elements covered by CAV uploads delivered this step.
    pub cav_nodes: &'a BTreeSet<NodeId>,
    pub cav_links: &'a BTreeSet<LinkId>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsSummary,
    pub events: Vec<ScheduledEvent>,
    pub vehicles: Vec<Vehicle>,
}

#[derive(Serialize)]
struct RouteRecord<'a> {
    step: u64,
    vehicle: VehicleId,
    reason: &'a str,
    t_svc_s: f64,
    route: &'a [NodeId],
}

pub fn run(sc: &SimulationScenario) -> Result<MetricsSummary> {
    Ok(run_with(sc, Journals::default(), |_| {})?.metrics)
}

/// Runs the scenario, writing journals and calling `observe` after every step.
pub fn run_with(
    sc: &SimulationScenario,
    mut journals: Journals<'_>,
    mut observe: impl FnMut(&StepView<'_>),
) -> Result<RunOutput> {
    sc.validate()?;
    let mut e = Engine::new(sc);
    info!(
        "run seed={} steps={} n_vel={} p_user={} events={}",
        sc.seed,
        e.steps,
        sc.n_vel,
        sc.p_user,
        e.events.len()
    );
    for step in 0..e.steps {
        e.step(step, &mut journals)?;
        observe(&StepView {
            step,
            network: &sc.network,
            twin: &e.twin,
            sensed_counts: &e.sensed_counts,
            counts: &e.counts(),
            vehicles: &e.vehicles,
            events: &e.events,
            cav_nodes: &e.cav_nodes,
            cav_links: &e.cav_links,
        });
    }
    for j in [journals.twin.as_mut(), journals.routes.as_mut()].into_iter().flatten() {
        j.flush().map_err(|err| Error::Runtime(format!("journal flush: {err}")))?;
    }
    let metrics = e.summary();
    Ok(RunOutput {
        metrics,
        events: e.events,
        vehicles: e.vehicles,
    })
}

struct Engine<'s> {
    sc: &'s SimulationScenario,
    net: &'s TrafficNetwork,
    steps: u64,
    events: Vec<ScheduledEvent>,
    vehicles: Vec<Vehicle>,
    queues: Vec<VecDeque<usize>>,
    lengths: crate::network::JourneyTimeMatrix,
    twin: TwinState,
    rsus: Vec<SensingSource>,
    spawn_rng: ChaCha8Rng,
    class_rng: ChaCha8Rng,
    od_rng: ChaCha8Rng,
    lat: LatencyStreams,
    poisson: Option<Poisson<f64>>,
    /// Last spawn step; whatever is still missing enters here.
    spawn_end: u64,
    closed: Vec<bool>,
    wreck: Vec<bool>,
    crowd: Vec<f64>,
    sensed_counts: Vec<usize>,
    cav_nodes: BTreeSet<NodeId>,
    cav_links: BTreeSet<LinkId>,
    routes_issued: usize,
    routes_deferred: usize,
    info_dropped: usize,
    uploads_dropped: usize,
}

impl<'s> Engine<'s> {
    fn new(sc: &'s SimulationScenario) -> Self {
        let net: &TrafficNetwork = &sc.network;
        let steps = sc.steps();
        let lambda = sc.n_vel as f64 / (sc.spawn.horizon_frac * steps as f64);
        let mut rsus = Vec::new();
        if sc.sensing.full_coverage {
            rsus.push(SensingSource {
                id: SourceId {
                    kind: SourceKind::Rsu,
                    id: 0,
                },
                coverage: Coverage::full(net),
            });
        }
        for (i, r) in sc.sensing.rsus.iter().enumerate() {
            rsus.push(SensingSource {
                id: SourceId {
                    kind: SourceKind::Rsu,
                    id: i + 1,
                },
                coverage: Coverage::rsu(net, r.node, r.radius_m),
            });
        }
        let retention = sc.thresholds.accident_window_s + 4.0 * sc.dt_s;
        Engine {
            sc,
            net,
            steps,
            events: resolve_events(sc),
            vehicles: Vec::with_capacity(sc.n_vel),
            queues: vec![VecDeque::new(); net.link_count()],
            lengths: net.length_matrix(),
            twin: TwinState::new(net, retention),
            rsus,
            spawn_rng: stream_rng(sc.seed, Stream::Spawn),
            class_rng: stream_rng(sc.seed, Stream::Class),
            od_rng: stream_rng(sc.seed, Stream::OriginDestination),
            lat: LatencyStreams::new(sc.seed),
            poisson: (lambda > 0.0).then(|| Poisson::new(lambda).expect("positive rate")),
            spawn_end: ((sc.spawn.horizon_frac * steps as f64).ceil() as u64).clamp(1, steps.max(1)) - 1,
            closed: vec![false; net.link_count()],
            wreck: vec![false; net.link_count()],
            crowd: vec![0.0; net.node_count()],
            sensed_counts: vec![0; net.link_count()],
            cav_nodes: BTreeSet::new(),
            cav_links: BTreeSet::new(),
            routes_issued: 0,
            routes_deferred: 0,
            info_dropped: 0,
            uploads_dropped: 0,
        }
    }

    fn counts(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    fn flow_speed(&self, l: LinkId) -> f64 {
        if self.closed[l.0] {
            return 0.0;
        }
        let link = self.net.link(l);
        let k = self.queues[l.0].len() as f64 / link.length_m;
        journey_speed(k, link.v_free_mps, link.k_max_veh_per_m)
    }

    fn step(&mut self, step: u64, journals: &mut Journals<'_>) -> Result<()> {
        let t = step as f64 * self.sc.dt_s;
        self.spawn(step)?;
        self.activate_events(step);
        self.sense(t)?;
        self.twin.advance_clock(t);
        update_events(&mut self.twin, &self.sc.thresholds);
        self.plan(step, journals)?;
        self.movement(step);
        for v in &mut self.vehicles {
            record_encounter(v, self.net, &self.events, step);
        }
        if let Some(j) = journals.twin.as_mut() {
            let snap = TwinSnapshot::capture(&self.twin, self.net, step);
            write_line(&mut **j, &snap)?;
        }
        Ok(())
    }

    fn spawn(&mut self, step: u64) -> Result<()> {
        let remaining = self.sc.n_vel - self.vehicles.len();
        if remaining == 0 {
            return Ok(());
        }
        let Some(p) = &self.poisson else {
            return Ok(());
        };
        let drawn = p.sample(&mut self.spawn_rng) as usize;
        let k = if step >= self.spawn_end { remaining } else { drawn.min(remaining) };
        let m = self.net.node_count();
        for _ in 0..k {
            let id = VehicleId(self.vehicles.len());
            let class = if self.class_rng.random_bool(self.sc.p_user) {
                VehicleClass::CavUser
            } else {
                VehicleClass::Unconnected
            };
            let mut tries = 0;
            let (o, d, static_route) = loop {
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::Runtime("no reachable origin/destination pair".into()));
                }
                let o = NodeId::from_index(self.od_rng.random_range(0..m));
                let d = NodeId::from_index(self.od_rng.random_range(0..m));
                if o == d {
                    continue;
                }
                if let Some(r) = shortest_on(&self.lengths, id, o, d)? {
                    break (o, d, r);
                }
            };
            let route = (class == VehicleClass::Unconnected).then_some(static_route);
            self.vehicles.push(Vehicle::new(id, class, o, d, route, step));
        }
        Ok(())
    }

    fn activate_events(&mut self, step: u64) {
        self.closed.fill(false);
        self.wreck.fill(false);
        self.crowd.fill(0.0);
        for e in self.events.iter().filter(|e| e.is_active(step)) {
            match e.location {
                EventLocation::Link(l) => {
                    self.closed[l.0] = true;
                    self.wreck[l.0] = true;
                }
                EventLocation::Node(n) => {
                    self.crowd[n.index()] = e.density;
                    for &l in self.net.in_links(n) {
                        self.closed[l.0] = true;
                    }
                }
            }
        }
    }

    fn observe(&self, cov: &Coverage, t: f64) -> Observation {
        let links = cov
            .links
            .iter()
            .map(|&l| {
                let n = self.queues[l.0].len();
                let occupied = n > 0 || self.wreck[l.0];
                LinkObservation {
                    link: l,
                    volume: n as f64,
                    min_speed_mps: occupied.then(|| self.flow_speed(l)),
                    occupied,
                    event: None,
                }
            })
            .collect();
        let nodes = cov
            .nodes
            .iter()
            .map(|&n| NodeObservation {
                node: n,
                ped_density: Some(self.crowd[n.index()]),
                event: None,
            })
            .collect();
        Observation {
            time_s: t,
            links,
            nodes,
        }
    }

    fn sense(&mut self, t: f64) -> Result<()> {
        self.sensed_counts = self.counts();
        self.cav_nodes.clear();
        self.cav_links.clear();
        let pdr = self.sc.latency.pdr_ssms;
        for i in 0..self.rsus.len() {
            let obs = self.observe(&self.rsus[i].coverage, t);
            let ok = deliver(pdr, self.lat.ssms_rng());
            self.uploads_dropped += usize::from(!ok);
            ingest_observation(&mut self.twin, &self.rsus[i], &obs, ok)?;
        }
        if !self.sc.sensing.cav_sensing {
            return Ok(());
        }
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if v.class != VehicleClass::CavUser {
                continue;
            }
            let Some(l) = v.current_link() else {
                continue;
            };
            let src = SensingSource {
                id: SourceId {
                    kind: SourceKind::Cav,
                    id: v.id.0,
                },
                coverage: Coverage::cav(self.net, l),
            };
            let obs = self.observe(&src.coverage, t);
            let ok = deliver(pdr, self.lat.ssms_rng());
            self.uploads_dropped += usize::from(!ok);
            ingest_observation(&mut self.twin, &src, &obs, ok)?;
            if ok {
                self.cav_links.extend(src.coverage.links.iter().copied());
                self.cav_nodes.extend(src.coverage.nodes.iter().copied());
            }
        }
        Ok(())
    }

    /// Seconds until the vehicle reaches its next intersection; infinite
    /// while it stands still.
    fn time_to_intersection(&self, v: &Vehicle) -> f64 {
        match v.place {
            VehiclePlace::OnLink { link, pos_m } if !v.waiting => {
                let speed = self.flow_speed(link);
                if speed <= 0.0 {
                    f64::INFINITY
                } else {
                    (self.net.link(link).length_m - pos_m) / speed
                }
            }
            _ => f64::INFINITY,
        }
    }

    fn plan(&mut self, step: u64, journals: &mut Journals<'_>) -> Result<()> {
        let mut users = Vec::new();
        let mut new_users = Vec::new();
        let mut routes = BTreeMap::new();
        for v in &self.vehicles {
            if v.class != VehicleClass::CavUser || v.place == VehiclePlace::Arrived {
                continue;
            }
            let position = match v.place {
                VehiclePlace::OnLink { link, .. } => self.net.link(link).to,
                _ => v.origin,
            };
            let u = UserState {
                vehicle: v.id,
                position,
                destination: v.destination,
            };
            match &v.route {
                None => new_users.push(u),
                Some(r) => {
                    users.push(u);
                    routes.insert(v.id, r.clone());
                }
            }
        }
        if users.is_empty() && new_users.is_empty() {
            return Ok(());
        }
        let vols = twin_volumes(&self.twin, self.net);
        let events = self.twin.event_sets();
        let matrix = mask_events(&build_journey_matrix(self.net, &vols)?, &events);
        let input = PlanningInput {
            network: self.net,
            matrix: &matrix,
            users,
            new_users,
            events: &events,
        };
        let fresh = plan_new_users(&input);
        let again = if events.is_empty() {
            Default::default()
        } else {
            replan_affected(&input, &routes)
        };
        for (reason, outcome) in [("new", fresh), ("replan", again)] {
            for (vid, planned) in outcome.routes {
                let t_svc = draw_svc(&self.sc.latency, &mut self.lat).total_s(self.sc.svc_mode);
                if !deliver(self.sc.latency.pdr_info, self.lat.info_rng()) {
                    self.info_dropped += 1;
                    continue;
                }
                let v = &self.vehicles[vid.0];
                let first = match v.place {
                    VehiclePlace::OnLink { link, .. } => link,
                    _ => self
                        .net
                        .link_between(planned.nodes[0], planned.nodes[1])
                        .expect("planned link exists"),
                };
                let v_free = self.net.link(first).v_free_mps;
                if !check_deadline(t_svc, v_free) || t_svc > self.time_to_intersection(v) {
                    self.routes_deferred += 1;
                    continue;
                }
                let route = match v.place {
                    VehiclePlace::OnLink { link, .. } => {
                        let mut nodes = vec![self.net.link(link).from];
                        nodes.extend_from_slice(&planned.nodes);
                        Route::new(vid, nodes)
                    }
                    _ => planned,
                };
                if let Some(j) = journals.routes.as_mut() {
                    write_line(
                        &mut **j,
                        &RouteRecord {
                            step,
                            vehicle: vid,
                            reason,
                            t_svc_s: t_svc,
                            route: &route.nodes,
                        },
                    )?;
                }
                debug!("step {step}: {reason} route for vehicle {}", vid.0);
                self.routes_issued += 1;
                self.vehicles[vid.0].route = Some(route);
            }
        }
        Ok(())
    }

    fn has_room(&self, l: LinkId) -> bool {
        let link = self.net.link(l);
        ((self.queues[l.0].len() + 1) as f64) < link.capacity()
    }

    fn movement(&mut self, step: u64) {
        // Entries from origins, in vehicle order.
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if v.place != VehiclePlace::Origin {
                continue;
            }
            let Some(r) = &v.route else {
                continue;
            };
            let (a, b) = r.current_link();
            let l = self.net.link_between(a, b).expect("route follows links");
            if self.has_room(l) {
                self.queues[l.0].push_back(i);
                self.vehicles[i].place = VehiclePlace::OnLink { link: l, pos_m: 0.0 };
            }
        }

        // Advance within links, FIFO without overtaking.
        let dt = self.sc.dt_s;
        for li in 0..self.queues.len() {
            let l = LinkId(li);
            let speed = self.flow_speed(l);
            let len = self.net.link(l).length_m;
            let mut leader = f64::INFINITY;
            for &vi in &self.queues[li] {
                let v = &mut self.vehicles[vi];
                let VehiclePlace::OnLink { pos_m, .. } = &mut v.place else {
                    unreachable!("queued vehicle off link");
                };
                *pos_m = (*pos_m + speed * dt).min(len).min(leader);
                leader = *pos_m;
                v.waiting = false;
                v.stopped = self.closed[li];
            }
        }

        // Transfers at link ends.
        for li in 0..self.queues.len() {
            if self.closed[li] {
                continue;
            }
            let len = self.net.link(LinkId(li)).length_m;
            while let Some(&vi) = self.queues[li].front() {
                let v = &self.vehicles[vi];
                let VehiclePlace::OnLink { pos_m, .. } = v.place else {
                    unreachable!("queued vehicle off link");
                };
                if pos_m < len - POS_EPS {
                    break;
                }
                let r = v.route.as_ref().expect("vehicle on road has a route");
                match r.next_link() {
                    None => {
                        self.queues[li].pop_front();
                        let v = &mut self.vehicles[vi];
                        v.place = VehiclePlace::Arrived;
                        v.arrival_step = Some(step + 1);
                    }
                    Some((a, b)) => {
                        let next = self.net.link_between(a, b).expect("route follows links");
                        if !self.has_room(next) {
                            self.vehicles[vi].waiting = true;
                            break;
                        }
                        self.queues[li].pop_front();
                        self.queues[next.0].push_back(vi);
                        let v = &mut self.vehicles[vi];
                        v.route.as_mut().expect("checked").advance();
                        v.place = VehiclePlace::OnLink {
                            link: next,
                            pos_m: 0.0,
                        };
                    }
                }
            }
        }
    }

    fn summary(&self) -> MetricsSummary {
        let mut all = ClassAccumulator::default();
        let mut cav = ClassAccumulator::default();
        let mut unc = ClassAccumulator::default();
        for v in &self.vehicles {
            let tt = v.travel_time_s(self.sc.dt_s);
            let n = v.events_encountered();
            all.add(tt, n, v.blocked);
            match v.class {
                VehicleClass::CavUser => cav.add(tt, n, v.blocked),
                VehicleClass::Unconnected => unc.add(tt, n, v.blocked),
            }
        }
        MetricsSummary {
            seed: self.sc.seed,
            p_user: self.sc.p_user,
            events: self.events.len(),
            overall: all.finish(),
            cav: cav.finish(),
            unconnected: unc.finish(),
            routes_issued: self.routes_issued,
            routes_deferred: self.routes_deferred,
            info_dropped: self.info_dropped,
            uploads_dropped: self.uploads_dropped,
        }
    }
}

fn write_line<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).map_err(|e| Error::Runtime(e.to_string()))?;
    line.push('\n');
    w.write_all(line.as_bytes())
        .map_err(|e| Error::Runtime(format!("journal write: {e}")))
}
