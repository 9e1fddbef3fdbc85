//! Cooperative event-triggered route planning.
//!
//! Each sampling step the cloud takes the journey-time snapshot, masks every
//! link pointing into an event intersection and every event link, routes the
//! newly entering users, then re-plans exactly those users whose remaining
//! route touches a masked entry.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{JourneyTimeMatrix, NodeId, TrafficNetwork, Weight};

/// Comfortable deceleration, 10 ft/s^2.
pub const A_COMFY_MPS2: f64 = 3.048;

/// `1 / (2 * A_COMFY_MPS2)` rounded to three places, as used for both the
/// request distance and the service deadline.
pub const REQUEST_COEFF: f64 = 0.164;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub usize);

/// Planned node sequence for one vehicle.
///
/// `cursor` indexes the next node to reach: the vehicle is on, or about to
/// enter, the link `nodes[cursor - 1] -> nodes[cursor]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub vehicle: VehicleId,
    pub nodes: Vec<NodeId>,
    pub cursor: usize,
}

impl Route {
    pub fn new(vehicle: VehicleId, nodes: Vec<NodeId>) -> Self {
        assert!(nodes.len() >= 2, "route needs at least two nodes");
        Route {
            vehicle,
            nodes,
            cursor: 1,
        }
    }

    pub fn origin(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().expect("non-empty route")
    }

    /// Link currently traversed (or about to be entered).
    pub fn current_link(&self) -> (NodeId, NodeId) {
        (self.nodes[self.cursor - 1], self.nodes[self.cursor])
    }

    /// Link after the current one, if any.
    pub fn next_link(&self) -> Option<(NodeId, NodeId)> {
        (self.cursor + 1 < self.nodes.len())
            .then(|| (self.nodes[self.cursor], self.nodes[self.cursor + 1]))
    }

    pub fn advance(&mut self) {
        debug_assert!(self.cursor + 1 < self.nodes.len());
        self.cursor += 1;
    }

    /// Links still ahead of `position`, starting with the one that departs from it.
    pub fn links_from(&self, position: NodeId) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        let from = self.cursor - 1;
        let start = self.nodes[from..]
            .iter()
            .position(|&n| n == position)
            .map(|p| p + from)
            .unwrap_or(from);
        self.nodes[start..].windows(2).map(|w| (w[0], w[1]))
    }

    pub fn is_consistent_with(&self, net: &TrafficNetwork) -> bool {
        self.nodes.len() >= 2
            && self.cursor >= 1
            && self.cursor < self.nodes.len()
            && self
                .nodes
                .windows(2)
                .all(|w| net.link_between(w[0], w[1]).is_some())
    }
}

/// Node sequence plus summed weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub cost: Weight,
}

/// Detected events, links given as `(from, to)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSets {
    pub nodes: BTreeSet<NodeId>,
    pub links: BTreeSet<(NodeId, NodeId)>,
}

impl EventSets {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.links.is_empty()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Key(Weight, NodeId);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Fastest path on the matrix weights.
///
/// Queue order is `(cost, node id)` and, among equal-cost predecessors, the
/// lower node id wins, so results are reproducible bit for bit. Returns
/// `Ok(None)` when every path to `end` is infinite.
pub fn dijkstra_fastest(
    matrix: &JourneyTimeMatrix,
    start: NodeId,
    end: NodeId,
) -> Result<Option<Path>> {
    let m = matrix.size();
    for n in [start, end] {
        if n.0 == 0 || n.0 > m {
            return Err(Error::Contract(format!("node {n} is not in the network")));
        }
    }
    if start == end {
        return Err(Error::DegenerateRequest(start.0));
    }
    let mut dist = vec![Weight::INFINITE; m];
    let mut pred: Vec<Option<NodeId>> = vec![None; m];
    let mut done = vec![false; m];
    let mut heap = BinaryHeap::new();
    dist[start.index()] = Weight::ZERO;
    heap.push(Reverse(Key(Weight::ZERO, start)));

    while let Some(Reverse(Key(d, u))) = heap.pop() {
        if done[u.index()] {
            continue;
        }
        done[u.index()] = true;
        if u == end {
            break;
        }
        for (vi, &w) in matrix.row(u).iter().enumerate() {
            if w.is_infinite() || done[vi] {
                continue;
            }
            let nd = d.saturating_add(w);
            let cur = dist[vi];
            if nd < cur {
                dist[vi] = nd;
                pred[vi] = Some(u);
                heap.push(Reverse(Key(nd, NodeId::from_index(vi))));
            } else if nd == cur && pred[vi].is_some_and(|p| u < p) {
                pred[vi] = Some(u);
            }
        }
    }

    if dist[end.index()].is_infinite() {
        return Ok(None);
    }
    let mut nodes = vec![end];
    let mut at = end;
    while let Some(p) = pred[at.index()] {
        nodes.push(p);
        at = p;
    }
    nodes.reverse();
    debug_assert_eq!(nodes[0], start);
    Ok(Some(Path {
        nodes,
        cost: dist[end.index()],
    }))
}

/// Sets every entry pointing into an event node, and every event link, to
/// the impassable sentinel.
pub fn mask_events(matrix: &JourneyTimeMatrix, events: &EventSets) -> JourneyTimeMatrix {
    let mut out = matrix.clone();
    let m = matrix.size();
    for &n in &events.nodes {
        if n.0 == 0 || n.0 > m {
            continue;
        }
        for i in 0..m {
            let from = NodeId::from_index(i);
            if out.get(from, n).is_finite() {
                out.set(from, n, Weight::INFINITE);
            }
        }
    }
    for &(a, b) in &events.links {
        if a.0 >= 1 && a.0 <= m && b.0 >= 1 && b.0 <= m {
            out.set(a, b, Weight::INFINITE);
        }
    }
    out
}

/// A CAV user as seen by the planner. For a user in the middle of a link,
/// `position` is that link's downstream node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserState {
    pub vehicle: VehicleId,
    pub position: NodeId,
    pub destination: NodeId,
}

/// Snapshot handed to the planner. `matrix` must already be masked.
#[derive(Debug, Clone)]
pub struct PlanningInput<'a> {
    pub network: &'a TrafficNetwork,
    pub matrix: &'a JourneyTimeMatrix,
    pub users: Vec<UserState>,
    pub new_users: Vec<UserState>,
    pub events: &'a EventSets,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanOutcome {
    pub routes: BTreeMap<VehicleId, Route>,
    pub unreachable: BTreeSet<VehicleId>,
}

impl PlanOutcome {
    pub fn touched(&self) -> BTreeSet<VehicleId> {
        self.routes
            .keys()
            .chain(self.unreachable.iter())
            .copied()
            .collect()
    }
}

fn route_user(matrix: &JourneyTimeMatrix, u: &UserState, out: &mut PlanOutcome) {
    match dijkstra_fastest(matrix, u.position, u.destination) {
        Ok(Some(p)) => {
            out.routes.insert(u.vehicle, Route::new(u.vehicle, p.nodes));
        }
        Ok(None) | Err(_) => {
            out.unreachable.insert(u.vehicle);
        }
    }
}

/// Routes every entering user from its position to its destination.
pub fn plan_new_users(input: &PlanningInput<'_>) -> PlanOutcome {
    let mut out = PlanOutcome::default();
    for u in &input.new_users {
        route_user(input.matrix, u, &mut out);
    }
    out
}

/// True when a link of `route` at or after `position` is impassable in `matrix`.
pub fn route_is_affected(matrix: &JourneyTimeMatrix, route: &Route, position: NodeId) -> bool {
    route
        .links_from(position)
        .any(|(a, b)| matrix.get(a, b).is_infinite())
}

/// Re-plans the users whose remaining route crosses a masked entry. Users not
/// listed in `routes` are ignored; unaffected users are absent from the output.
pub fn replan_affected(
    input: &PlanningInput<'_>,
    routes: &BTreeMap<VehicleId, Route>,
) -> PlanOutcome {
    let mut out = PlanOutcome::default();
    for u in &input.users {
        let Some(route) = routes.get(&u.vehicle) else {
            continue;
        };
        if route_is_affected(input.matrix, route, u.position) {
            route_user(input.matrix, u, &mut out);
        }
    }
    out
}

/// Distance before an intersection at which a user must request a route.
pub fn request_distance(v_free_mps: f64) -> f64 {
    REQUEST_COEFF * v_free_mps * v_free_mps
}
