//! Road network, the linear density-speed law and the journey-time matrix.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonpos;

/// Speeds below this are treated as a standstill; the link becomes impassable.
pub const V_EPS: f64 = 1e-6;

/// 1-based intersection identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 - 1
    }

    #[inline]
    pub fn from_index(i: usize) -> Self {
        NodeId(i + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position of a link in [`TrafficNetwork::links`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

/// A journey time in seconds, or the impassable sentinel.
///
/// Backed by `f64` with `+inf` as the sentinel, so addition saturates and
/// ordering puts the sentinel above every finite time.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Weight(f64);

impl Weight {
    pub const INFINITE: Weight = Weight(f64::INFINITY);
    pub const ZERO: Weight = Weight(0.0);

    /// Panics on NaN or negative input; weights are non-negative by construction.
    pub fn finite(seconds: f64) -> Self {
        assert!(
            seconds.is_finite() && seconds >= 0.0,
            "weight must be finite and non-negative, got {seconds}"
        );
        Weight(seconds)
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_infinite(self) -> bool {
        !self.0.is_finite()
    }

    pub fn seconds(self) -> f64 {
        self.0
    }

    pub fn saturating_add(self, other: Weight) -> Weight {
        Weight(self.0 + other.0)
    }

    /// Multiplies finite weights by `c`; the sentinel stays put.
    pub fn scaled(self, c: f64) -> Weight {
        if self.is_finite() {
            Weight::finite(self.0 * c)
        } else {
            self
        }
    }

    pub(crate) fn total_cmp(&self, other: &Weight) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_finite() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("inf")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub v_free_mps: f64,
    pub k_max_veh_per_m: f64,
}

impl Link {
    /// Largest vehicle count the link may hold.
    pub fn capacity(&self) -> f64 {
        self.k_max_veh_per_m * self.length_m
    }

    pub fn free_flow_time(&self) -> f64 {
        self.length_m / self.v_free_mps
    }
}

/// Density on a link: vehicles per metre.
pub fn traffic_density(vehicles: f64, length_m: f64) -> Result<f64> {
    if !(length_m > 0.0) {
        return Err(Error::InvalidLink(format!(
            "link length must be positive, got {length_m}"
        )));
    }
    Ok(vehicles / length_m)
}

/// Linear density-speed law, clamped at zero beyond jam density.
pub fn journey_speed(density: f64, v_free: f64, k_max: f64) -> f64 {
    debug_assert!(density >= 0.0 && v_free > 0.0 && k_max > 0.0);
    (v_free * (1.0 - density / k_max)).max(0.0)
}

/// Traversal time of `link` carrying `vehicles`, or [`Weight::INFINITE`] once
/// the speed drops below [`V_EPS`].
pub fn journey_time(link: &Link, vehicles: f64) -> Weight {
    let k = vehicles / link.length_m;
    let v = journey_speed(k, link.v_free_mps, link.k_max_veh_per_m);
    if v < V_EPS {
        Weight::INFINITE
    } else {
        Weight::finite(link.length_m / v)
    }
}

/// Directed road graph with dense 1-based node ids.
#[derive(Debug, Clone)]
pub struct TrafficNetwork {
    nodes: Vec<Node>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
    by_pair: HashMap<(NodeId, NodeId), LinkId>,
}

impl TrafficNetwork {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self> {
        Self::build(nodes, links, &|_, _| None)
    }

    fn build(
        mut nodes: Vec<Node>,
        links: Vec<Link>,
        locate: &dyn Fn(&str, usize) -> Option<usize>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::config("network has no nodes"));
        }
        let order: Vec<usize> = {
            let mut ids: Vec<usize> = nodes.iter().map(|n| n.id.0).collect();
            ids.sort_unstable();
            ids
        };
        for (i, id) in order.iter().enumerate() {
            if *id != i + 1 {
                let pos = nodes.iter().position(|n| n.id.0 == *id).unwrap_or(0);
                let msg = if i > 0 && order[i - 1] == *id {
                    format!("duplicate node id {id}")
                } else {
                    format!("node ids must be dense 1..{}, found {id}", nodes.len())
                };
                return Err(Error::config_at(locate("nodes", pos), msg));
            }
        }
        nodes.sort_by_key(|n| n.id);
        let m = nodes.len();

        let mut by_pair = HashMap::with_capacity(links.len());
        let mut out_links = vec![Vec::new(); m];
        let mut in_links = vec![Vec::new(); m];
        for (i, l) in links.iter().enumerate() {
            let at = || locate("links", i);
            for end in [l.from, l.to] {
                if end.0 == 0 || end.0 > m {
                    return Err(Error::config_at(
                        at(),
                        format!("link {}->{} references unknown node {end}", l.from, l.to),
                    ));
                }
            }
            if l.from == l.to {
                return Err(Error::config_at(at(), format!("self-link at node {}", l.from)));
            }
            for (name, v) in [
                ("length_m", l.length_m),
                ("v_free", l.v_free_mps),
                ("k_max_veh_per_m", l.k_max_veh_per_m),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config_at(
                        at(),
                        format!("link {}->{}: {name} must be positive, got {v}", l.from, l.to),
                    ));
                }
            }
            if by_pair.insert((l.from, l.to), LinkId(i)).is_some() {
                return Err(Error::config_at(
                    at(),
                    format!("parallel link {}->{}", l.from, l.to),
                ));
            }
            out_links[l.from.index()].push(LinkId(i));
            in_links[l.to.index()].push(LinkId(i));
        }
        Ok(TrafficNetwork {
            nodes,
            links,
            out_links,
            in_links,
            by_pair,
        })
    }

    /// Parses the JSON network document. Validation errors carry the line of
    /// the offending element.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)
            .map_err(|e| Error::config_at(Some(e.line()), e.to_string()))?;
        let locate = |key: &str, i: usize| jsonpos::array_element_line(text, key, i);
        let mut links = Vec::with_capacity(doc.links.len());
        for (i, l) in doc.links.into_iter().enumerate() {
            let v_free = match (l.v_free_mps, l.v_free_kmh) {
                (Some(v), None) => v,
                (None, Some(kmh)) => kmh / 3.6,
                (Some(_), Some(_)) => {
                    return Err(Error::config_at(
                        locate("links", i),
                        "give only one of v_free_mps and v_free_kmh",
                    ))
                }
                (None, None) => {
                    return Err(Error::config_at(
                        locate("links", i),
                        "missing v_free_mps or v_free_kmh",
                    ))
                }
            };
            links.push(Link {
                from: l.from,
                to: l.to,
                length_m: l.length_m,
                v_free_mps: v_free,
                k_max_veh_per_m: l.k_max_veh_per_m,
            });
        }
        Self::build(doc.nodes, links, &locate)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| e.with_path(path))
    }

    pub fn to_json_string(&self) -> String {
        let doc = NetworkDoc {
            nodes: self.nodes.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkDoc {
                    from: l.from,
                    to: l.to,
                    length_m: l.length_m,
                    v_free_mps: Some(l.v_free_mps),
                    v_free_kmh: None,
                    k_max_veh_per_m: l.k_max_veh_per_m,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("network serialises")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 >= 1 && id.0 <= self.nodes.len()
    }

    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.by_pair.get(&(from, to)).copied()
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkId] {
        &self.out_links[n.index()]
    }

    pub fn in_links(&self, n: NodeId) -> &[LinkId] {
        &self.in_links[n.index()]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..=self.nodes.len()).map(NodeId)
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkId> {
        (0..self.links.len()).map(LinkId)
    }

    /// Straight-line distance between the link midpoint and a point.
    pub fn link_midpoint_distance(&self, l: LinkId, x: f64, y: f64) -> f64 {
        let link = self.link(l);
        let a = self.node(link.from);
        let b = self.node(link.to);
        let mx = 0.5 * (a.x_m + b.x_m);
        let my = 0.5 * (a.y_m + b.y_m);
        ((mx - x).powi(2) + (my - y).powi(2)).sqrt()
    }

    /// Static link lengths as a weight matrix, for distance-based routing.
    pub fn length_matrix(&self) -> JourneyTimeMatrix {
        let mut m = JourneyTimeMatrix::unconnected(self.node_count());
        for l in &self.links {
            m.set(l.from, l.to, Weight::finite(l.length_m));
        }
        m
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    nodes: Vec<Node>,
    links: Vec<LinkDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    from: NodeId,
    to: NodeId,
    length_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_free_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_free_kmh: Option<f64>,
    k_max_veh_per_m: f64,
}

/// Dense node-to-node journey times. Entry `(i, j)` is infinite when there is
/// no usable link from `i` to `j`; the diagonal is always infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct JourneyTimeMatrix {
    m: usize,
    cells: Vec<Weight>,
}

impl JourneyTimeMatrix {
    pub fn unconnected(m: usize) -> Self {
        JourneyTimeMatrix {
            m,
            cells: vec![Weight::INFINITE; m * m],
        }
    }

    /// Builds a matrix from rows of seconds; non-finite entries become the sentinel.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.len();
        let mut out = Self::unconnected(m);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), m, "matrix must be square");
            for (j, &v) in row.iter().enumerate() {
                if i != j && v.is_finite() {
                    out.cells[i * m + j] = Weight::finite(v);
                }
            }
        }
        out
    }

    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, from: NodeId, to: NodeId) -> Weight {
        self.cells[from.index() * self.m + to.index()]
    }

    /// Writing a finite weight on the diagonal is ignored.
    #[inline]
    pub fn set(&mut self, from: NodeId, to: NodeId, w: Weight) {
        if from != to {
            self.cells[from.index() * self.m + to.index()] = w;
        }
    }

    pub fn row(&self, from: NodeId) -> &[Weight] {
        let s = from.index() * self.m;
        &self.cells[s..s + self.m]
    }

    pub fn scaled(&self, c: f64) -> Self {
        JourneyTimeMatrix {
            m: self.m,
            cells: self.cells.iter().map(|w| w.scaled(c)).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.m)
            .map(|r| r.iter().map(|w| w.seconds()).collect())
            .collect()
    }
}

/// Journey-time snapshot for the given per-link vehicle counts.
pub fn build_journey_matrix(net: &TrafficNetwork, volumes: &[f64]) -> Result<JourneyTimeMatrix> {
    if volumes.len() != net.link_count() {
        return Err(Error::config(format!(
            "volume vector has {} entries, network has {} links",
            volumes.len(),
            net.link_count()
        )));
    }
    let mut m = JourneyTimeMatrix::unconnected(net.node_count());
    for (l, &x) in net.links().iter().zip(volumes) {
        m.set(l.from, l.to, journey_time(l, x));
    }
    Ok(m)
}

/// Parameters for the synthetic urban grid used by the experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    /// Directed link target; filled with diagonal roads beyond the grid.
    pub target_links: usize,
    pub arterial_kmh: f64,
    pub local_kmh: f64,
    /// Every `arterial_every`-th row and column is an arterial.
    pub arterial_every: usize,
    pub k_max_veh_per_m: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    /// 9 x 10 intersections and 504 directed links.
    fn default() -> Self {
        GridSpec {
            rows: 9,
            cols: 10,
            spacing_m: 150.0,
            target_links: 504,
            arterial_kmh: 50.0,
            local_kmh: 30.0,
            arterial_every: 4,
            k_max_veh_per_m: 0.15,
            seed: 2024,
        }
    }
}

/// Jittered grid with bidirectional roads plus random diagonals.
pub fn generate_grid_network(spec: &GridSpec) -> Result<TrafficNetwork> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows < 2 || cols < 2 {
        return Err(Error::config("grid needs at least 2 rows and 2 columns"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = 0.15 * spec.spacing_m;
    let id = |r: usize, c: usize| NodeId(r * cols + c + 1);
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Node {
                id: id(r, c),
                x_m: c as f64 * spec.spacing_m + rng.random_range(-jitter..=jitter),
                y_m: r as f64 * spec.spacing_m + rng.random_range(-jitter..=jitter),
            });
        }
    }
    let arterial = spec.arterial_kmh / 3.6;
    let local = spec.local_kmh / 3.6;
    let every = spec.arterial_every.max(1);
    let dist = |a: NodeId, b: NodeId| {
        let (p, q) = (&nodes[a.index()], &nodes[b.index()]);
        ((p.x_m - q.x_m).powi(2) + (p.y_m - q.y_m).powi(2)).sqrt()
    };
    let mut roads: Vec<(NodeId, NodeId, f64)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                let v = if r % every == 0 { arterial } else { local };
                roads.push((id(r, c), id(r, c + 1), v));
            }
            if r + 1 < rows {
                let v = if c % every == 0 { arterial } else { local };
                roads.push((id(r, c), id(r + 1, c), v));
            }
        }
    }
    let mut diagonals = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            diagonals.push((id(r, c), id(r + 1, c + 1), local));
            diagonals.push((id(r, c + 1), id(r + 1, c), local));
        }
    }
    diagonals.shuffle(&mut rng);
    let target_roads = spec.target_links / 2;
    if target_roads < roads.len() || target_roads > roads.len() + diagonals.len() {
        return Err(Error::config(format!(
            "target of {} links is not reachable on a {rows}x{cols} grid",
            spec.target_links
        )));
    }
    let extra = target_roads - roads.len();
    roads.extend(diagonals.into_iter().take(extra));

    let mut links = Vec::with_capacity(roads.len() * 2);
    for (a, b, v) in roads {
        // Round to the decimetre so the written network file reloads bit-exactly.
        let len = (dist(a, b) * 10.0).round() / 10.0;
        for (from, to) in [(a, b), (b, a)] {
            links.push(Link {
                from,
                to,
                length_m: len,
                v_free_mps: v,
                k_max_veh_per_m: spec.k_max_veh_per_m,
            });
        }
    }
    for n in &mut nodes {
        n.x_m = (n.x_m * 10.0).round() / 10.0;
        n.y_m = (n.y_m * 10.0).round() / 10.0;
    }
    TrafficNetwork::new(nodes, links)
}
