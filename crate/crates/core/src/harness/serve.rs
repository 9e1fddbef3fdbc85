//! Line-delimited JSON route service.
//!
//! Each connection gets a reader thread; every parsed line is forwarded to a
//! single state thread that owns the twin, so mutations apply in arrival order.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nav::{dijkstra_fastest, mask_events, VehicleId};
use crate::network::{build_journey_matrix, NodeId, TrafficNetwork};
use crate::sim::SimulationScenario;
use crate::twin::{
    ingest_observation, twin_volumes, update_events, Coverage, EventThresholds, LinkObservation,
    NodeObservation, Observation, SensingSource, SourceId, SourceKind, TwinState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireLink {
    pub from: NodeId,
    pub to: NodeId,
    /// Defaults to the last known volume.
    #[serde(default)]
    pub volume: Option<f64>,
    #[serde(default)]
    pub speed_mps: Option<f64>,
    #[serde(default)]
    pub event: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireNode {
    pub node: NodeId,
    #[serde(default)]
    pub ped_density: Option<f64>,
    #[serde(default)]
    pub event: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteStatus {
    Ok,
    Unreachable,
}

/// One line on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServiceMessage {
    SensorUpdate {
        source: SourceId,
        #[serde(default)]
        time_s: Option<f64>,
        #[serde(default)]
        links: Vec<WireLink>,
        #[serde(default)]
        nodes: Vec<WireNode>,
    },
    RouteRequest {
        vehicle: VehicleId,
        position: NodeId,
        destination: NodeId,
    },
    RouteResponse {
        vehicle: VehicleId,
        route: Vec<NodeId>,
        status: RouteStatus,
        #[serde(default)]
        cost_s: Option<f64>,
    },
    /// Reply to a sensor update, with the event set sizes after ingest.
    Ack {
        source: SourceId,
        n_eve: usize,
        l_eve: usize,
    },
    Error {
        code: String,
        detail: String,
    },
}

fn error(code: &str, detail: impl Into<String>) -> ServiceMessage {
    ServiceMessage::Error {
        code: code.into(),
        detail: detail.into(),
    }
}

/// Twin plus the sensing layout the service accepts.
#[derive(Debug, Clone)]
pub struct ServiceState {
    net: Arc<TrafficNetwork>,
    twin: TwinState,
    thresholds: EventThresholds,
    /// Coverage of RSU `i + 1`; empty means any RSU id sees the whole network.
    rsus: Vec<Coverage>,
    full: Option<Coverage>,
}

impl ServiceState {
    pub fn new(sc: &SimulationScenario) -> Self {
        let net = sc.network.clone();
        let rsus: Vec<Coverage> = sc
            .sensing
            .rsus
            .iter()
            .map(|r| Coverage::rsu(&net, r.node, r.radius_m))
            .collect();
        let full = (rsus.is_empty() || sc.sensing.full_coverage).then(|| Coverage::full(&net));
        ServiceState {
            twin: TwinState::new(&net, sc.thresholds.accident_window_s + 4.0 * sc.dt_s),
            thresholds: sc.thresholds,
            net,
            rsus,
            full,
        }
    }

    pub fn twin(&self) -> &TwinState {
        &self.twin
    }

    fn coverage(&self, source: SourceId, links: &[WireLink]) -> std::result::Result<Coverage, ServiceMessage> {
        match source.kind {
            SourceKind::Rsu => {
                if self.rsus.is_empty() {
                    return Ok(self.full.clone().expect("full coverage without RSUs"));
                }
                match source.id {
                    0 => self.full.clone().ok_or_else(|| error("unknown_element", "RSU 0 is not configured")),
                    i if i <= self.rsus.len() => Ok(self.rsus[i - 1].clone()),
                    i => Err(error("unknown_element", format!("RSU {i} is not configured"))),
                }
            }
            SourceKind::Cav => match links {
                [] => Ok(Coverage::default()),
                [l] => match self.net.link_between(l.from, l.to) {
                    Some(id) => Ok(Coverage::cav(&self.net, id)),
                    None => Err(error("unknown_element", format!("no link {} -> {}", l.from, l.to))),
                },
                _ => Err(error("coverage", "a CAV reports at most one link")),
            },
        }
    }

    fn sensor_update(
        &mut self,
        source: SourceId,
        time_s: Option<f64>,
        links: Vec<WireLink>,
        nodes: Vec<WireNode>,
    ) -> ServiceMessage {
        let cov = match self.coverage(source, &links) {
            Ok(c) => c,
            Err(e) => return e,
        };
        let t = time_s.unwrap_or(self.twin.now());
        let mut obs = Observation {
            time_s: t,
            links: Vec::with_capacity(links.len()),
            nodes: Vec::with_capacity(nodes.len()),
        };
        for l in &links {
            let Some(id) = self.net.link_between(l.from, l.to) else {
                return error("unknown_element", format!("no link {} -> {}", l.from, l.to));
            };
            let volume = l.volume.or(self.twin.volume(id)).unwrap_or(0.0);
            obs.links.push(LinkObservation {
                link: id,
                volume,
                min_speed_mps: l.speed_mps,
                occupied: volume > 0.0,
                event: l.event,
            });
        }
        for n in &nodes {
            if !self.net.contains(n.node) {
                return error("unknown_element", format!("no node {}", n.node));
            }
            obs.nodes.push(NodeObservation {
                node: n.node,
                ped_density: n.ped_density,
                event: n.event,
            });
        }
        let src = SensingSource {
            id: source,
            coverage: cov,
        };
        if let Err(e) = ingest_observation(&mut self.twin, &src, &obs, true) {
            return error("coverage", e.to_string());
        }
        self.twin.advance_clock(t);
        update_events(&mut self.twin, &self.thresholds);
        ServiceMessage::Ack {
            source,
            n_eve: self.twin.node_events().len(),
            l_eve: self.twin.link_events().len(),
        }
    }

    fn route_request(&self, vehicle: VehicleId, position: NodeId, destination: NodeId) -> ServiceMessage {
        for n in [position, destination] {
            if !self.net.contains(n) {
                return error("unknown_element", format!("no node {n}"));
            }
        }
        if position == destination {
            return error("degenerate_request", format!("position equals destination ({position})"));
        }
        let matrix = match build_journey_matrix(&self.net, &twin_volumes(&self.twin, &self.net)) {
            Ok(m) => mask_events(&m, &self.twin.event_sets()),
            Err(e) => return error("internal", e.to_string()),
        };
        match dijkstra_fastest(&matrix, position, destination) {
            Ok(Some(p)) => ServiceMessage::RouteResponse {
                vehicle,
                route: p.nodes,
                status: RouteStatus::Ok,
                cost_s: Some(p.cost.seconds()),
            },
            Ok(None) => ServiceMessage::RouteResponse {
                vehicle,
                route: Vec::new(),
                status: RouteStatus::Unreachable,
                cost_s: None,
            },
            Err(e) => error("internal", e.to_string()),
        }
    }

    fn handle(&mut self, line: &str) -> ServiceMessage {
        let v: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return error("parse", e.to_string()),
        };
        let Some(kind) = v.get("type").and_then(Value::as_str) else {
            return error("parse", "missing string field `type`");
        };
        if !matches!(kind, "sensor_update" | "route_request") {
            return error("unknown_type", format!("cannot handle `{kind}`"));
        }
        match serde_json::from_value::<ServiceMessage>(v) {
            Ok(ServiceMessage::SensorUpdate {
                source,
                time_s,
                links,
                nodes,
            }) => self.sensor_update(source, time_s, links, nodes),
            Ok(ServiceMessage::RouteRequest {
                vehicle,
                position,
                destination,
            }) => self.route_request(vehicle, position, destination),
            Ok(_) => unreachable!("type checked above"),
            Err(e) => error("parse", e.to_string()),
        }
    }
}

/// Answers one request line with one response line (no trailing newline).
pub fn handle_line(state: &mut ServiceState, line: &str) -> String {
    let reply = state.handle(line.trim());
    serde_json::to_string(&reply).expect("messages serialise")
}

type Job = (String, mpsc::Sender<String>);

pub struct ServiceHandle {
    addr: SocketAddr,
    accept: JoinHandle<()>,
}

impl ServiceHandle {
    /// Binds `addr` and starts serving in background threads.
    pub fn start(state: ServiceState, addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| Error::Runtime(format!("cannot bind {addr}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Runtime(e.to_string()))?;
        let (tx, rx) = mpsc::channel::<Job>();
        thread::spawn(move || {
            let mut state = state;
            for (line, reply) in rx {
                let _ = reply.send(handle_line(&mut state, &line));
            }
        });
        let accept = thread::spawn(move || {
            for conn in listener.incoming() {
                match conn {
                    Ok(stream) => {
                        let tx = tx.clone();
                        thread::spawn(move || {
                            if let Err(e) = connection(stream, tx) {
                                warn!("connection closed: {e}");
                            }
                        });
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        });
        info!("serving on {addr}");
        Ok(ServiceHandle { addr, accept })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the listener stops.
    pub fn join(self) {
        let _ = self.accept.join();
    }
}

fn connection(stream: TcpStream, tx: mpsc::Sender<Job>) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut out = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        let line = String::from_utf8_lossy(&buf);
        if line.trim().is_empty() {
            continue;
        }
        let (rtx, rrx) = mpsc::channel();
        if tx.send((line.into_owned(), rtx)).is_err() {
            return Ok(());
        }
        let Ok(mut reply) = rrx.recv() else {
            return Ok(());
        };
        reply.push('\n');
        out.write_all(reply.as_bytes())?;
    }
}

/// Serves on `127.0.0.1:port` until the process ends. Port 0 picks a free
/// port; the bound address is printed to stdout.
pub fn cmd_serve(sc: &SimulationScenario, port: u16) -> Result<()> {
    let handle = ServiceHandle::start(ServiceState::new(sc), &format!("127.0.0.1:{port}"))?;
    println!("listening on {}", handle.local_addr());
    let _ = std::io::stdout().flush();
    handle.join();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Link, Node};

    fn diamond_state() -> ServiceState {
        let nodes = (1..=4)
            .map(|i| Node {
                id: NodeId(i),
                x_m: i as f64 * 10.0,
                y_m: 0.0,
            })
            .collect();
        let link = |a, b| Link {
            from: NodeId(a),
            to: NodeId(b),
            length_m: 100.0,
            v_free_mps: 10.0,
            k_max_veh_per_m: 0.15,
        };
        let net = TrafficNetwork::new(nodes, vec![link(1, 2), link(1, 3), link(2, 4), link(3, 4)]).unwrap();
        ServiceState::new(&SimulationScenario::with_network(Arc::new(net)))
    }

    fn reply(state: &mut ServiceState, line: &str) -> ServiceMessage {
        serde_json::from_str(&handle_line(state, line)).unwrap()
    }

    #[test]
    fn event_link_is_avoided() {
        let mut s = diamond_state();
        let before = reply(&mut s, r#"{"type":"route_request","vehicle":1,"position":1,"destination":4}"#);
        assert!(matches!(before, ServiceMessage::RouteResponse { ref route, .. } if route == &[NodeId(1), NodeId(2), NodeId(4)]));
        let ack = reply(
            &mut s,
            r#"{"type":"sensor_update","source":{"kind":"rsu","id":1},"links":[{"from":2,"to":4,"event":true}]}"#,
        );
        assert!(matches!(ack, ServiceMessage::Ack { l_eve: 1, .. }));
        let after = reply(&mut s, r#"{"type":"route_request","vehicle":1,"position":1,"destination":4}"#);
        match after {
            ServiceMessage::RouteResponse { route, status, .. } => {
                assert_eq!(status, RouteStatus::Ok);
                assert_eq!(route, vec![NodeId(1), NodeId(3), NodeId(4)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_codes() {
        let mut s = diamond_state();
        let code = |m: ServiceMessage| match m {
            ServiceMessage::Error { code, .. } => code,
            other => panic!("{other:?}"),
        };
        assert_eq!(code(reply(&mut s, "not json")), "parse");
        assert_eq!(code(reply(&mut s, r#"{"type":"hello"}"#)), "unknown_type");
        assert_eq!(
            code(reply(&mut s, r#"{"type":"route_request","vehicle":1,"position":4,"destination":4}"#)),
            "degenerate_request"
        );
        assert_eq!(
            code(reply(&mut s, r#"{"type":"route_request","vehicle":1,"position":9,"destination":4}"#)),
            "unknown_element"
        );
        assert_eq!(
            code(reply(
                &mut s,
                r#"{"type":"sensor_update","source":{"kind":"cav","id":3},"links":[{"from":1,"to":2},{"from":2,"to":4}]}"#
            )),
            "coverage"
        );
        assert_eq!(code(reply(&mut s, r#"{"type":"route_request","vehicle":1}"#)), "parse");
    }

    #[test]
    fn cav_sees_only_its_link() {
        let mut s = diamond_state();
        let m = reply(
            &mut s,
            r#"{"type":"sensor_update","source":{"kind":"cav","id":3},"links":[{"from":1,"to":2,"volume":4}],"nodes":[{"node":3,"ped_density":2.0}]}"#,
        );
        assert!(matches!(m, ServiceMessage::Error { ref code, .. } if code == "coverage"));
    }

    #[test]
    fn repeated_requests_match() {
        let mut s = diamond_state();
        let q = r#"{"type":"route_request","vehicle":7,"position":1,"destination":4}"#;
        assert_eq!(handle_line(&mut s, q), handle_line(&mut s, q));
    }
}
