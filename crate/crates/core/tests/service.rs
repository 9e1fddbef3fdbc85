use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};

use serde_json::{json, Value};
use twinroute::harness::{ServiceHandle, ServiceState};
use twinroute::sim::SimulationScenario;

struct Client {
    out: TcpStream,
    inp: BufReader<TcpStream>,
}

impl Client {
    fn connect(addr: &str) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        Client {
            out: s.try_clone().unwrap(),
            inp: BufReader::new(s),
        }
    }

    fn send(&mut self, line: &str) -> Value {
        self.out.write_all(line.as_bytes()).unwrap();
        self.out.write_all(b"\n").unwrap();
        let mut buf = String::new();
        self.inp.read_line(&mut buf).unwrap();
        serde_json::from_str(&buf).unwrap()
    }
}

fn baseline() -> SimulationScenario {
    SimulationScenario::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/baseline.json")).unwrap()
}

fn start() -> (ServiceHandle, String) {
    let h = ServiceHandle::start(ServiceState::new(&baseline()), "127.0.0.1:0").unwrap();
    let a = h.local_addr().to_string();
    (h, a)
}

fn request(v: u64, from: u64, to: u64) -> String {
    json!({"type": "route_request", "vehicle": v, "position": from, "destination": to}).to_string()
}

#[test]
fn route_then_event_then_reroute() {
    let (_h, addr) = start();
    let mut c = Client::connect(&addr);
    let r = c.send(&request(1, 1, 90));
    assert_eq!(r["type"], "route_response");
    assert_eq!(r["status"], "ok");
    let route: Vec<u64> = serde_json::from_value(r["route"].clone()).unwrap();
    assert_eq!((route[0], *route.last().unwrap()), (1, 90));

    let (a, b) = (route[1], route[2]);
    let ack = c.send(
        &json!({"type": "sensor_update", "source": {"kind": "cav", "id": 5},
                "links": [{"from": a, "to": b, "volume": 1, "event": true}]})
        .to_string(),
    );
    assert_eq!(ack["type"], "ack", "{ack}");
    assert_eq!(ack["l_eve"], 1);

    let r2 = c.send(&request(1, 1, 90));
    let route2: Vec<u64> = serde_json::from_value(r2["route"].clone()).unwrap();
    assert!(!route2.windows(2).any(|w| w == [a, b]), "{route2:?} uses {a}->{b}");
}

#[test]
fn bad_lines_get_errors_and_the_connection_survives() {
    let (_h, addr) = start();
    let mut c = Client::connect(&addr);
    assert_eq!(c.send("{{{ garbage")["code"], "parse");
    assert_eq!(c.send(r#"{"type":"teleport"}"#)["code"], "unknown_type");
    assert_eq!(c.send(&request(1, 7, 7))["code"], "degenerate_request");
    assert_eq!(c.send(&request(1, 7, 9999))["code"], "unknown_element");
    assert_eq!(c.send(&request(1, 1, 2))["status"], "ok");
}

#[test]
fn identical_requests_identical_replies_across_clients() {
    let (_h, addr) = start();
    let mut a = Client::connect(&addr);
    let mut b = Client::connect(&addr);
    let q = request(3, 12, 77);
    let ra = a.send(&q);
    assert_eq!(ra, b.send(&q));
    assert_eq!(ra, a.send(&q));
}

#[test]
fn binary_serves_on_requested_port() {
    let sc = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/baseline.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_twinroute"))
        .args(["serve", "--scenario", sc.to_str().unwrap(), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("banner").to_string();
    let r = Client::connect(&addr).send(&request(1, 1, 90));
    child.kill().unwrap();
    let _ = child.wait();
    assert_eq!(r["status"], "ok");
}
