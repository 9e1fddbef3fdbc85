"""Smoke test for the twinroute_py extension.

Build and install first:  pip install --no-build-isolation ./crates/py
Then:                     python crates/py/python/smoke_test.py
"""

import json
import math
import pathlib

import twinroute_py as tr

ROOT = pathlib.Path(__file__).resolve().parents[3]
INF = math.inf


def main():
    assert tr.journey_time(100.0, 10.0, 0.15, 0.0) == 10.0
    assert math.isinf(tr.journey_time(100.0, 10.0, 0.15, 15.0))
    assert abs(tr.request_distance(20 / 3.6) - 5.0625) < 1e-3

    rows = [
        [INF, 75.0, 70.0, INF],
        [INF, INF, INF, 75.0],
        [INF, INF, INF, 70.0],
        [INF, INF, INF, INF],
    ]
    nodes, cost = tr.dijkstra(rows, 1, 4)
    assert nodes == [1, 3, 4] and cost == 140.0
    masked = tr.mask_events(rows, nodes=[3])
    assert tr.dijkstra(masked, 1, 4) == ([1, 2, 4], 150.0)
    assert tr.dijkstra(tr.mask_events(masked, links=[(2, 4)]), 1, 4) is None

    net = tr.Network.load(str(ROOT / "scenarios" / "network.json"))
    assert (net.node_count, net.link_count) == (90, 504)
    assert net.to_json() == tr.Network.grid().to_json()
    free = net.journey_matrix([0.0] * net.link_count)
    assert len(free) == 90

    lat = tr.LatencyModel.measured()
    lo, hi = lat.svc_bounds()
    draws = lat.sample_service(1000, seed=3)
    assert all(lo <= t <= hi for t in draws)
    assert draws == lat.sample_service(1000, seed=3)
    report = lat.kpi(samples=20000)
    assert report["all_pass"], report["text"]

    sc = tr.Scenario.load(str(ROOT / "scenarios" / "baseline.json"))
    sc.seed = 7
    m = sc.run()
    assert m == sc.run()
    assert m["overall"]["spawned"] == sc.n_vel
    print(m["csv"], end="")

    svc = tr.Service(sc)
    reply = json.loads(svc.handle(json.dumps(
        {"type": "route_request", "vehicle": 1, "position": 1, "destination": 90})))
    assert reply["status"] == "ok" and reply["route"][-1] == 90
    assert json.loads(svc.handle("nonsense"))["code"] == "parse"

    print("smoke test ok")


if __name__ == "__main__":
    main()
