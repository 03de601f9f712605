"""Record real gateway message streams for the UI conformance tests.

Each scenario drives a scripted session over the live WebSocket
protocol and captures every frame in order (requests sent, responses
and events received), plus the model facts the UI must reconstruct at
the end. The frontend test suite replays the streams against the
SessionModel and compares.

Usage: python scripts/record_ui_fixtures.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from fastapi.testclient import TestClient

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from conftest import RACE, CHOICE_FAULT, depth_program, list_program  # noqa: E402
from mirsim import parse_program  # noqa: E402
from mirsim.gateway import make_app  # noqa: E402
from mirsim.session import Session  # noqa: E402

OUT = ROOT / "frontend" / "tests" / "fixtures" / "streams.json"


class Recorder:
    def __init__(self, source: str):
        self.session = Session(parse_program(source), ["."])
        self.client = TestClient(make_app(self.session, ui_dir=None))
        self.stream: list[dict] = []
        self.next_id = 1

    def run(self, requests: list[dict]) -> None:
        with self.client.websocket_connect("/session") as ws:
            for req in requests:
                req = {"id": self.next_id, **req}
                self.next_id += 1
                self.stream.append({"dir": "send", "msg": req})
                ws.send_text(json.dumps(req))
                while True:
                    msg = ws.receive_json()
                    self.stream.append({"dir": "recv", "msg": msg})
                    if msg.get("id") == req["id"]:
                        break

    def expectations(self, graph_req: dict | None = None) -> dict:
        from mirsim.machine import status_label

        s = self.session
        expect: dict = {
            "states": [r.names[0] for r in s.records],
            "current": s.records[s.current_index].name,
            "locked": [
                r.names[0]
                for r in s.records
                if s.lock is not None and list(r.prefix) == s.lock[: len(r.prefix)]
            ],
            "status": status_label(s.machine.status),
            "pending": None
            if s.pending is None
            else {"total": s.pending[0], "kind": s.pending[1]},
            "backtrace": [f[0] for f in s.backtrace()] if s.machine.position() else [],
        }
        if graph_req is not None:
            from mirsim.gateway import graph_payload

            payload = graph_payload(s, graph_req["path"], graph_req["depth"])
            expect["graph"] = {
                "nodes": sorted(n["id"] for n in payload["nodes"]),
                "edges": sorted(
                    [e["from"], e["to"], e["label"]] for e in payload["edges"]
                ),
            }
        return expect


def scenario_list_graph() -> dict:
    r = Recorder(list_program(3))
    graph_req = {"cmd": "graph", "path": "$frame", "depth": 4}
    r.run(
        [
            {"cmd": "step", "count": 200},
            {"cmd": "rewind", "target": "#1"},
            {"cmd": "states"},
            {"cmd": "backtrace"},
            {"cmd": "position"},
            graph_req,
        ]
    )
    return {
        "name": "list-graph",
        "stream": r.stream,
        "expect": r.expectations({"path": "$frame", "depth": 4}),
    }


def scenario_race_pending() -> dict:
    r = Recorder(RACE)
    r.run(
        [
            {"cmd": "run"},
            {"cmd": "states"},
            {"cmd": "position"},
            {"cmd": "backtrace"},
        ]
    )
    return {"name": "race-pending", "stream": r.stream, "expect": r.expectations()}


def scenario_counterexample_lock() -> dict:
    r = Recorder(RACE)
    res = r.session.explore(4000)
    assert res.trace is not None
    r.run(
        [
            {"cmd": "trace-load", "trace": [list(c) for c in res.trace]},
            {"cmd": "states"},
            {"cmd": "position"},
            {"cmd": "backtrace"},
        ]
    )
    return {"name": "counterexample-lock", "stream": r.stream, "expect": r.expectations()}


def scenario_override_clears_suffix() -> dict:
    r = Recorder(RACE)
    res = r.session.explore(4000)
    r.run(
        [
            {"cmd": "trace-load", "trace": [list(c) for c in res.trace]},
            # to the second interrupt: the next step would consume lock[1]
            {"cmd": "step", "count": 5},
            {"cmd": "choose", "taken": 0},  # user override
            {"cmd": "states"},
            {"cmd": "position"},
            {"cmd": "backtrace"},
        ]
    )
    assert r.session.lock is not None and len(r.session.lock) == r.session.lock_pos
    return {
        "name": "override-clears-suffix",
        "stream": r.stream,
        "expect": r.expectations(),
    }


def scenario_choice_to_fault() -> dict:
    r = Recorder(CHOICE_FAULT)
    r.run(
        [
            {"cmd": "step", "count": 1},
            {"cmd": "position"},
            {"cmd": "choose", "taken": 1},
            {"cmd": "step", "count": 10},
            {"cmd": "states"},
            {"cmd": "backtrace"},
        ]
    )
    return {"name": "choice-to-fault", "stream": r.stream, "expect": r.expectations()}


def scenario_depth_backtrace() -> dict:
    r = Recorder(depth_program(4))
    r.run(
        [
            {"cmd": "step", "count": 500},
            {"cmd": "rewind", "target": "#1"},
            {"cmd": "states"},
            {"cmd": "backtrace"},
            {"cmd": "position"},
            {"cmd": "source", "context": 2},
        ]
    )
    return {"name": "depth-backtrace", "stream": r.stream, "expect": r.expectations()}


def main() -> None:
    scenarios = [
        scenario_list_graph(),
        scenario_race_pending(),
        scenario_counterexample_lock(),
        scenario_override_clears_suffix(),
        scenario_choice_to_fault(),
        scenario_depth_backtrace(),
    ]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(scenarios, indent=1))
    print(f"wrote {OUT} ({len(scenarios)} scenarios, "
          f"{sum(len(s['stream']) for s in scenarios)} frames)")


if __name__ == "__main__":
    main()
