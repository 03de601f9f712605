"""Local HTTP/WebSocket gateway between a session and the browser UI.

GET / serves the static UI bundle (when built); ws://host:port/session
carries JSON messages.  Requests mirror the CLI verbs plus `graph`
(node/edge lists rather than DOT) and `source`/`position` resyncs; every
request gets exactly one response tagged with the client's correlation
id, and session events (state-minted, choice-pending, position,
terminal, rewound) are broadcast to every connected client.

All mutating requests are serialized through the session's command
lock, which the CLI shares, so interleaved clients can never observe a
half-applied command.  The gateway never blocks waiting for the UI: an
unanswered choice parks the session in the pending state and is
announced as an event; any client (or the CLI) may answer it later.

The message schema is documented in docs/protocol.md and versioned with
a "proto": 1 field.
"""

from __future__ import annotations

import asyncio
import json
import os
import threading
import time

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, HTMLResponse
import uvicorn

from .debug import build_graph, render_node
from .session import (
    ChoicePending,
    Session,
    SessionError,
    format_trace,
    parse_trace_text,
)
from .machine import status_label
from .mir import ParseError

PROTO = 1

_PLACEHOLDER = """<!doctype html>
<html><head><title>mirsim</title></head>
<body><h1>mirsim gateway</h1>
<p>The browser UI bundle is not built. Build it with
<code>cd frontend &amp;&amp; npm install &amp;&amp; npm run build</code>,
or talk to <code>ws://this-host/session</code> directly.</p>
</body></html>"""


def _find_ui_dir() -> str | None:
    candidates = []
    env = os.environ.get("MIRSIM_UI_DIR")
    if env:
        candidates.append(env)
    here = os.path.dirname(os.path.abspath(__file__))
    candidates.append(os.path.join(os.getcwd(), "frontend"))
    candidates.append(os.path.normpath(os.path.join(here, "..", "..", "frontend")))
    for c in candidates:
        if os.path.exists(os.path.join(c, "index.html")):
            return c
    return None


def graph_payload(session: Session, path: str, depth: int) -> dict:
    """Node/edge lists for the UI; same sets as render_dot emits."""
    node = session.show(path)
    nodes, edges = build_graph(node, depth)
    return {
        "nodes": [
            {
                "id": n.id,
                "label": n.label,
                "attributes": [[k, v] for k, v in n.attributes],
                "components": list(n.components),
            }
            for n in nodes
        ],
        "edges": [{"from": e.src, "to": e.dst, "label": e.label} for e in edges],
    }


class Gateway:
    """Shared state: connected clients plus the event fan-out."""

    def __init__(self, session: Session):
        self.session = session
        self.lock = session.command_lock
        self.clients: set[WebSocket] = set()
        self.loop: asyncio.AbstractEventLoop | None = None
        session.on_event.append(self._on_event)

    def _on_event(self, event: dict) -> None:
        loop = self.loop
        if loop is None or not self.clients:
            return
        message = dict(event)
        message["proto"] = PROTO
        try:
            asyncio.run_coroutine_threadsafe(self._broadcast(message), loop)
        except RuntimeError:
            pass  # loop already closed: nobody left to notify

    async def _broadcast(self, message: dict) -> None:
        for ws in list(self.clients):
            try:
                await ws.send_json(message)
            except Exception:
                self.clients.discard(ws)

    # -- request dispatch (runs under the command lock) -------------------

    def dispatch(self, request: dict) -> dict:
        cmd = request.get("cmd")
        if not isinstance(cmd, str):
            raise SessionError("request needs a 'cmd' string")
        s = self.session
        handler = getattr(self, f"_cmd_{cmd.replace('-', '_')}", None)
        if handler is None:
            raise SessionError(f"unknown request {cmd!r}")
        return handler(s, request)

    def _cmd_start(self, s: Session, req: dict):
        s.rewind("#start")
        return {"state": "#start"}

    def _cmd_step(self, s: Session, req: dict):
        kind = req.get("kind", "instr")
        s.step(kind, int(req.get("count", 1)))
        return self._position(s)

    def _cmd_next(self, s: Session, req: dict):
        s.step("line", int(req.get("count", 1)))
        return self._position(s)

    def _cmd_over(self, s: Session, req: dict):
        s.step("over", int(req.get("count", 1)))
        return self._position(s)

    def _cmd_run(self, s: Session, req: dict):
        events = s.run_until_break()
        messages = [m for ev in events for m in ev.messages]
        return {"messages": messages, **self._position(s)}

    def _cmd_break(self, s: Session, req: dict):
        bid = s.add_breakpoint(req["spec"])
        return {"id": bid, "spec": s.breakpoints[bid].describe()}

    def _cmd_delete(self, s: Session, req: dict):
        s.delete_breakpoint(int(req["id"]))
        return {}

    def _cmd_backtrace(self, s: Session, req: dict):
        thread = req.get("thread")
        frames = s.backtrace(None if thread is None else int(thread))
        return {
            "frames": [
                {
                    "index": i,
                    "function": fname,
                    "file": loc.file if loc else None,
                    "line": loc.line if loc else None,
                }
                for i, (fname, loc, _) in enumerate(frames)
            ]
        }

    def _cmd_source(self, s: Session, req: dict):
        window = s.source(int(req.get("context", 3)))
        if window is None:
            return {"window": None}
        return {
            "window": {
                "file": window.file,
                "first_line": window.first_line,
                "lines": list(window.lines),
                "highlight": window.highlight,
            }
        }

    def _cmd_show(self, s: Session, req: dict):
        node = s.show(req["path"])
        return {
            "kind": node.kind,
            "attributes": [[k, v] for k, v in node.attributes],
            "components": [name for name, _ in node.components()],
            "relations": [name for name, _ in node.relations()],
            "lines": render_node(node),
        }

    def _cmd_states(self, s: Session, req: dict):
        def locked(rec) -> bool:
            if s.lock is None:
                return False
            prefix = list(rec.prefix)
            return prefix == s.lock[: len(prefix)]

        return {
            "states": [
                {
                    "names": list(r.names),
                    "status": status_label(r.status),
                    "locked": locked(r),
                }
                for r in s.records
            ],
            "current": s.records[s.current_index].name,
        }

    def _cmd_name(self, s: Session, req: dict):
        s.name_state(req["state"], req["alias"])
        return {}

    def _cmd_rewind(self, s: Session, req: dict):
        rec = s.rewind(req["target"])
        return {"state": rec.name, **self._position(s)}

    def _cmd_trace_save(self, s: Session, req: dict):
        trace = s.save_trace()
        return {"trace": [list(c) for c in trace], "text": format_trace(trace)}

    def _cmd_trace_load(self, s: Session, req: dict):
        if "text" in req:
            trace = parse_trace_text(req["text"])
        else:
            trace = [tuple(entry) for entry in req["trace"]]
        boundaries = s.load_trace(trace)
        return {"choices": len(trace), "states": boundaries}

    def _cmd_explore(self, s: Session, req: dict):
        result = s.explore(int(req.get("max", 10_000)))
        return {
            "trace": None if result.trace is None else [list(c) for c in result.trace],
            "states": result.states,
        }

    def _cmd_graph(self, s: Session, req: dict):
        return graph_payload(s, req["path"], int(req.get("depth", 3)))

    def _cmd_thread(self, s: Session, req: dict):
        s.pick_thread(int(req["index"]))
        return self._position(s)

    def _cmd_choose(self, s: Session, req: dict):
        s.queue_choice(int(req["taken"]))
        return self._position(s)

    def _cmd_position(self, s: Session, req: dict):
        return self._position(s)

    @staticmethod
    def _position(s: Session) -> dict:
        from .machine import AtInterrupt

        pos = s.machine.position()
        pending = s.pending
        lock = None
        if s.lock is not None:
            nxt = s.lock[s.lock_pos] if s.lock_pos < len(s.lock) else None
            lock = {
                "length": len(s.lock),
                "pos": s.lock_pos,
                "next": list(nxt) if nxt else None,
            }
        out = {
            "status": status_label(s.machine.status),
            "pending": None if pending is None else {"total": pending[0], "kind": pending[1]},
            "runnable": list(s.machine.status.runnable)
            if isinstance(s.machine.status, AtInterrupt)
            else None,
            "lock": lock,
        }
        if pos is None:
            out.update({"function": None, "file": None, "line": None, "thread": None})
        else:
            fn, loc, thread = pos
            out.update({
                "function": fn,
                "file": loc.file if loc else None,
                "line": loc.line if loc else None,
                "thread": thread,
            })
        return out


def make_app(session: Session, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="mirsim gateway")
    gateway = Gateway(session)
    app.state.gateway = gateway
    ui_root = ui_dir if ui_dir is not None else _find_ui_dir()

    @app.get("/")
    async def index():
        if ui_root:
            return FileResponse(os.path.join(ui_root, "index.html"))
        return HTMLResponse(_PLACEHOLDER)

    @app.get("/dist/{path:path}")
    async def dist(path: str):
        if not ui_root:
            return HTMLResponse(_PLACEHOLDER, status_code=404)
        full = os.path.normpath(os.path.join(ui_root, "dist", path))
        if not full.startswith(os.path.normpath(os.path.join(ui_root, "dist"))) \
                or not os.path.isfile(full):
            return HTMLResponse("not found", status_code=404)
        return FileResponse(full)

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        if gateway.loop is None:
            gateway.loop = asyncio.get_running_loop()
        gateway.clients.add(ws)
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    request = json.loads(raw)
                except json.JSONDecodeError as e:
                    await ws.send_json(
                        {"proto": PROTO, "id": None, "ok": False,
                         "error": f"malformed JSON: {e}"}
                    )
                    continue
                corr = request.get("id") if isinstance(request, dict) else None
                try:
                    if not isinstance(request, dict):
                        raise SessionError("request must be a JSON object")
                    with gateway.lock:
                        result = gateway.dispatch(request)
                    reply = {"proto": PROTO, "id": corr, "ok": True, "result": result}
                except ChoicePending:
                    reply = {"proto": PROTO, "id": corr, "ok": True,
                             "result": Gateway._position(session)}
                except (SessionError, ParseError, KeyError, ValueError, TypeError) as e:
                    reply = {"proto": PROTO, "id": corr, "ok": False, "error": str(e)}
                except Exception as e:  # never tear down the connection
                    reply = {"proto": PROTO, "id": corr, "ok": False,
                             "error": f"internal error: {type(e).__name__}: {e}"}
                await ws.send_json(reply)
        except WebSocketDisconnect:
            pass
        finally:
            gateway.clients.discard(ws)

    return app


class ServerHandle:
    def __init__(self, server: uvicorn.Server, thread: threading.Thread):
        self._server = server
        self._thread = thread

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=5)


def serve(session: Session, port: int, ui_dir: str | None = None) -> ServerHandle:
    """Serve the gateway on localhost:port in a background thread."""
    app = make_app(session, ui_dir)
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, name="mirsim-gateway", daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if not thread.is_alive():
            raise SessionError(f"gateway failed to start on port {port}")
        if time.monotonic() > deadline:
            server.should_exit = True
            raise SessionError(f"gateway startup timed out on port {port}")
        time.sleep(0.01)
    return ServerHandle(server, thread)
