"""Operator bridge: HTTP wire protocol over a paused-at-deferral kernel.

The kernel runs on the calling thread; the HTTP server runs on its own
thread. The two meet only at deferral barriers: when c2 enqueues a deferral
the kernel blocks here until a decision is POSTed or the wall-clock timeout
expires, which maps the deferral onto its simulated deadline. Decisions are
applied at a deterministic simulated instant, so a live session and a
scripted replay of the same decisions produce identical traces.

Wire protocol (also consumed by the browser console and the scripted test
driver):

  GET  /state      JSON snapshot taken at kernel pause points
  GET  /events     server-sent stream of trace records (id = seq,
                   Last-Event-ID or ?since= resumes)
  GET  /trace      full trace so far as JSONL
  POST /decisions  {"deferral_id": n, "decision": "approve"|"deny",
                    "rationale": str} -> {"ok": true} or {"ok": false,
                   "error": "unknown-deferral"|"already-resolved"|...}
"""

from __future__ import annotations

import json
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from .engine import Engine
from .kernel import EventRecord
from .scenario import ScenarioConfig


class AddressInUse(Exception):
    pass


class InteractiveSession:
    """Runs one scenario with the operator in the loop over HTTP."""

    def __init__(self, config: ScenarioConfig, host: str = "127.0.0.1", port: int = 8717,
                 wall_timeout: Optional[float] = None,
                 static_dir: Optional[Path] = None) -> None:
        self.config = config
        self.wall_timeout = wall_timeout
        self.static_dir = static_dir
        self.lock = threading.Lock()
        # (micros, seq) is strictly increasing along the trace; seq alone is not
        self.trace_lines: list[tuple[tuple[int, int], str]] = []
        self.trace_cond = threading.Condition(self.lock)
        self.snapshot: dict = {"status": "starting", "time": "0.000000",
                               "paused_on": None, "deferrals": [],
                               "nodes": [], "agents": []}
        self.decisions: "queue.Queue[dict]" = queue.Queue()
        self.decided: set[int] = set()
        self.known_deferrals: set[int] = set()
        self.finished = threading.Event()

        self.engine = Engine(config, decision_provider=self)
        self.engine.sim.add_trace_listener(self._on_trace)
        self.engine.sim.add_post_dispatch_check(self._maybe_publish)

        handler = _make_handler(self)
        try:
            self.httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise AddressInUse(f"cannot listen on {host}:{port}: {exc}") from exc
        self.host, self.port = self.httpd.server_address[0], self.httpd.server_address[1]
        self._server_thread = threading.Thread(target=self.httpd.serve_forever,
                                               name="operator-bridge", daemon=True)

    # --- kernel-thread side -------------------------------------------------

    def run(self) -> list[EventRecord]:
        self._server_thread.start()
        self._publish(status="running")
        trace = self.engine.run()
        self._publish(status="finished")
        self.finished.set()
        return trace

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def decide(self, view: dict) -> Optional[tuple[str, str]]:
        """Deferral barrier: block until a decision arrives or the wall clock
        maps the deferral onto its simulated deadline."""
        with self.lock:
            self.known_deferrals.add(view["deferral_id"])
        self._publish(status="paused", paused_on=view)
        timeout = self.wall_timeout
        if timeout is None:
            # 1:1 mapping of remaining simulated time to wall seconds
            timeout = max(0.0, _seconds(view["deadline"]) - _seconds(view["enqueued_at"]))
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                entry = self.decisions.get(timeout=remaining)
            except queue.Empty:
                break
            if entry["deferral_id"] == view["deferral_id"]:
                self._publish(status="running", paused_on=None)
                return entry["decision"], entry.get("rationale", "")
        self._publish(status="running", paused_on=None)
        return None

    def _on_trace(self, record: EventRecord) -> None:
        with self.trace_cond:
            self.trace_lines.append(((record.t.micros, record.seq), record.to_jsonl()))
            self.trace_cond.notify_all()

    def _maybe_publish(self, record: EventRecord) -> None:
        if record.kind.startswith("deferral-") or record.kind in (
                "agent-installed", "quarantine"):
            if record.kind in ("deferral-resolved", "deferral-expired"):
                with self.lock:
                    self.decided.add(record.details.get("deferral_id", -1))
            self._publish(status="running")

    def _publish(self, status: str, paused_on: Optional[dict] = "unchanged") -> None:
        engine = self.engine
        nodes = []
        for node in engine.topology.nodes.values():
            nodes.append({
                "id": node.id, "kind": node.kind.value,
                "isolation": node.isolation, "in_bounds": node.in_bounds,
                "agents": sorted(node.installed_agents),
                "compromised": node.id in engine.compromised_nodes,
                "blocked": node.id in engine.blocked_nodes,
            })
        agents = []
        for agent_id, state in engine.blue_states.items():
            if agent_id in engine.removed:
                continue
            agents.append({
                "id": agent_id, "node": state.node_id, "phase": state.phase.value,
                "quarantined": agent_id in engine.quarantined,
                "honeypot_active": state.honeypot_active,
                "mode": state.policy.mode.value,
            })
        with self.lock:
            last_id = _event_id(self.trace_lines[-1][0]) if self.trace_lines else ""
        snapshot = {
            "status": status,
            "time": engine.sim.now.format(),
            "scenario": engine.config.name,
            "deferrals": [d.view() for d in engine.c2_state.deferral_queue],
            "nodes": nodes,
            "agents": agents,
            "last_event_id": last_id,
        }
        with self.lock:
            if paused_on == "unchanged":
                snapshot["paused_on"] = self.snapshot.get("paused_on")
            else:
                snapshot["paused_on"] = paused_on
            self.snapshot = snapshot

    # --- http-thread side ----------------------------------------------------

    def submit_decision(self, payload: dict) -> tuple[int, dict]:
        try:
            deferral_id = int(payload["deferral_id"])
            decision = payload["decision"]
        except (KeyError, TypeError, ValueError):
            return 400, {"ok": False, "error": "malformed-decision"}
        if decision not in ("approve", "deny"):
            return 400, {"ok": False, "error": "unknown-decision"}
        with self.lock:
            if deferral_id in self.decided:
                return 409, {"ok": False, "error": "already-resolved"}
            if deferral_id not in self.known_deferrals:
                return 404, {"ok": False, "error": "unknown-deferral"}
            self.decided.add(deferral_id)
        self.decisions.put({"deferral_id": deferral_id, "decision": decision,
                            "rationale": payload.get("rationale", "")})
        return 200, {"ok": True}

    def state_json(self) -> bytes:
        with self.lock:
            return json.dumps(self.snapshot, sort_keys=True).encode()

    def trace_since(self, since: tuple[int, int]) -> list[tuple[tuple[int, int], str]]:
        with self.lock:
            return [(key, line) for key, line in self.trace_lines if key > since]


SINCE_BEGINNING = (-1, -1)


def _event_id(key: tuple[int, int]) -> str:
    return f"{key[0]}-{key[1]}"


def _parse_event_id(raw: str) -> tuple[int, int]:
    micros, _, seq = raw.partition("-")
    return int(micros), int(seq)


def _seconds(formatted: str) -> float:
    return float(formatted)


def _make_handler(session: InteractiveSession):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep stdout clean for the CLI
            pass

        def _json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            parsed = urlparse(self.path)
            if parsed.path == "/state":
                body = session.state_json()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            elif parsed.path == "/events":
                self._stream_events(parsed)
            elif parsed.path == "/trace":
                lines = session.trace_since(SINCE_BEGINNING)
                body = "".join(line + "\n" for _, line in lines).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            else:
                self._static(parsed.path)

        def _static(self, path: str) -> None:
            if session.static_dir is None:
                self._json(404, {"ok": False, "error": "not-found"})
                return
            name = "index.html" if path in ("/", "") else path.lstrip("/")
            target = (session.static_dir / name).resolve()
            if not str(target).startswith(str(session.static_dir.resolve())) \
                    or not target.is_file():
                self._json(404, {"ok": False, "error": "not-found"})
                return
            body = target.read_bytes()
            ctype = {"html": "text/html", "js": "text/javascript",
                     "css": "text/css", "map": "application/json",
                     "json": "application/json"}.get(target.suffix.lstrip("."),
                                                     "application/octet-stream")
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _stream_events(self, parsed) -> None:
            since = SINCE_BEGINNING
            params = parse_qs(parsed.query)
            try:
                if "since" in params:
                    since = _parse_event_id(params["since"][0])
                elif self.headers.get("Last-Event-ID"):
                    since = _parse_event_id(self.headers["Last-Event-ID"])
            except ValueError:
                pass
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-store")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            try:
                while True:
                    batch = session.trace_since(since)
                    for key, line in batch:
                        self.wfile.write(
                            f"id: {_event_id(key)}\ndata: {line.strip()}\n\n".encode())
                        since = key
                    self.wfile.flush()
                    with session.trace_cond:
                        if not session.trace_lines or session.trace_lines[-1][0] <= since:
                            if session.finished.is_set():
                                break
                            session.trace_cond.wait(timeout=0.5)
            except (BrokenPipeError, ConnectionResetError):
                pass

        def do_POST(self):
            parsed = urlparse(self.path)
            if parsed.path != "/decisions":
                self._json(404, {"ok": False, "error": "not-found"})
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                payload = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                self._json(400, {"ok": False, "error": "malformed-json"})
                return
            status, body = session.submit_decision(payload)
            self._json(status, body)

    return Handler


def serve_interactive(config: ScenarioConfig, host: str, port: int,
                      wall_timeout: Optional[float] = None,
                      linger: Optional[float] = None,
                      static_dir: Optional[Path] = None) -> InteractiveSession:
    """Run a scenario with the operator bridge; returns after the run (plus linger)."""
    session = InteractiveSession(config, host, port, wall_timeout, static_dir)
    print(f"operator bridge listening on http://{session.host}:{session.port}",
          flush=True)
    session.run()
    if linger is None:
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
    elif linger > 0:
        time.sleep(linger)
    session.shutdown()
    return session
