"""HTTP management API and event stream over a live simulation run.

Endpoints:
  GET  /api/devices                                  fleet status
  GET  /api/devices/{dev}                            one device's services
  GET  /api/devices/{dev}/services/{svc}             service detail + energy
  POST /api/devices/{dev}/services/{svc}/actions     lifecycle orchestration
  GET  /api/summary                                  live-vs-baseline report
  GET  /api/stream                                   server-sent events

The stream replays the full event backlog to each new subscriber before
switching to live events, so a client attaching mid-run sees a consistent
history. Commands accepted by POST are dispatched at the next simulated
instant and produce exactly one ack event.
"""
from __future__ import annotations

import json
import queue
import threading
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .control import OrchestrationError
from .model import LifecycleAction, Policy, ScenarioConfig, s_from_ms
from .report import build_summary
from .runner import RunResult, SimulationRun, run_scenario
from .scenario import ScenarioValidationError, parse_service_descriptor

_REASON_STATUS = {"unknown_target": 404, "illegal_action": 409, "invalid_request": 400}

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class StreamHub:
    """Fan-out for run events. Subscribers get the full backlog first, then
    live events in publish order; both happen under one lock so no event can
    be missed or duplicated in between."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._backlog: list[dict] = []
        self._queues: list[queue.SimpleQueue] = []

    def publish(self, event: dict) -> None:
        with self._lock:
            self._backlog.append(event)
            for q in self._queues:
                q.put(event)

    def subscribe(self) -> tuple[list[dict], queue.SimpleQueue]:
        with self._lock:
            q: queue.SimpleQueue = queue.SimpleQueue()
            backlog = list(self._backlog)
            self._queues.append(q)
            return backlog, q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._lock:
            if q in self._queues:
                self._queues.remove(q)


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(
        self,
        address: tuple[str, int],
        run: SimulationRun,
        baseline: RunResult,
        hub: StreamHub,
        static_dir: Optional[str | Path] = None,
    ):
        super().__init__(address, _Handler)
        self.run = run
        self.baseline = baseline
        self.hub = hub
        self.static_root = Path(static_dir).resolve() if static_dir else None
        self.stopping = False

    @property
    def port(self) -> int:
        return self.server_address[1]


class _Handler(BaseHTTPRequestHandler):
    server: ApiServer
    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        pass

    # -- helpers ---------------------------------------------------------------

    def _send_json(self, status: int, body: dict) -> None:
        data = json.dumps(body, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _segments(self) -> list[str]:
        path = self.path.split("?", 1)[0]
        return [seg for seg in path.split("/") if seg]

    # -- GET ---------------------------------------------------------------------

    def do_GET(self) -> None:  # noqa: N802 - stdlib casing
        seg = self._segments()
        run = self.server.run
        if seg[:2] == ["api", "stream"] and len(seg) == 2:
            self._handle_stream()
            return
        if seg[:2] == ["api", "summary"] and len(seg) == 2:
            with run.lock:
                summary = build_summary(run.snapshot_result(), self.server.baseline)
                summary["run_complete"] = run.run_complete
                summary["now_s"] = s_from_ms(run.now_ms)
            self._send_json(200, summary)
            return
        if seg[:2] == ["api", "devices"]:
            self._handle_devices(seg[2:])
            return
        if seg and seg[0] == "api":
            self._send_json(404, {"error": "not found"})
            return
        self._handle_static(seg)

    def _handle_devices(self, rest: list[str]) -> None:
        run = self.server.run
        with run.lock:
            if not rest:
                self._send_json(
                    200,
                    {
                        "devices": run.control.snapshot(),
                        "now_s": s_from_ms(run.now_ms),
                        "run_complete": run.run_complete,
                        "policy": run.policy.value,
                        "speedup": run.speedup,
                    },
                )
                return
            device_id = rest[0]
            if len(rest) == 1:
                for entry in run.control.snapshot():
                    if entry["device_id"] == device_id:
                        entry["now_s"] = s_from_ms(run.now_ms)
                        self._send_json(200, entry)
                        return
                self._send_json(404, {"error": f"unknown device {device_id!r}"})
                return
            if len(rest) == 3 and rest[1] == "services":
                service_id = rest[2]
                detail = run.control.service_detail(device_id, service_id)
                if detail is None:
                    self._send_json(
                        404, {"error": f"unknown service {device_id}/{service_id}"}
                    )
                    return
                trace = run.traces.get(device_id)
                if trace is not None:
                    attributed = sum(
                        (
                            ev.charge_mA_ms()
                            for ev in trace.events
                            if ev.attributed_service == service_id
                        ),
                        Fraction(0),
                    )
                    detail["energy"] = {
                        "attributed_mA_s": float(attributed / 1000),
                        "device_total_mA_s": float(trace.total_charge_mA_s()),
                    }
                self._send_json(200, detail)
                return
        self._send_json(404, {"error": "not found"})

    def _handle_stream(self) -> None:
        backlog, q = self.server.hub.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Connection", "close")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            for event in backlog:
                self._write_sse(event)
            while not self.server.stopping:
                try:
                    event = q.get(timeout=1.0)
                except queue.Empty:
                    self.wfile.write(b": keep-alive\n\n")
                    self.wfile.flush()
                    continue
                self._write_sse(event)
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.server.hub.unsubscribe(q)

    def _write_sse(self, event: dict) -> None:
        data = json.dumps(event, sort_keys=True)
        name = event.get("type", "message")
        self.wfile.write(f"event: {name}\ndata: {data}\n\n".encode("utf-8"))
        self.wfile.flush()

    def _handle_static(self, seg: list[str]) -> None:
        root = self.server.static_root
        if root is None:
            self._send_json(404, {"error": "not found"})
            return
        rel = "/".join(seg) if seg else "index.html"
        target = (root / rel).resolve()
        if not target.is_relative_to(root) or not target.is_file():
            self._send_json(404, {"error": "not found"})
            return
        body = target.read_bytes()
        self.send_response(200)
        self.send_header(
            "Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        )
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    # -- POST ----------------------------------------------------------------------

    def do_POST(self) -> None:  # noqa: N802 - stdlib casing
        seg = self._segments()
        if (
            len(seg) != 6
            or seg[:2] != ["api", "devices"]
            or seg[3] != "services"
            or seg[5] != "actions"
        ):
            self._send_json(404, {"error": "not found"})
            return
        device_id, service_id = seg[2], seg[4]

        length = int(self.headers.get("Content-Length") or 0)
        if length > 65536:
            self._send_json(400, {"error": "request body too large"})
            return
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._send_json(400, {"error": "body is not valid JSON"})
            return
        if not isinstance(body, dict) or not isinstance(body.get("action"), str):
            self._send_json(400, {"error": "body must carry an action string"})
            return
        try:
            action = LifecycleAction(body["action"])
        except ValueError:
            self._send_json(400, {"error": f"unknown action {body['action']!r}"})
            return
        descriptor = None
        if "descriptor" in body:
            try:
                descriptor = parse_service_descriptor(body["descriptor"])
            except ScenarioValidationError as exc:
                self._send_json(400, {"error": "invalid descriptor", "details": exc.errors})
                return
        try:
            command_id = self.server.run.submit_action(device_id, service_id, action, descriptor)
        except OrchestrationError as exc:
            status = _REASON_STATUS.get(exc.reason, 400)
            self._send_json(status, {"error": str(exc), "reason": exc.reason})
            return
        self._send_json(202, {"command_id": command_id, "status": "accepted"})


def make_server(
    run: SimulationRun,
    baseline: RunResult,
    hub: StreamHub,
    host: str = "127.0.0.1",
    port: int = 0,
    static_dir: Optional[str | Path] = None,
) -> ApiServer:
    return ApiServer((host, port), run, baseline, hub, static_dir)


class ServeHandle:
    """A live run plus its HTTP server, each on their own thread."""

    def __init__(
        self,
        server: ApiServer,
        run: SimulationRun,
        baseline: RunResult,
        hub: StreamHub,
        sim_thread: threading.Thread,
        http_thread: threading.Thread,
    ):
        self.server = server
        self.run = run
        self.baseline = baseline
        self.hub = hub
        self.sim_thread = sim_thread
        self.http_thread = http_thread

    @property
    def port(self) -> int:
        return self.server.port

    def stop(self) -> None:
        self.server.stopping = True
        self.server.shutdown()
        self.server.server_close()


def baseline_window_events(baseline: RunResult) -> dict[str, list[dict]]:
    windows: dict[str, list[dict]] = {}
    for device_id, trace in baseline.traces.items():
        rows = []
        for idx in range(trace.window_count):
            start, end = trace.window_bounds(idx)
            rows.append(
                {
                    "device_id": device_id,
                    "window_start_s": s_from_ms(start),
                    "window_end_s": s_from_ms(end),
                    "variant": "baseline",
                    "avg_current_mA": float(trace.window_charge(idx).avg_current_mA()),
                }
            )
        windows[device_id] = rows
    return windows


def start_server(
    scenario: ScenarioConfig,
    seed: int,
    *,
    host: str = "127.0.0.1",
    port: int = 0,
    policy: Optional[Policy] = None,
    speedup: Optional[float] = None,
    static_dir: Optional[str | Path] = None,
    paced: bool = True,
) -> ServeHandle:
    """Run the baseline twin, then serve the paced live run over HTTP."""
    baseline = run_scenario(scenario, seed, policy=Policy.manual, paced=False)
    hub = StreamHub()
    run = SimulationRun(
        scenario,
        seed,
        policy=policy,
        paced=paced,
        speedup=speedup,
        sink=hub.publish,
        baseline_windows=baseline_window_events(baseline),
    )
    server = make_server(run, baseline, hub, host=host, port=port, static_dir=static_dir)
    sim_thread = threading.Thread(target=run.run, name="edgefleet-sim", daemon=True)
    http_thread = threading.Thread(
        target=server.serve_forever, name="edgefleet-http", daemon=True
    )
    sim_thread.start()
    http_thread.start()
    return ServeHandle(server, run, baseline, hub, sim_thread, http_thread)
