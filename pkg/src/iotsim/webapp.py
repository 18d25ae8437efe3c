"""HTTP and WebSocket API over a runtime.

Handlers serialize against the kernel through the runtime lock: the stepper
thread holds it for the duration of a tick, so mutations land exactly at tick
boundaries and reads see tick-consistent state.
"""

from __future__ import annotations

import asyncio
import threading
import time
from typing import Any, Optional

from fastapi import FastAPI, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, HTMLResponse

from .broker import BrokerError
from .scenario import Runtime
from .service import ServiceError


def _error(status: int, code: str, message: str, position: Optional[dict] = None):
    body: dict[str, Any] = {"code": code, "message": message}
    if position is not None:
        body["position"] = position
    return JSONResponse(status_code=status, content=body)


def _fahrenheit(value: float) -> float:
    return value * 9.0 / 5.0 + 32.0


class LiveRunner:
    """Advances the kernel at a fixed pace on a background thread."""

    def __init__(self, runtime: Runtime, tick_rate: float = 10.0):
        self.runtime = runtime
        self.tick_rate = tick_rate
        self.lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, name="kernel", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)

    def _loop(self) -> None:
        period = 1.0 / self.tick_rate if self.tick_rate > 0 else 0.0
        while not self._stop.is_set():
            started = time.monotonic()
            with self.lock:
                self.runtime.kernel.step()
            elapsed = time.monotonic() - started
            if period > elapsed:
                time.sleep(period - elapsed)


def make_app(
    runtime: Runtime,
    runner: Optional[LiveRunner] = None,
    ui_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="iotsim", version="0.1.0")
    service = runtime.service
    lock = runner.lock if runner is not None else threading.Lock()

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    @app.exception_handler(ServiceError)
    async def service_error(_req: Request, exc: ServiceError):
        status = 404 if exc.code.startswith("Unknown") else 400
        return _error(status, exc.code, str(exc))

    @app.exception_handler(BrokerError)
    async def broker_error(_req: Request, exc: BrokerError):
        return _error(400, type(exc).__name__, str(exc))

    # -- devices ------------------------------------------------------------

    @app.get("/devices")
    def devices():
        return service.snapshot().get("devices", [])

    @app.get("/devices/{device_id}")
    def device(device_id: int, userId: Optional[int] = None):
        for row in service.snapshot().get("devices", []):
            if row["id"] == device_id:
                return _personalize(row, userId)
        return _error(404, "UnknownDevice", f"no device {device_id}")

    def _personalize(row: dict, user_id: Optional[int]) -> dict:
        if user_id is None:
            return row
        user = service.users.get(user_id)
        if user is None or user.preferences.get("units") != "imperial":
            return row
        spec = runtime.registry.devices.get(row["id"])
        if spec is None:
            return row
        units = {s.property: runtime.registry.things[s.thing].property(s.property).unit
                 for s in spec.sensors if s.thing in runtime.registry.things}
        converted = dict(row)
        converted["values"] = {
            prop: (_fahrenheit(v) if units.get(prop) == "c" and isinstance(v, float) else v)
            for prop, v in row["values"].items()
        }
        return converted

    @app.post("/devices/{device_id}/commands")
    async def post_command(device_id: int, request: Request):
        payload = await request.json()
        user_id = payload.get("userId", 0)
        with lock:
            req = service.issue_command(
                user_id, device_id, payload.get("resourceId", 0), payload.get("value")
            )
            return {"id": req.id, "outcome": req.outcome}

    # -- telemetry ------------------------------------------------------------

    @app.get("/telemetry")
    def telemetry(deviceId: int, property: str, sinceTick: int = 0,
                  userId: Optional[int] = None):
        with lock:
            series = service._series.get((deviceId, property), [])
            rows = [{"tick": t, "value": v} for t, v in series if t >= sinceTick]
        user = service.users.get(userId) if userId is not None else None
        if user is not None and user.preferences.get("units") == "imperial":
            spec = runtime.registry.devices.get(deviceId)
            unit = ""
            if spec is not None:
                for s in spec.sensors:
                    if s.property == property and s.thing in runtime.registry.things:
                        unit = runtime.registry.things[s.thing].property(s.property).unit
            if unit == "c":
                rows = [
                    {"tick": r["tick"],
                     "value": _fahrenheit(r["value"]) if isinstance(r["value"], float) else r["value"]}
                    for r in rows
                ]
        return rows

    # -- users ------------------------------------------------------------------

    @app.post("/users")
    async def post_user(request: Request):
        payload = await request.json()
        with lock:
            user = service.create_user(
                payload.get("name", ""), payload.get("email", ""),
                payload.get("preferences"),
            )
        return {"id": user.id, "name": user.name, "email": user.email,
                "preferences": user.preferences}

    @app.get("/users/{user_id}")
    def get_user(user_id: int):
        user = service.users.get(user_id)
        if user is None:
            return _error(404, "UnknownUser", f"no user {user_id}")
        return {"id": user.id, "name": user.name, "email": user.email,
                "preferences": user.preferences}

    @app.post("/subscriptions")
    async def post_subscription(request: Request):
        payload = await request.json()
        with lock:
            sub = service.subscribe_user(payload.get("userId", 0),
                                         payload.get("pattern", ""))
        return {"id": sub.id, "userId": sub.user_id, "pattern": sub.pattern}

    @app.delete("/subscriptions/{sub_id}")
    def delete_subscription(sub_id: str):
        with lock:
            service.unsubscribe_user(sub_id)
        return {"id": sub_id, "deleted": True}

    # -- notifications ---------------------------------------------------------------

    @app.get("/notifications")
    def notifications(userId: int):
        with lock:
            return [
                {"id": n.id, "message": n.message, "tick": n.tick, "read": n.read,
                 "envelopeId": n.envelope_id}
                for n in service.notifications
                if n.user_id == userId
            ]

    @app.post("/notifications/{notification_id}/read")
    def read_notification(notification_id: str):
        with lock:
            service.mark_read(notification_id)
        return {"id": notification_id, "read": True}

    # -- loops / plans -----------------------------------------------------------------

    @app.get("/loops")
    def loops():
        return service.snapshot().get("loops", [])

    @app.get("/loops/{loop_id}")
    def loop(loop_id: str):
        for row in service.snapshot().get("loops", []):
            if row["id"] == loop_id:
                return row
        return _error(404, "UnknownLoop", f"no loop {loop_id}")

    @app.get("/plans")
    def plans(region: Optional[str] = None):
        rows = service.snapshot().get("plans", [])
        if region is not None:
            rows = [p for p in rows if region in p.get("scope", [])]
        return rows

    # -- rules ----------------------------------------------------------------------------

    @app.post("/rules")
    async def post_rule(request: Request):
        text = (await request.body()).decode("utf-8")
        with lock:
            result = service.submit_rule(text)
        if "error" in result:
            err = result["error"]
            return _error(400, err["code"], err["message"], err.get("position"))
        return result

    @app.get("/rules")
    def rules():
        return service.snapshot().get("rules", [])

    # -- dashboard ---------------------------------------------------------------------------

    @app.get("/dashboard/snapshot")
    def snapshot():
        return service.snapshot()

    @app.get("/", response_class=HTMLResponse)
    def index():
        target = "/ui/" if ui_dir else "/dashboard/snapshot"
        return f'<html><body><h1>iotsim</h1><p><a href="{target}">{target}</a></p></body></html>'

    @app.websocket("/events")
    async def events(ws: WebSocket, topic: str = Query(default="")):
        await ws.accept()
        with lock:
            queue = service.add_stream(topic)
        try:
            while True:
                sent = False
                while queue:
                    await ws.send_json(queue.popleft())
                    sent = True
                if not sent:
                    await asyncio.sleep(0.02)
        except WebSocketDisconnect:
            pass
        finally:
            with lock:
                service.remove_stream(queue)

    return app
