"""Tuner backend: sessions, live recompute on parameter change, frame
streaming, ROI distance queries.

Each session owns one compute worker thread and a single pending-parameters
slot, so rapid updates coalesce (latest wins). Published frames are
immutable snapshots; subscribers receive events in generation order and a
late subscriber immediately gets the latest frame.
"""

from __future__ import annotations

import asyncio
import base64
import queue
import secrets
import threading
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from fastapi import FastAPI, HTTPException, Request, UploadFile, WebSocket
from fastapi.responses import FileResponse, HTMLResponse, Response
from fastapi.websockets import WebSocketDisconnect

from .calib import StereoRig
from .depth import Roi, roi_average_disparity, roi_distance, NoValidPixelsError
from .image import load_pnm, pseudocolor, save_pfm, save_pnm
from .sgm import SgmParams, SgmParamError, compute_disparity

__all__ = ["create_app", "SessionManager", "TunerSession"]


@dataclass(frozen=True)
class Frame:
    generation: int
    params: SgmParams
    disparity: np.ndarray
    compute_ms: float


@dataclass
class _Subscriber:
    events: "queue.Queue[Frame | None]" = field(default_factory=queue.Queue)


class TunerSession:
    def __init__(self, left: np.ndarray, right: np.ndarray, rig: StereoRig | None,
                 params: SgmParams):
        if left.shape != right.shape:
            raise ValueError(f"left/right size mismatch: {left.shape} vs {right.shape}")
        params.validated()
        self.id = secrets.token_hex(8)
        self.left = left
        self.right = right
        self.rig = rig
        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self.params = params
        self.generation = 0
        self._pending: tuple[SgmParams, int] | None = (params, 0)
        self.latest: Frame | None = None
        self._subscribers: list[_Subscriber] = []
        self._closed = False
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    # -- worker ------------------------------------------------------------
    def _run(self):
        while True:
            with self._wake:
                while self._pending is None and not self._closed:
                    self._wake.wait()
                if self._closed:
                    return
                params, generation = self._pending
                self._pending = None
            start = time.perf_counter()
            disp = compute_disparity(self.left, self.right, params.validated())
            compute_ms = (time.perf_counter() - start) * 1e3
            frame = Frame(generation=generation, params=params, disparity=disp,
                          compute_ms=compute_ms)
            with self._lock:
                self.latest = frame
                subscribers = list(self._subscribers)
            for sub in subscribers:
                sub.events.put(frame)

    # -- control -----------------------------------------------------------
    def update_params(self, updates: dict) -> tuple[SgmParams, int]:
        with self._wake:
            merged = self.params.merged(updates)
            merged.validated()  # reject before touching state
            self.params = merged
            self.generation += 1
            self._pending = (merged, self.generation)
            self._wake.notify()
            return merged, self.generation

    def subscribe(self) -> _Subscriber:
        sub = _Subscriber()
        with self._lock:
            self._subscribers.append(sub)
            if self.latest is not None:
                sub.events.put(self.latest)
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def close(self):
        with self._wake:
            self._closed = True
            self._wake.notify_all()

    def wait_for_generation(self, generation: int, timeout: float = 30.0) -> Frame:
        """Block until a frame with generation >= the requested one is published."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if self.latest is not None and self.latest.generation >= generation:
                    return self.latest
            time.sleep(0.005)
        raise TimeoutError(f"no frame at generation {generation} within {timeout}s")


class SessionManager:
    def __init__(self):
        self._sessions: dict[str, TunerSession] = {}
        self._lock = threading.Lock()

    def create(self, left, right, rig, params) -> TunerSession:
        session = TunerSession(left, right, rig, params)
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> TunerSession:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session

    def close_all(self):
        with self._lock:
            sessions = list(self._sessions.values())
        for s in sessions:
            s.close()


def _load_samples(samples_dir=None):
    if samples_dir is not None:
        from pathlib import Path

        d = Path(samples_dir)
        left = load_pnm((d / "left.pgm").read_bytes())
        right = load_pnm((d / "right.pgm").read_bytes())
        rig = StereoRig.from_json((d / "rig.json").read_text())
        return left, right, rig
    pkg = resources.files("stereopipe") / "samples"
    left = load_pnm((pkg / "left.pgm").read_bytes())
    right = load_pnm((pkg / "right.pgm").read_bytes())
    rig = StereoRig.from_json((pkg / "rig.json").read_text())
    return left, right, rig


def _poll_queue(q: "queue.Queue[Frame]") -> Frame | None:
    try:
        return q.get(timeout=0.05)
    except queue.Empty:
        return None


def _frame_payload(frame: Frame, lo: float, hi: float, want_pfm: bool) -> dict:
    color = pseudocolor(frame.disparity, lo, hi)
    payload = {
        "type": "frame",
        "generation": frame.generation,
        "params": {k: v for k, v in vars(frame.params).items()},
        "compute_ms": round(frame.compute_ms, 3),
        "image_b64": base64.b64encode(save_pnm(color)).decode("ascii"),
    }
    if want_pfm:
        payload["pfm_b64"] = base64.b64encode(save_pfm(frame.disparity)).decode("ascii")
    return payload


def create_app(samples_dir=None) -> FastAPI:
    app = FastAPI(title="stereopipe tuner")
    manager = SessionManager()
    app.state.sessions = manager

    def get_session(session_id: str) -> TunerSession:
        try:
            return manager.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.post("/api/session")
    async def create_session(
        left: UploadFile | None = None,
        right: UploadFile | None = None,
        rig: UploadFile | None = None,
        params: UploadFile | None = None,
    ):
        try:
            if left is not None and right is not None:
                left_img = load_pnm(await left.read())
                right_img = load_pnm(await right.read())
                rig_obj = StereoRig.from_json((await rig.read()).decode()) if rig else None
            else:
                left_img, right_img, rig_obj = _load_samples(samples_dir)
            if params is not None:
                p = SgmParams.from_json((await params.read()).decode())
            else:
                p = SgmParams()
            session = manager.create(left_img, right_img, rig_obj, p)
        except (SgmParamError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"id": session.id, "width": left_img.shape[1], "height": left_img.shape[0],
                "has_rig": rig_obj is not None}

    @app.get("/api/session/{session_id}/params")
    async def get_params(session_id: str):
        session = get_session(session_id)
        return {"version": "sgm-v1", **vars(session.params),
                "generation": session.generation}

    @app.patch("/api/session/{session_id}/params")
    async def patch_params(session_id: str, request: Request):
        session = get_session(session_id)
        updates = await request.json()
        try:
            accepted, generation = session.update_params(updates)
        except SgmParamError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"params": vars(accepted), "generation": generation}

    @app.post("/api/session/{session_id}/roi")
    async def query_roi(session_id: str, request: Request):
        session = get_session(session_id)
        body = await request.json()
        try:
            roi = Roi(x=int(body["x"]), y=int(body["y"]), w=int(body["w"]), h=int(body["h"]))
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"bad roi: {exc}")
        with session._lock:
            frame = session.latest
        if frame is None:
            raise HTTPException(status_code=409, detail="no frame computed yet")
        disp = frame.disparity
        try:
            roi.check_inside(disp.shape[1], disp.shape[0])
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        patch = disp[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w]
        valid_fraction = float(np.isfinite(patch).mean())
        mean_disp = roi_average_disparity(disp, roi)
        result = {
            "mean_disparity": None if np.isnan(mean_disp) else mean_disp,
            "valid_fraction": valid_fraction,
            "generation": frame.generation,
        }
        if session.rig is not None and valid_fraction > 0:
            try:
                result["distance_m"] = roi_distance(disp, roi, session.rig)
            except NoValidPixelsError:
                pass
        return result

    @app.get("/api/session/{session_id}/disparity.pfm")
    async def get_disparity(session_id: str):
        session = get_session(session_id)
        with session._lock:
            frame = session.latest
        if frame is None:
            raise HTTPException(status_code=409, detail="no frame computed yet")
        return Response(content=save_pfm(frame.disparity),
                        media_type="application/octet-stream",
                        headers={"X-Generation": str(frame.generation)})

    @app.websocket("/api/session/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str,
                     lo: float = 0.0, hi: float = 64.0, pfm: int = 0):
        await websocket.accept()
        try:
            session = manager.get(session_id)
        except KeyError:
            await websocket.send_json({"type": "error", "message": f"unknown session {session_id}"})
            await websocket.close()
            return
        sub = session.subscribe()
        # Poll the event queue with a timeout so the handler can notice a
        # client disconnect (recv_task resolving) even when no frames arrive.
        recv_task = asyncio.ensure_future(websocket.receive())
        try:
            while not recv_task.done():
                frame = await asyncio.to_thread(_poll_queue, sub.events)
                if frame is None:
                    continue
                await websocket.send_json(_frame_payload(frame, lo, hi, bool(pfm)))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv_task.cancel()
            session.unsubscribe(sub)

    @app.get("/", response_class=HTMLResponse)
    async def index():
        ui = resources.files("stereopipe") / "webui" / "index.html"
        if ui.is_file():
            return HTMLResponse(ui.read_text())
        return HTMLResponse("<h1>stereopipe tuner</h1><p>UI assets not built.</p>")

    @app.get("/app.js")
    async def app_js():
        ui = resources.files("stereopipe") / "webui" / "app.js"
        if not ui.is_file():
            raise HTTPException(status_code=404, detail="UI assets not built")
        return Response(content=ui.read_bytes(), media_type="text/javascript")

    return app
