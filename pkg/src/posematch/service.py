"""HTTP inference service backing the support-annotation UI.

Sessions are in-memory with a TTL; each session stores a keypoint
definition plus K annotated support images. Prediction preprocesses the
query with a whole-image bbox, runs the K-shot matcher and maps decoded
peaks back to original pixels.
"""

from __future__ import annotations

import base64
import binascii
import io
import secrets
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from posematch.data.preprocess import heatmap_to_original, preprocess
from posematch.data.annotations import InstanceAnnotation
from posematch.encoding import sample_to_slots
from posematch.heatmap import decode
from posematch.model import PoseMatcher

MAX_IMAGE_BYTES = 8 * 1024 * 1024
SESSION_TTL_SECONDS = 3600.0


class ServiceError(Exception):
    def __init__(self, status_code: int, error: str, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.error = error
        self.detail = detail


@dataclass
class SupportSession:
    session_id: str
    category_name: str
    keypoint_names: list[str]
    supports: list[tuple[np.ndarray, np.ndarray]]  # (image, J x 2 keypoints)
    created_at: float = field(default_factory=time.time)

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoint_names)


class SessionTable:
    """Thread-safe TTL session store."""

    def __init__(self, ttl: float = SESSION_TTL_SECONDS, clock=time.time):
        self._ttl = ttl
        self._clock = clock
        self._lock = threading.Lock()
        self._sessions: dict[str, SupportSession] = {}

    def put(self, session: SupportSession) -> None:
        with self._lock:
            self._expire_locked()
            session.created_at = self._clock()
            self._sessions[session.session_id] = session

    def get(self, session_id: str) -> SupportSession | None:
        with self._lock:
            self._expire_locked()
            return self._sessions.get(session_id)

    def _expire_locked(self) -> None:
        now = self._clock()
        dead = [sid for sid, s in self._sessions.items()
                if now - s.created_at > self._ttl]
        for sid in dead:
            del self._sessions[sid]


def _decode_image(payload: str, where: str) -> np.ndarray:
    from PIL import Image

    if "," in payload and payload.lstrip().startswith("data:"):
        payload = payload.split(",", 1)[1]
    try:
        blob = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ServiceError(422, "undecodable_image",
                           f"{where}: invalid base64 ({exc})") from exc
    if len(blob) > MAX_IMAGE_BYTES:
        raise ServiceError(413, "image_too_large",
                           f"{where}: image exceeds {MAX_IMAGE_BYTES} bytes")
    try:
        img = Image.open(io.BytesIO(blob)).convert("RGB")
    except Exception as exc:
        raise ServiceError(422, "undecodable_image",
                           f"{where}: cannot decode image ({exc})") from exc
    return np.asarray(img)


def create_app(model: PoseMatcher, model_id: str = "posematch",
               session_table: SessionTable | None = None,
               cors: bool = False) -> FastAPI:
    app = FastAPI(title="posematch inference service")
    sessions = session_table or SessionTable()
    model.eval()

    if cors:
        app.add_middleware(CORSMiddleware, allow_origins=["*"],
                           allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code,
                            content={"error": exc.error, "detail": exc.detail})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "model_id": model_id}

    @app.post("/api/support")
    async def register_support(request: Request):
        try:
            body = await request.json()
        except Exception as exc:
            raise ServiceError(400, "malformed_payload",
                               f"body is not valid JSON ({exc})") from exc
        supports_raw = body.get("supports")
        keypoint_names = body.get("keypoint_names")
        if not isinstance(supports_raw, list) or not supports_raw:
            raise ServiceError(400, "malformed_payload",
                               "'supports' must be a non-empty list")
        if not isinstance(keypoint_names, list) or not keypoint_names:
            raise ServiceError(400, "malformed_payload",
                               "'keypoint_names' must be a non-empty list")
        j = len(keypoint_names)
        if j > model.config.slot_count:
            raise ServiceError(400, "too_many_keypoints",
                               f"model supports at most "
                               f"{model.config.slot_count} keypoints")
        supports = []
        for index, rec in enumerate(supports_raw):
            where = f"supports[{index}]"
            if not isinstance(rec, dict) or "image" not in rec or "keypoints" not in rec:
                raise ServiceError(400, "malformed_payload",
                                   f"{where}: needs 'image' and 'keypoints'")
            image = _decode_image(rec["image"], where)
            pts = np.asarray(rec["keypoints"], dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) != j:
                raise ServiceError(
                    400, "keypoint_mismatch",
                    f"{where}: expected {j} [x, y] keypoints, got "
                    f"{list(pts.shape)}")
            height, width = image.shape[:2]
            outside = ((pts[:, 0] < 0) | (pts[:, 0] > width)
                       | (pts[:, 1] < 0) | (pts[:, 1] > height))
            if outside.any():
                raise ServiceError(400, "keypoint_out_of_bounds",
                                   f"{where}: keypoints outside image bounds")
            supports.append((image, pts))
        session = SupportSession(
            session_id=secrets.token_hex(16),
            category_name=str(body.get("category_name", "custom")),
            keypoint_names=[str(n) for n in keypoint_names],
            supports=supports,
        )
        sessions.put(session)
        return {"session_id": session.session_id, "num_keypoints": j}

    @app.post("/api/predict")
    async def predict(request: Request):
        try:
            body = await request.json()
        except Exception as exc:
            raise ServiceError(400, "malformed_payload",
                               f"body is not valid JSON ({exc})") from exc
        session_id = body.get("session_id")
        if not session_id:
            raise ServiceError(400, "malformed_payload", "'session_id' required")
        session = sessions.get(str(session_id))
        if session is None:
            raise ServiceError(404, "unknown_session",
                               f"no session {session_id} (may have expired)")
        if "image" not in body:
            raise ServiceError(400, "malformed_payload", "'image' required")
        query_image = _decode_image(body["image"], "query")
        start = time.perf_counter()
        keypoints = predict_session(model, session, query_image)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return {
            "keypoints": [[float(x), float(y), float(c)] for x, y, c in keypoints],
            "model_id": model_id,
            "timing_ms": elapsed_ms,
        }

    return app


def _whole_image_instance(image: np.ndarray, keypoints=None,
                          instance_id: int = 0) -> InstanceAnnotation:
    height, width = image.shape[:2]
    kps = (tuple((float(x), float(y), 2) for x, y in keypoints)
           if keypoints is not None else ())
    return InstanceAnnotation(
        id=instance_id, image_ref="<memory>", image_size=(width, height),
        category_id=0, bbox=(0.0, 0.0, float(width), float(height)),
        keypoints=kps)


def predict_session(model: PoseMatcher, session: SupportSession,
                    query_image: np.ndarray) -> np.ndarray:
    """K-shot inference over a session's supports; whole images as bboxes.

    Returns J x (x, y, confidence) in original query pixels.
    """
    config = model.config
    sup_images, sup_heatmaps, sup_valid = [], [], []
    for index, (image, pts) in enumerate(session.supports):
        instance = _whole_image_instance(image, pts, index)
        sample = preprocess(instance, config, augment=False, image=image)
        heatmaps, valid = sample_to_slots(sample, config)
        sup_images.append(torch.from_numpy(sample.image))
        sup_heatmaps.append(heatmaps)
        sup_valid.append(valid)
    query_instance = _whole_image_instance(query_image)
    query_sample = preprocess(query_instance, config, augment=False,
                              image=query_image)
    with torch.no_grad():
        pred, valid = model(
            torch.stack(sup_images).unsqueeze(0),
            torch.stack(sup_heatmaps).unsqueeze(0),
            torch.stack(sup_valid).unsqueeze(0),
            torch.from_numpy(query_sample.image).unsqueeze(0))
    j = session.num_keypoints
    stack = pred[0, :j].double().numpy()
    stack = np.where(valid[0, :j, None, None].numpy(), stack, 0.0)
    peaks = decode(stack)
    pixels = heatmap_to_original(query_sample, peaks[:, :2])
    confidence = np.clip(peaks[:, 2:3], 0.0, 1.0)
    return np.hstack([pixels, confidence])
