"""HTTP inference service: /detect, /localize and /detect_and_localize over a
loaded checkpoint, with bounded-concurrency admission control.

Weights are immutable after startup, so evaluation-mode forwards from the
request threadpool are safe; at most ``max_concurrent_inferences`` run at
once and excess requests are rejected immediately with 503.
"""

from __future__ import annotations

import io
import threading
import time
from contextlib import contextmanager

import cv2
import numpy as np
import torch
from fastapi import FastAPI, File, HTTPException, Response, UploadFile
from PIL import Image

from .config import ServiceConfig
from .data.preprocess import decode_image_bytes, preprocess
from .errors import InputError
from .model.checkpoint import load_checkpoint
from .model.net import DualHeadNet


def create_app(config: ServiceConfig, model: DualHeadNet | None = None) -> FastAPI:
    """Build the service app; loads the checkpoint unless a model is injected."""
    if model is None:
        model, _ = load_checkpoint(config.checkpoint_path)
    model.eval()

    app = FastAPI(title="thforge inference service")
    app.state.model = model
    app.state.config = config
    app.state.forward_count = 0
    app.state.inference_slots = threading.Semaphore(config.max_concurrent_inferences)
    lock = threading.Lock()

    @contextmanager
    def inference_slot():
        if not app.state.inference_slots.acquire(blocking=False):
            raise HTTPException(status_code=503, detail="inference queue full")
        try:
            yield
        finally:
            app.state.inference_slots.release()

    def run_model(data: bytes):
        """Single forward pass; returns (prediction, original (w, h))."""
        if len(data) > config.max_upload_bytes:
            raise HTTPException(status_code=413, detail="upload too large")
        try:
            image = decode_image_bytes(data)
        except InputError as exc:
            raise HTTPException(status_code=415, detail=str(exc)) from exc
        x = preprocess(image, model.config.input_size).unsqueeze(0)
        if config.debug_delay_ms > 0:
            time.sleep(config.debug_delay_ms / 1000.0)
        with torch.no_grad():
            out = model(x)
        with lock:
            app.state.forward_count += 1
        h, w = image.shape[:2]
        return out, (w, h)

    def mask_png(out, size: tuple[int, int], soft: bool) -> bytes:
        if out.mask is None:
            raise HTTPException(status_code=409, detail="model has no segmentation head")
        prob = out.mask[0, 0].numpy()
        w, h = size
        prob = cv2.resize(prob, (w, h), interpolation=cv2.INTER_LINEAR)
        soft8 = np.round(np.clip(prob, 0.0, 1.0) * 255.0).astype(np.uint8)
        if soft:
            payload = soft8
        else:
            payload = np.where(soft8 >= config.segment_threshold * 255.0, 255, 0).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(payload, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def score_of(out) -> float:
        if out.score is None:
            raise HTTPException(status_code=409, detail="model has no detection head")
        return float(out.score[0])

    def label_of(score: float) -> str:
        return "attack" if score >= config.detect_threshold else "bona_fide"

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": app.state.model is not None}

    @app.post("/detect")
    def detect(file: UploadFile = File(...)):
        with inference_slot():
            out, _ = run_model(file.file.read())
        score = score_of(out)
        return {"label": label_of(score), "score": score,
                "threshold": config.detect_threshold}

    @app.post("/localize")
    def localize(file: UploadFile = File(...), soft: bool = False):
        with inference_slot():
            out, size = run_model(file.file.read())
        return Response(content=mask_png(out, size, soft), media_type="image/png")

    @app.post("/detect_and_localize")
    def detect_and_localize(file: UploadFile = File(...), soft: bool = False):
        with inference_slot():
            out, size = run_model(file.file.read())
        score = score_of(out)
        headers = {
            "X-Detection-Score": f"{score:.6f}",
            "X-Detection-Label": label_of(score),
        }
        return Response(content=mask_png(out, size, soft),
                        media_type="image/png", headers=headers)

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service under uvicorn (blocks until interrupted)."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
