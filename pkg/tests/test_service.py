import io
import threading
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from PIL import Image

from thforge.config import ServiceConfig, desk_model_config
from thforge.model.net import DualHeadNet
from thforge.service import create_app


def png_bytes(w=320, h=200, seed=0) -> bytes:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    m = DualHeadNet(desk_model_config())
    m.eval()
    return m


@pytest.fixture()
def client(model):
    app = create_app(ServiceConfig(), model=model)
    return TestClient(app)


def upload(data: bytes):
    return {"file": ("card.png", data, "image/png")}


class TestHealth:
    def test_healthz(self, client):
        r = client.get("/healthz")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "model_loaded": True}


class TestDetect:
    def test_valid_png_returns_score(self, client):
        r = client.post("/detect", files=upload(png_bytes()))
        assert r.status_code == 200
        body = r.json()
        assert body["label"] in ("attack", "bona_fide")
        assert 0.0 <= body["score"] <= 1.0
        assert body["threshold"] == 0.80
        assert body["label"] == ("attack" if body["score"] >= 0.80 else "bona_fide")

    def test_zero_byte_upload_is_415(self, client):
        r = client.post("/detect", files=upload(b""))
        assert r.status_code == 415

    def test_undecodable_upload_is_415(self, client):
        r = client.post("/detect", files=upload(b"definitely not an image"))
        assert r.status_code == 415

    def test_oversize_upload_is_413(self, model):
        app = create_app(ServiceConfig(max_upload_bytes=1000), model=model)
        c = TestClient(app)
        r = c.post("/detect", files=upload(png_bytes()))
        assert r.status_code == 413

    def test_identical_image_identical_score(self, client):
        data = png_bytes(seed=5)
        s1 = client.post("/detect", files=upload(data)).json()["score"]
        s2 = client.post("/detect", files=upload(data)).json()["score"]
        assert s1 == s2


class TestLocalize:
    def test_mask_at_original_resolution(self, client):
        r = client.post("/localize", files=upload(png_bytes(w=800, h=600)))
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        mask = Image.open(io.BytesIO(r.content))
        assert mask.size == (800, 600)
        assert mask.mode == "L"

    def test_binary_mask_values(self, client):
        r = client.post("/localize", files=upload(png_bytes()))
        values = set(np.unique(np.asarray(Image.open(io.BytesIO(r.content)))))
        assert values <= {0, 255}

    def test_soft_mask_is_linear_8bit(self, client):
        r = client.post("/localize", params={"soft": "true"}, files=upload(png_bytes()))
        arr = np.asarray(Image.open(io.BytesIO(r.content)))
        assert arr.dtype == np.uint8
        assert 0 <= arr.min() and arr.max() <= 255

    def test_binary_equals_soft_thresholded(self, client):
        data = png_bytes(seed=9)
        hard = np.asarray(Image.open(io.BytesIO(
            client.post("/localize", files=upload(data)).content)))
        soft = np.asarray(Image.open(io.BytesIO(
            client.post("/localize", params={"soft": "true"}, files=upload(data)).content)))
        assert np.array_equal(hard > 0, soft >= 0.10 * 255.0)


class TestCombined:
    def test_headers_present_and_parseable(self, client):
        r = client.post("/detect_and_localize", files=upload(png_bytes()))
        assert r.status_code == 200
        score = float(r.headers["X-Detection-Score"])
        assert 0.0 <= score <= 1.0
        assert r.headers["X-Detection-Label"] in ("attack", "bona_fide")

    def test_score_header_format(self, client):
        r = client.post("/detect_and_localize", files=upload(png_bytes()))
        text = r.headers["X-Detection-Score"]
        whole, frac = text.split(".")
        assert whole in ("0", "1") and len(frac) == 6

    def test_header_matches_detect_endpoint(self, client):
        data = png_bytes(seed=11)
        combined = float(client.post("/detect_and_localize",
                                     files=upload(data)).headers["X-Detection-Score"])
        detect = client.post("/detect", files=upload(data)).json()["score"]
        assert abs(combined - detect) < 1e-6

    def test_single_forward_pass_per_request(self, client):
        before = client.app.state.forward_count
        r = client.post("/detect_and_localize", files=upload(png_bytes()))
        assert r.status_code == 200
        assert client.app.state.forward_count == before + 1

    def test_mask_body_matches_localize(self, client):
        data = png_bytes(seed=13)
        combined = client.post("/detect_and_localize", files=upload(data)).content
        localized = client.post("/localize", files=upload(data)).content
        assert combined == localized


class TestAdmissionControl:
    def test_excess_requests_rejected_quickly(self, model):
        cfg = ServiceConfig(max_concurrent_inferences=1, debug_delay_ms=700)
        app = create_app(cfg, model=model)
        with TestClient(app) as client:
            results = []

            def fire():
                t0 = time.monotonic()
                r = client.post("/detect", files=upload(png_bytes()))
                results.append((r.status_code, time.monotonic() - t0))

            threads = [threading.Thread(target=fire) for _ in range(3)]
            [t.start() for t in threads]
            [t.join() for t in threads]
        codes = sorted(code for code, _ in results)
        assert codes.count(200) >= 1
        assert codes.count(503) >= 1
        rejected = [dt for code, dt in results if code == 503]
        assert min(rejected) < 0.1  # rejection within 100 ms

    def test_slots_released_after_completion(self, model):
        cfg = ServiceConfig(max_concurrent_inferences=1)
        app = create_app(cfg, model=model)
        client = TestClient(app)
        for _ in range(3):
            assert client.post("/detect", files=upload(png_bytes())).status_code == 200


class TestSingleTaskModels:
    def test_seg_only_model_rejects_detect(self):
        torch.manual_seed(0)
        m = DualHeadNet(desk_model_config(multitask=False, single_task="seg"))
        client = TestClient(create_app(ServiceConfig(), model=m))
        assert client.post("/detect", files=upload(png_bytes())).status_code == 409
        assert client.post("/localize", files=upload(png_bytes())).status_code == 200

    def test_det_only_model_rejects_localize(self):
        torch.manual_seed(0)
        m = DualHeadNet(desk_model_config(multitask=False, single_task="det"))
        client = TestClient(create_app(ServiceConfig(), model=m))
        assert client.post("/localize", files=upload(png_bytes())).status_code == 409
        assert client.post("/detect", files=upload(png_bytes())).status_code == 200
