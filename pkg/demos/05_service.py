"""Query the inference service in-process: /detect, /localize and the
combined endpoint with its score header.

In production run ``thforge serve --checkpoint <path>``; here the FastAPI app
is driven directly through a test client.
"""
import io

import numpy as np
import torch
from fastapi.testclient import TestClient
from PIL import Image

from thforge import DualHeadNet, ServiceConfig, desk_model_config
from thforge.service import create_app

torch.manual_seed(0)
model = DualHeadNet(desk_model_config())
app = create_app(ServiceConfig(), model=model)
client = TestClient(app)

print("healthz:", client.get("/healthz").json())

rng = np.random.default_rng(0)
card = rng.integers(0, 256, size=(200, 320, 3), dtype=np.uint8)
buf = io.BytesIO()
Image.fromarray(card).save(buf, format="PNG")
upload = {"file": ("card.png", buf.getvalue(), "image/png")}

detect = client.post("/detect", files=upload).json()
print(f"/detect -> label={detect['label']} score={detect['score']:.4f} "
      f"threshold={detect['threshold']}")

mask_resp = client.post("/localize", files=upload)
mask = Image.open(io.BytesIO(mask_resp.content))
print(f"/localize -> {mask.mode} mask at {mask.size} (original resolution)")

soft_resp = client.post("/localize", params={"soft": "true"}, files=upload)
soft = np.asarray(Image.open(io.BytesIO(soft_resp.content)))
print(f"/localize?soft=true -> 8-bit probabilities in [{soft.min()}, {soft.max()}]")

combined = client.post("/detect_and_localize", files=upload)
print(f"/detect_and_localize -> X-Detection-Score: {combined.headers['X-Detection-Score']}, "
      f"X-Detection-Label: {combined.headers['X-Detection-Label']}")
print(f"one forward pass per combined request: {app.state.forward_count} total forwards "
      "after 4 requests")
