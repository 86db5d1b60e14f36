import numpy as np
import pytest
import torch

from thforge import desk_model_config
from thforge.data.synthetic import generate_synthetic_dataset
from thforge.model.net import DualHeadNet


def central_diff(f, x: torch.Tensor, indices, eps: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar f at the given flat indices."""
    grads = []
    flat = x.reshape(-1)
    with torch.no_grad():
        for idx in indices:
            orig = flat[idx].item()
            flat[idx] = orig + eps
            hi = float(f(x))
            flat[idx] = orig - eps
            lo = float(f(x))
            flat[idx] = orig
            grads.append((hi - lo) / (2 * eps))
    return np.array(grads)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    manifest = generate_synthetic_dataset(out, n_per_cell=1, rng_seed=7)
    return manifest


@pytest.fixture()
def desk_model():
    torch.manual_seed(0)
    return DualHeadNet(desk_model_config())
