"""
Pytest fixtures for octave_codec tests.
"""

import numpy as np
import pytest

from octave_codec.datasets import synthetic_image
from octave_codec.model import CodecModel, ModelConfig
from octave_codec.tensor import Tensor, default_dtype


@pytest.fixture
def rng():
    """Seeded generator so every test sees the same draws."""
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    """Run the test with float64 as the default tensor precision."""
    with default_dtype(np.float64):
        yield


@pytest.fixture
def tiny_config():
    """A narrow model that still has every stage of the full architecture."""
    return ModelConfig(widths=(4, 8, 8, 8, 4))


@pytest.fixture
def tiny_model(tiny_config):
    return CodecModel(tiny_config, seed=0)


@pytest.fixture
def image(rng):
    """A 50x70 RGB test image; neither extent is a multiple of 16."""
    base = synthetic_image("gradient", 80, rng)[:, :50, :70]
    return np.clip(base + 0.05 * rng.standard_normal(base.shape), 0.0, 1.0)


@pytest.fixture
def codec_settings_reset():
    """Start and finish the test with default settings."""
    from octave_codec.settings import codec_settings

    codec_settings.reload()
    yield codec_settings
    codec_settings.reload()


@pytest.fixture
def gradcheck():
    """
    Compare analytic gradients of a scalar-valued `fn(*tensors)` with central
    differences. Returns the largest norm-relative error over all inputs.
    """

    def check(fn, *arrays, eps=1e-6):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        with default_dtype(np.float64):
            tensors = [Tensor(a, requires_grad=True) for a in arrays]
            fn(*tensors).backward()
            errors = []
            for index, t in enumerate(tensors):
                numeric = np.zeros_like(arrays[index])
                flat = arrays[index].reshape(-1)
                for i in range(flat.size):
                    original = flat[i]
                    flat[i] = original + eps
                    plus = fn(*[Tensor(a) for a in arrays]).item()
                    flat[i] = original - eps
                    minus = fn(*[Tensor(a) for a in arrays]).item()
                    flat[i] = original
                    numeric.reshape(-1)[i] = (plus - minus) / (2 * eps)
                analytic = t.grad if t.grad is not None else np.zeros_like(numeric)
                scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
                errors.append(np.linalg.norm(analytic - numeric) / scale)
        return max(errors)

    return check
