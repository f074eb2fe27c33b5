import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splatseg.scene import Camera, Scene, logit

settings.register_profile(
    "ci", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ci")


def make_random_scene(n, seed, degree=1, width_extent=1.6, z_range=(2.0, 6.0)):
    """Random splats inside the frustum of the identity test camera."""
    rng = np.random.default_rng(seed)
    pos = np.stack(
        [
            rng.uniform(-width_extent, width_extent, n),
            rng.uniform(-width_extent, width_extent, n),
            rng.uniform(*z_range, n),
        ],
        axis=1,
    )
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scales = np.log(rng.uniform(0.02, 0.25, (n, 3)))
    opacities = logit(rng.uniform(0.2, 0.98, n))
    n_coeffs = (degree + 1) ** 2
    sh = rng.normal(0.0, 0.35, (n, 3, n_coeffs))
    feats = rng.normal(0.0, 1.0, (n, 16))
    labels = rng.integers(0, 12, n).astype(np.uint8)
    return Scene(pos, scales, q, opacities, sh, feats, labels, degree)


def identity_camera(width=64, height=64, f=70.0):
    return Camera(
        width=width, height=height, fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
        world_to_camera=np.eye(4), cam_id="test",
    )


@pytest.fixture
def cam64():
    return identity_camera()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
