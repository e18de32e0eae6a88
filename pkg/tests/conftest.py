"""Shared fixtures: small cameras, a colocated light, and canned scenes."""

import numpy as np
import pytest

from ppsdepth import CameraIntrinsics, LightSpec, SceneSpec, generate_scene


@pytest.fixture
def cam8() -> CameraIntrinsics:
    return CameraIntrinsics(fx=6.0, fy=6.0, cx=3.5, cy=3.5, width=8, height=8)


@pytest.fixture
def cam16() -> CameraIntrinsics:
    return CameraIntrinsics(fx=12.0, fy=12.0, cx=7.5, cy=7.5, width=16, height=16)


@pytest.fixture
def cam32() -> CameraIntrinsics:
    return CameraIntrinsics(fx=24.0, fy=24.0, cx=15.5, cy=15.5, width=32, height=32)


@pytest.fixture
def cam64() -> CameraIntrinsics:
    return CameraIntrinsics(fx=48.0, fy=48.0, cx=31.5, cy=31.5, width=64, height=64)


@pytest.fixture
def light() -> LightSpec:
    return LightSpec.colocated()


@pytest.fixture
def tube_spec() -> SceneSpec:
    return SceneSpec(kind="tube", radius=1.0, length=6.0, offset_x=0.05, offset_y=-0.03)


@pytest.fixture
def tube32(tube_spec, cam32):
    """(depth, albedo) of the standard tube at 32x32."""
    return generate_scene(tube_spec, cam32)


@pytest.fixture
def smooth_depth8():
    """Smooth, strictly positive 8x8 depth with no flat regions."""
    v, u = np.mgrid[0:8, 0:8].astype(np.float64)
    return 2.0 + 0.15 * np.sin(0.7 * u + 0.3) * np.cos(0.5 * v - 0.2) + 0.02 * u
