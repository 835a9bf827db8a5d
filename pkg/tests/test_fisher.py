import numpy as np
import pytest

from plenobounds.analytic import M, SHAPE, AffineForward, ConstantForward
from plenobounds.bounds import BoundsError, NoiseModel
from plenobounds.fisher import (
    LOG_EPS,
    FiMap,
    fd_gradient,
    pixelwise_fi,
    total_fi,
    viewpoint_grid,
)

POISSON = NoiseModel("poisson")
AWGN = NoiseModel("awgn", sigma=0.1)


def test_gradient_of_affine_model_is_exact():
    slopes = np.arange(M, dtype=np.float64).reshape(SHAPE) + 1.0
    f = AffineForward(slopes=slopes, intercepts=np.ones(SHAPE))
    grad = fd_gradient(f, [2.0], j=0, xi=0.01, rounds=3)
    assert grad.data == pytest.approx(slopes, rel=1e-9)


def test_gradient_metadata_records_setup():
    grad = fd_gradient(ConstantForward(), [2.0], j=0, xi=0.02, rounds=5)
    assert grad.meta["xi"] == 0.02
    assert grad.meta["rounds"] == 5


def test_gradient_rejects_nonpositive_step():
    with pytest.raises(BoundsError, match="xi"):
        fd_gradient(ConstantForward(), [2.0], xi=0.0)


def test_poisson_fi_closed_form():
    f = ConstantForward()
    grad = fd_gradient(f, [10.0], rounds=1)
    fi = pixelwise_fi(grad, f([10.0]), POISSON)
    # gradient 1 everywhere, rate 10: each element contributes 0.1
    assert fi.data == pytest.approx(np.full(SHAPE, 0.1), rel=1e-9)
    assert total_fi(fi) == pytest.approx(10.0, abs=1e-9)


def test_awgn_fi_closed_form():
    f = ConstantForward()
    grad = fd_gradient(f, [10.0], rounds=1)
    fi = pixelwise_fi(grad, f([10.0]), AWGN)
    assert total_fi(fi) == pytest.approx(M / 0.01, rel=1e-9)


def test_poisson_fi_zero_rate_zero_gradient_is_zero():
    g = np.zeros((2, 2, 3))
    L = np.zeros((2, 2, 3))
    fi = pixelwise_fi(g, L, POISSON)
    assert np.all(fi.data == 0.0)


def test_poisson_fi_zero_rate_nonzero_gradient_rejected():
    g = np.ones((2, 2, 3))
    L = np.zeros((2, 2, 3))
    with pytest.raises(BoundsError, match="zero Poisson rate"):
        pixelwise_fi(g, L, POISSON)


def test_fi_shape_mismatch_rejected():
    with pytest.raises(BoundsError, match="mismatch"):
        pixelwise_fi(np.ones((1, 2, 3)), np.ones((2, 2, 3)), AWGN)


def test_fi_map_rejects_negative_values():
    with pytest.raises(BoundsError, match="nonnegative"):
        FiMap(data=np.full((1, 1, 3), -1.0))


def test_log_export_handles_zeros():
    fi = FiMap(data=np.zeros((2, 2, 3)))
    log_img = fi.log_image()
    assert np.all(np.isfinite(log_img))
    assert log_img[0, 0, 0] == pytest.approx(np.log(LOG_EPS))


def test_fresh_rounds_average_down_noise(corridor_scene):
    """On a stochastic forward, averaging more gradient rounds must not make
    the estimate worse in expectation; check it changes the value at all to
    confirm rounds use disjoint streams."""
    from plenobounds.renderer import RenderConfig, SceneForward

    fwd = SceneForward(corridor_scene, RenderConfig(spp=16, seed=2))
    g1 = fd_gradient(fwd, [0.9], rounds=1, base_seed=5)
    g2 = fd_gradient(fwd, [0.9], rounds=2, base_seed=5)
    assert not np.array_equal(g1.data, g2.data)


def test_viewpoint_grid_shape_and_determinism(corridor_scene):
    from plenobounds.renderer import RenderConfig

    cfg = RenderConfig(spp=8, seed=0)
    kwargs = dict(theta_star=[0.9], noise=AWGN, rounds=1, cfg=cfg, base_seed=4)
    a = viewpoint_grid(corridor_scene, [0.0, 0.1], [0.0], **kwargs)
    b = viewpoint_grid(corridor_scene, [0.0, 0.1], [0.0], **kwargs)
    assert a.shape == (2, 1)
    assert np.array_equal(a, b)
    assert np.all(a >= 0.0)
