import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plenobounds.analytic import M, AffineForward, ConstantForward, QuadraticForward
from plenobounds.bounds import (
    BoundsError,
    DeltaGrid,
    DivergenceUndefined,
    NoiseModel,
    cr_limit,
    hcr_bound,
    hcr_functional,
    lambda_gaussian,
    lambda_poisson,
    mse_bound,
)
from plenobounds.scene import ParameterSpace

POISSON = NoiseModel("poisson")


def test_poisson_exponent_closed_form():
    L1 = np.full((2, 2, 3), 4.0)
    L2 = np.full((2, 2, 3), 5.0)
    # 12 elements, each (4-5)^2 / 4
    assert lambda_poisson(L1, L2) == pytest.approx(12 * 0.25)


def test_poisson_exponent_is_asymmetric():
    L1 = np.full((1, 1, 1), 4.0)
    L2 = np.full((1, 1, 1), 5.0)
    assert lambda_poisson(L1, L2) != lambda_poisson(L2, L1)


def test_poisson_zero_rate_matching_pixels_contribute_zero():
    L = np.zeros((2, 2, 3))
    assert lambda_poisson(L, L) == 0.0


def test_poisson_zero_rate_differing_pixel_is_undefined():
    L1 = np.zeros((2, 2, 3))
    L2 = np.zeros((2, 2, 3))
    L2[1, 0, 2] = 1.0
    with pytest.raises(DivergenceUndefined, match=r"\(1, 0, 2\)"):
        lambda_poisson(L1, L2)


def test_gaussian_exponent_closed_form():
    L1 = np.zeros((2, 2, 3))
    L2 = np.full((2, 2, 3), 0.5)
    assert lambda_gaussian(L1, L2, sigma=0.5) == pytest.approx(12.0)


def test_gaussian_exponent_is_symmetric():
    rng = np.random.default_rng(0)
    L1 = rng.uniform(size=(3, 3, 3))
    L2 = rng.uniform(size=(3, 3, 3))
    assert lambda_gaussian(L1, L2, 0.1) == pytest.approx(lambda_gaussian(L2, L1, 0.1))


def test_shape_mismatch_rejected():
    with pytest.raises(BoundsError, match="mismatch"):
        lambda_gaussian(np.zeros((1, 1, 3)), np.zeros((2, 1, 3)), 0.1)


def test_hcr_functional_identical_images_unbounded():
    assert hcr_functional(0.0, 0.1) == math.inf


def test_hcr_functional_rejects_negative_lambda():
    with pytest.raises(BoundsError):
        hcr_functional(-1.0, 0.1)


def test_hcr_functional_huge_lambda_underflows_to_zero():
    assert hcr_functional(1e6, 0.1) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 50.0), st.floats(1e-3, 10.0))
def test_hcr_functional_below_cr_limit(lam, delta):
    # e^lam - 1 >= lam, so the HCR value never exceeds delta^2 / lam
    assert hcr_functional(lam, delta) <= delta * delta / lam * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 50.0), st.floats(1e-6, 40.0), st.floats(1e-3, 10.0))
def test_hcr_functional_monotone_in_lambda(lam, bump, delta):
    assert hcr_functional(lam + bump, delta) <= hcr_functional(lam, delta)


def test_delta_grid_rejects_zero_vector():
    with pytest.raises(BoundsError, match="zero"):
        DeltaGrid(deltas=[[0.0, 0.0]])


def test_delta_grid_rejects_empty():
    with pytest.raises(BoundsError, match="empty"):
        DeltaGrid(deltas=np.zeros((0, 1)))


def test_delta_grid_from_space_excludes_theta_star():
    space = ParameterSpace(lower=[0.0], upper=[1.0], step=[0.5])
    space.validate()
    grid = DeltaGrid.from_parameter_space(space, [0.5])
    got = sorted(d[0] for d in grid)
    assert got == pytest.approx([-0.5, 0.5])


def test_constant_poisson_oracle_bound():
    """M identical elements at rate theta: lambda = M d^2 / theta, so the
    +-0.01 grid at theta = 10 gives 1e-4 / expm1(1e-3)."""
    f = ConstantForward()
    grid = DeltaGrid.axis(0, [-0.01, 0.01])
    res = hcr_bound(f, [10.0], grid, POISSON, j=0)
    assert res.bound == pytest.approx(1e-4 / math.expm1(1e-3), rel=1e-12)
    assert res.bound == pytest.approx(0.09995, abs=1e-6)


def test_constant_poisson_oracle_cr_limit():
    f = ConstantForward()
    res = cr_limit(f, [10.0], 0.01, POISSON, j=0)
    assert res.bound == pytest.approx(0.1, rel=1e-12)


def test_constant_awgn_oracle():
    f = ConstantForward()
    grid = DeltaGrid.axis(0, [0.01])
    noise = NoiseModel("awgn", sigma=0.5)
    lam = M * 0.01**2 / 0.5**2
    res = hcr_bound(f, [10.0], grid, noise, j=0)
    assert res.bound == pytest.approx(1e-4 / math.expm1(lam), rel=1e-12)


def test_tie_break_is_lexicographic_on_delta():
    # symmetric model: +-d give identical values; the smaller delta wins
    f = ConstantForward()
    grid = DeltaGrid.axis(0, [0.01, -0.01])
    res = hcr_bound(f, [10.0], grid, NoiseModel("awgn", sigma=1.0), j=0)
    assert res.argmax_delta[0] == -0.01


def test_unidentifiable_perturbation_flags_unbounded():
    f = QuadraticForward(center=0.0)  # theta and -theta render identically
    grid = DeltaGrid.axis(0, [-2.0])
    res = hcr_bound(f, [1.0], grid, POISSON, j=0)
    assert res.bound == math.inf
    assert res.flags["unbounded"]


def test_zero_numerator_component_scores_zero():
    f = AffineForward(slopes=np.ones((2, 2, 1)), intercepts=np.ones((2, 2, 1)))
    grid = DeltaGrid(deltas=[[0.0, 0.3]])
    res = hcr_bound(f, [1.0, 0.0], grid, NoiseModel("awgn", sigma=1.0), j=0)
    assert res.bound == 0.0


def test_cr_limit_checks_parameter_space():
    space = ParameterSpace(lower=[0.0], upper=[1.0], step=[0.5])
    space.validate()
    f = ConstantForward()
    with pytest.raises(BoundsError, match="parameter space"):
        cr_limit(f, [1.0], 0.01, POISSON, j=0, space=space)


def test_trace_covers_every_delta():
    f = ConstantForward()
    grid = DeltaGrid.axis(0, [-0.02, -0.01, 0.01, 0.02])
    res = hcr_bound(f, [10.0], grid, POISSON, j=0)
    assert len(res.trace) == 4


def _random_affine_instance(rng):
    slopes = np.stack([
        rng.uniform(0.1, 2.0, size=(4, 4, 1)),
        rng.uniform(0.1, 2.0, size=(4, 4, 1)),
    ], axis=-1).sum(axis=-1, keepdims=True)
    # two-parameter model: L = s1*t0 + s2*t1 + b
    s1 = rng.uniform(0.1, 2.0, size=(4, 4, 1))
    s2 = rng.uniform(0.1, 2.0, size=(4, 4, 1))
    b = rng.uniform(1.0, 3.0, size=(4, 4, 1))

    def forward(theta, spp=None, seed=None):
        theta = np.atleast_1d(theta)
        return s1 * theta[0] + s2 * theta[1] + b

    return forward


def test_component_bounds_dominate_mse_bound():
    """Sum over j of sup_d d_j^2/f(lam) >= sup_d ||d||^2/f(lam)."""
    rng = np.random.default_rng(7)
    noise = NoiseModel("awgn", sigma=2.0)
    deltas = [[dx, dy] for dx in (-0.1, 0.0, 0.1) for dy in (-0.1, 0.0, 0.1)
              if (dx, dy) != (0.0, 0.0)]
    grid = DeltaGrid(deltas=deltas)
    for _ in range(100):
        forward = _random_affine_instance(rng)
        theta = rng.uniform(0.5, 1.5, size=2)
        total = sum(
            hcr_bound(forward, theta, grid, noise, j=j).bound for j in (0, 1)
        )
        mse = mse_bound(forward, theta, grid, noise).bound
        assert total >= mse * (1 - 1e-12)
