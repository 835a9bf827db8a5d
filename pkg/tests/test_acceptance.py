"""End-to-end acceptance gate.

Each test exercises one numbered criterion and prints a single pass/fail
line.  The suite favors analytic oracles where exact values exist and
property checks where the renderer's stochastic output is involved.  Run
order is the numbered order; total runtime is dominated by the rendered
criteria (3, 4, 9).
"""

import json
import math

import numpy as np
import pytest

from plenobounds.analytic import M, ConstantForward, NoisyForward
from plenobounds.bounds import (
    DeltaGrid,
    NoiseModel,
    cr_limit,
    hcr_bound,
    mse_bound,
)
from plenobounds.estimator import MleConfig, run_trials
from plenobounds.fisher import fd_gradient, pixelwise_fi, total_fi, viewpoint_grid
from plenobounds.image_io import read_pfm, write_pfm
from plenobounds.render_error import (
    LambdaObservation,
    estimate_lambda,
    hcr_hat,
    variance_decay_fit,
)
from plenobounds.renderer import (
    RadianceImage,
    RenderConfig,
    SceneForward,
    derive_seed,
    render,
)
from plenobounds.scene import apply_parameters, load_scene

from conftest import corridor_path

POISSON = NoiseModel("poisson")
SCHEDULE = list(range(2048, 11265, 1024))


def _report(number, name, ok):
    print(f"ACCEPTANCE {number:2d} [{name}]: {'PASS' if ok else 'FAIL'}")
    assert ok, f"acceptance criterion {number} ({name}) failed"


@pytest.fixture(scope="module")
def corridor():
    return load_scene(corridor_path())


def test_01_analytic_oracle_equivalence():
    f = ConstantForward()
    grid = DeltaGrid.axis(0, [-0.01, 0.01])
    hcr = hcr_bound(f, [10.0], grid, POISSON, j=0).bound
    cr = cr_limit(f, [10.0], 0.01, POISSON, j=0).bound
    grad = fd_gradient(f, [10.0], rounds=1)
    fi = total_fi(pixelwise_fi(grad, f([10.0]), POISSON))
    ok = (
        abs(hcr - 0.09995) <= 1e-6
        and abs(cr - 0.1) <= 1e-12
        and abs(fi - 10.0) <= 1e-9
    )
    _report(1, "analytic-oracle bound equivalence", ok)


def test_02_component_bounds_dominate_mse_bound():
    rng = np.random.default_rng(11)
    noise = NoiseModel("awgn", sigma=1.5)
    deltas = [[dx, dy] for dx in (-0.1, 0.0, 0.1) for dy in (-0.1, 0.0, 0.1)
              if (dx, dy) != (0.0, 0.0)]
    grid = DeltaGrid(deltas=deltas)
    violations = 0
    for _ in range(100):
        s1 = rng.uniform(0.1, 2.0, size=(4, 4, 1))
        s2 = rng.uniform(0.1, 2.0, size=(4, 4, 1))
        b = rng.uniform(1.0, 3.0, size=(4, 4, 1))

        def forward(theta, spp=None, seed=None, s1=s1, s2=s2, b=b):
            theta = np.atleast_1d(theta)
            return s1 * theta[0] + s2 * theta[1] + b

        theta = rng.uniform(0.5, 1.5, size=2)
        total = sum(hcr_bound(forward, theta, grid, noise, j=j).bound
                    for j in (0, 1))
        if total < mse_bound(forward, theta, grid, noise).bound * (1 - 1e-12):
            violations += 1
    _report(2, "corollary inequality suite", violations == 0)


def test_03_renderer_unbiasedness(corridor):
    bound = apply_parameters(corridor, [0.9])
    reference = render(bound, RenderConfig(spp=65536, seed=777)).data
    stack = np.stack([
        render(bound, RenderConfig(spp=64, seed=derive_seed(101, k))).data
        for k in range(100)
    ]).astype(np.float64)
    mean = stack.mean(axis=0)
    sem = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    diff = np.abs(mean - reference.astype(np.float64))
    within = (diff <= 4.0 * sem) | ((sem == 0.0) & (diff == 0.0))
    frac = within.mean()
    print(f"  unbiasedness: {frac:.4f} of pixel-channels within 4 SE")
    _report(3, "renderer unbiasedness", frac >= 0.99)


def test_04_variance_decay_exponent(corridor):
    bound = apply_parameters(corridor, [0.9])
    renders = {
        n: [render(bound, RenderConfig(spp=n, seed=derive_seed(55, n, k)))
            for k in range(20)]
        for n in (256, 512, 1024, 2048)
    }
    fit = variance_decay_fit(renders, weight_draws=1000, l_max=12.0, seed=9)
    draws = np.repeat(
        [p for p in sorted(fit.histogram)],
        [fit.histogram[p] for p in sorted(fit.histogram)],
    )
    median = float(np.median(draws))
    print(f"  decay exponent median: {median:.3f}")
    _report(4, "variance decay near 1/N", 0.95 <= median <= 1.05)


def test_05_lambda_tilde_bias_direction_and_rate():
    truth = ConstantForward()
    noise = NoiseModel("awgn", sigma=0.1)
    theta = np.array([10.0])
    delta = np.array([0.05])
    true_lam = noise.exponent(truth(theta), truth(theta + delta))
    biases = []
    for ni, n in enumerate(SCHEDULE):
        acc = 0.0
        trials = 300
        for t in range(trials):
            f = NoisyForward(truth, amplitude=1.0, base_seed=7000 * ni + t)
            acc += noise.exponent(f(theta, spp=n), f(theta + delta, spp=n))
        biases.append(acc / trials - true_lam)
    biases = np.array(biases)
    inv_n = 1.0 / np.array(SCHEDULE)
    coef = np.polyfit(inv_n, biases, 1)
    pred = np.polyval(coef, inv_n)
    r2 = 1 - np.sum((biases - pred) ** 2) / np.sum((biases - biases.mean()) ** 2)
    print(f"  bias positive: {bool(np.all(biases > 0))}, linear R2: {r2:.4f}")
    _report(5, "lambda-tilde bias direction and 1/N rate",
            bool(np.all(biases > 0)) and r2 >= 0.95)


def test_06_least_squares_lambda_recovery():
    exact = estimate_lambda(
        [LambdaObservation(2, 2.0), LambdaObservation(4, 1.5)]
    )
    exact_ok = (
        abs(exact.lam_hat - 1.0) < 1e-12 and abs(exact.c_hat - 2.0) < 1e-12
    )
    rng = np.random.default_rng(3)
    n = np.array(SCHEDULE, dtype=np.float64)
    acc = 0.0
    trials = 10_000
    for _ in range(trials):
        y = 0.5 + 100.0 / n + rng.normal(0, np.sqrt(1e-4 / n))
        obs = [LambdaObservation(int(ni), max(v, 0.0)) for ni, v in zip(n, y)]
        acc += estimate_lambda(obs).lam_hat
    mean = acc / trials
    print(f"  noiseless exact: {exact_ok}, MC mean: {mean:.5f}")
    _report(6, "least-squares lambda recovery",
            exact_ok and abs(mean - 0.5) <= 0.01)


def test_07_jensen_direction():
    truth = ConstantForward()
    noise = NoiseModel("awgn", sigma=0.1)
    grid = DeltaGrid.axis(0, [0.05])
    true_bound = hcr_bound(truth, [10.0], grid, noise, j=0).bound
    vals = []
    for t in range(200):
        f = NoisyForward(truth, amplitude=0.01, base_seed=t)
        vals.append(hcr_hat(f, [10.0], grid, noise, 0, SCHEDULE).bound)
    mean = np.mean(vals)
    sem = np.std(vals, ddof=1) / np.sqrt(len(vals))
    print(f"  mean corrected bound {mean:.3e} vs truth {true_bound:.3e}")
    _report(7, "Jensen direction of corrected bound",
            mean >= true_bound - 2 * sem)


def test_08_mle_efficiency_on_linear_gaussian_oracle():
    sigma = 0.1
    noise = NoiseModel("awgn", sigma=sigma)

    def identity(theta, spp=None, seed=None):
        return np.full((10, 10, 1), np.atleast_1d(theta)[0])

    cfg = MleConfig(init_lo=[6.0], init_hi=[8.0], step=0.2, max_iters=200,
                    fd_step=0.01, tol=1e-6)
    report = run_trials([7.0], identity, noise, cfg, runs=1000, base_seed=13)
    expect = sigma**2 / M
    var_ok = abs(report.var - expect) <= 0.1 * expect
    close_ok = abs(report.mse - report.var) / report.mse < 0.05
    grid = DeltaGrid.axis(0, [-0.01, 0.01])
    bound = hcr_bound(identity, [7.0], grid, noise, j=0).bound
    stat_tol = 3 * math.sqrt(2.0 / 1000) * report.var
    bound_ok = bound <= report.var + stat_tol
    print(f"  var {report.var:.3e} (target {expect:.3e}), "
          f"|mse-var|/mse {abs(report.mse - report.var) / report.mse:.3f}, "
          f"bound {bound:.3e}")
    _report(8, "MLE efficiency vs oracle", var_ok and close_ok and bound_ok)


def test_09_paper_shape_checks(corridor):
    spp = 2048
    sigma = 0.1
    noise = NoiseModel("awgn", sigma=sigma)
    grid = DeltaGrid.axis(0, [-0.05, 0.05])
    fwd = SceneForward(corridor, RenderConfig(spp=spp, seed=31))

    # (a) the bound jumps by orders of magnitude once the sphere leaves LOS
    los = hcr_bound(fwd, [0.9], grid, noise, j=0).bound
    nlos = hcr_bound(fwd, [2.0], grid, noise, j=0).bound
    ratio = nlos / los if los > 0 else math.inf
    jump_ok = ratio >= 100.0
    print(f"  (a) LOS {los:.3e} vs NLOS {nlos:.3e}, ratio {ratio:.3e}")

    # (b) at fixed theta the AWGN bound is nondecreasing in sigma; reuse the
    # same rendered images across sigmas
    cache = {}

    def cached(theta, spp=None, seed=None):
        key = tuple(np.round(np.atleast_1d(theta), 12))
        if key not in cache:
            cache[key] = fwd(theta)
        return cache[key]

    sweep = [hcr_bound(cached, [0.9], grid, NoiseModel("awgn", sigma=s),
                       j=0).bound
             for s in (0.1, 0.2, 0.4, 0.8)]
    mono_ok = all(a <= b * (1 + 1e-12) for a, b in zip(sweep, sweep[1:]))
    print(f"  (b) bound vs sigma: {[f'{v:.3e}' for v in sweep]}")

    # (c) viewpoints that see the sphere carry more information than
    # viewpoints for which it is fully occluded
    # a coarse FD step and many rounds keep render noise in the gradient
    # well below the visibility signal
    mat = viewpoint_grid(
        corridor, [0.0], [0.0, 1.0], [1.25], noise, j=0, xi=0.05, rounds=16,
        cfg=RenderConfig(spp=512, seed=17), base_seed=17,
    )
    occluded, visible = mat[0, 0], mat[0, 1]
    view_ok = visible > 5.0 * occluded
    print(f"  (c) mean FI occluded {occluded:.3e} vs visible {visible:.3e}")

    _report(9, "paper-shape checks on corridor fixture",
            jump_ok and mono_ok and view_ok)


def test_10_bit_exactness(tmp_path, corridor):
    import numba

    bound = apply_parameters(corridor, [0.9])
    img = render(bound, RenderConfig(spp=16, seed=5))
    path = tmp_path / "golden.pfm"
    write_pfm(img, path)
    round_trip = np.array_equal(read_pfm(path).data, img.data)

    before = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        a = render(bound, RenderConfig(spp=16, seed=5))
        numba.set_num_threads(min(2, numba.config.NUMBA_NUM_THREADS))
        b = render(bound, RenderConfig(spp=16, seed=5))
    finally:
        numba.set_num_threads(before)
    deterministic = np.array_equal(a.data, b.data) and np.array_equal(
        a.data, img.data
    )
    _report(10, "bit-exact IO and deterministic parallelism",
            round_trip and deterministic)
