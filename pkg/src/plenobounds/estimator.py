"""Noise synthesis and a maximum-likelihood estimation harness.

The harness is Gaussian only: under AWGN the MLE is the least-squares fit of
the forward model to the observation, minimized here with a first-order
optimizer using per-coordinate adaptive steps and finite-difference
gradients from fresh stochastic renders each iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundsError, NoiseModel
from .renderer import derive_seed


class EstimatorError(ValueError):
    pass


@dataclass
class NoisyObservation:
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        noise = self.meta.get("noise")
        if noise is not None and noise.variant == "poisson":
            if not np.issubdtype(self.data.dtype, np.integer):
                raise EstimatorError("Poisson observation must be integer-valued")
            if np.any(self.data < 0):
                raise EstimatorError("Poisson observation must be >= 0")


@dataclass
class MleConfig:
    init_lo: np.ndarray
    init_hi: np.ndarray
    step: float = 0.05
    step_decay: float = 0.98  # per-iteration multiplier on the step size
    beta1: float = 0.9
    beta2: float = 0.999
    max_iters: int = 200
    fd_step: float = 0.01
    spp_coarse: int = 512
    spp_fine: int = 1024
    switch_iter: int = 50
    tol: float = 1e-3

    def __post_init__(self):
        self.init_lo = np.atleast_1d(np.asarray(self.init_lo, dtype=np.float64))
        self.init_hi = np.atleast_1d(np.asarray(self.init_hi, dtype=np.float64))
        if np.any(self.init_lo >= self.init_hi):
            raise EstimatorError("init range needs lo < hi per component")
        if not (self.step > 0 and self.fd_step > 0 and self.tol > 0):
            raise EstimatorError("steps and tolerance must be positive")
        if not 0 < self.step_decay <= 1:
            raise EstimatorError("step_decay must be in (0, 1]")
        if self.max_iters < 1:
            raise EstimatorError("max_iters must be >= 1")


@dataclass
class RunRecord:
    theta_hat: np.ndarray
    loss_trajectory: list
    iterations: int
    converged: bool
    diverged: bool = False


@dataclass
class TrialReport:
    runs: list
    theta_star: np.ndarray
    mse: float
    var: float
    diverged_runs: int

    def __post_init__(self):
        # MSE = Var + ||bias||^2, so MSE must dominate Var up to roundoff
        if self.mse < self.var - 1e-9 * max(1.0, self.mse):
            raise EstimatorError("aggregate MSE below aggregate variance")

    def bias_sq(self):
        return self.mse - self.var


def synthesize_noisy(L, noise: NoiseModel, seed):
    """Draw one noisy observation of a radiance image; deterministic per seed."""
    data = np.asarray(getattr(L, "data", L), dtype=np.float64)
    rng = np.random.default_rng(seed)
    if noise.variant == "awgn":
        y = data + rng.normal(0.0, noise.sigma, size=data.shape)
        meta = {"noise": noise, "seed": seed}
        return NoisyObservation(data=y, meta=meta)
    if np.any(data < 0):
        raise EstimatorError("Poisson synthesis requires nonnegative rates")
    y = rng.poisson(data)
    return NoisyObservation(data=y, meta={"noise": noise, "seed": seed})


def mle_gaussian(Y: NoisyObservation, forward, cfg: MleConfig, space=None, seed=0):
    """Minimize the squared fit error with Adam-style updates.

    `forward(theta, spp=N, seed=s)` renders stochastically; gradients come
    from central differences of two fresh renders per component each
    iteration, coarse SPP first and fine SPP after cfg.switch_iter.  theta
    is projected onto the parameter-space bounds after every update.
    """
    noise = Y.meta.get("noise")
    if noise is not None and noise.variant != "awgn":
        raise EstimatorError("the MLE harness handles AWGN observations only")
    y = np.asarray(Y.data, dtype=np.float64)
    rng = np.random.default_rng(derive_seed(seed, 0xA11))
    theta = cfg.init_lo + rng.uniform(size=cfg.init_lo.shape) * (
        cfg.init_hi - cfg.init_lo
    )
    dim = theta.size
    m = np.zeros(dim)
    v = np.zeros(dim)
    trajectory = []
    converged = False
    it = 0

    def loss_at(th, spp, s):
        img = np.asarray(forward(th, spp=spp, seed=s), dtype=np.float64)
        return float(np.sum((y - img) ** 2))

    def project(th):
        if space is None:
            return th
        return np.clip(th, space.lower, space.upper)

    for it in range(1, cfg.max_iters + 1):
        spp = cfg.spp_coarse if it <= cfg.switch_iter else cfg.spp_fine
        grad = np.zeros(dim)
        for jj in range(dim):
            step = np.zeros(dim)
            step[jj] = cfg.fd_step
            lp = loss_at(theta + step, spp, derive_seed(seed, it, jj, 0))
            lm = loss_at(theta - step, spp, derive_seed(seed, it, jj, 1))
            grad[jj] = (lp - lm) / (2.0 * cfg.fd_step)
        if not np.all(np.isfinite(grad)):
            raise EstimatorError(f"non-finite loss gradient at iteration {it}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1**it)
        v_hat = v / (1.0 - cfg.beta2**it)
        update = cfg.step * cfg.step_decay ** (it - 1) * m_hat / (
            np.sqrt(v_hat) + 1e-8
        )
        new_theta = project(theta - update)
        trajectory.append(loss_at(theta, spp, derive_seed(seed, it, 0xF0)))
        moved = float(np.max(np.abs(new_theta - theta)))
        theta = new_theta
        if moved < cfg.tol:
            converged = True
            break
    return RunRecord(
        theta_hat=theta,
        loss_trajectory=trajectory,
        iterations=it,
        converged=converged,
    )


def run_trials(theta_star, forward, noise: NoiseModel, cfg: MleConfig,
               runs, space=None, base_seed=0, obs_spp=None):
    """Independent (noise seed, init) estimation runs with MSE/Var aggregates.

    The observation for each run is the forward model at theta_star plus a
    fresh AWGN draw.  Diverged runs are counted and excluded from aggregates.
    """
    if runs < 2:
        raise EstimatorError("need at least two runs")
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
    records = []
    estimates = []
    diverged = 0
    for k in range(runs):
        run_seed = derive_seed(base_seed, k)
        clean = forward(theta_star, spp=obs_spp, seed=derive_seed(run_seed, 0xC1))
        Y = synthesize_noisy(clean, noise, seed=derive_seed(run_seed, 0xB0))
        try:
            rec = mle_gaussian(Y, forward, cfg, space=space, seed=run_seed)
        except EstimatorError:
            diverged += 1
            records.append(
                RunRecord(
                    theta_hat=np.full_like(theta_star, math.nan),
                    loss_trajectory=[],
                    iterations=0,
                    converged=False,
                    diverged=True,
                )
            )
            continue
        records.append(rec)
        estimates.append(rec.theta_hat)
    if len(estimates) < 2:
        raise EstimatorError("fewer than two runs completed")
    est = np.stack(estimates)
    errs = est - theta_star
    mse = float(np.mean(np.sum(errs * errs, axis=1)))
    centered = est - est.mean(axis=0)
    var = float(np.mean(np.sum(centered * centered, axis=1)))
    return TrialReport(
        runs=records,
        theta_star=theta_star,
        mse=mse,
        var=var,
        diverged_runs=diverged,
    )
