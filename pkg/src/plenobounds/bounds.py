"""Variance lower bounds from pairwise image divergences.

The chi-squared divergence between the observation distributions at two
parameter points reduces, for both supported noise models, to an exponent
computed from the two noiseless images:

    Poisson:  lambda = sum (L1 - L2)^2 / L1
    AWGN:     lambda = ||L1 - L2||^2 / sigma^2

The variance bound for one parameter component is the supremum over a finite
perturbation grid of  delta_j^2 / (exp(lambda) - 1);  its small-perturbation
limit delta^2 / lambda is the Cramer-Rao bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .renderer import RadianceImage


class BoundsError(ValueError):
    pass


class DivergenceUndefined(BoundsError):
    """Poisson exponent with a zero-rate pixel where the images differ."""


@dataclass
class NoiseModel:
    variant: str  # "poisson" | "awgn"
    sigma: float | None = None

    def __post_init__(self):
        if self.variant not in ("poisson", "awgn"):
            raise BoundsError(f"unknown noise variant {self.variant!r}")
        if self.variant == "awgn":
            if self.sigma is None or not self.sigma > 0:
                raise BoundsError("awgn noise requires sigma > 0")

    def exponent(self, L1, L2):
        if self.variant == "poisson":
            return lambda_poisson(L1, L2)
        return lambda_gaussian(L1, L2, self.sigma)

    def label(self):
        if self.variant == "poisson":
            return "poisson"
        return f"awgn{self.sigma:g}"


@dataclass
class DeltaGrid:
    """Nonzero perturbations of the parameter vector, all staying in bounds."""

    deltas: np.ndarray  # (n, J)

    def __post_init__(self):
        self.deltas = np.atleast_2d(np.asarray(self.deltas, dtype=np.float64))
        if self.deltas.size == 0:
            raise BoundsError("delta grid is empty")
        if np.any(np.all(self.deltas == 0.0, axis=1)):
            raise BoundsError("delta grid contains the zero vector")

    def __len__(self):
        return self.deltas.shape[0]

    def __iter__(self):
        return iter(self.deltas)

    def check_in_bounds(self, theta_star, space):
        for d in self.deltas:
            if not space.contains(theta_star + d):
                raise BoundsError(f"theta* + {list(d)} leaves the parameter space")

    @classmethod
    def from_parameter_space(cls, space, theta_star):
        """All grid points of the parameter space except theta* itself,
        expressed as perturbations."""
        theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
        axes = [space.grid(j) for j in range(space.dim)]
        mesh = np.stack(
            [m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1
        )
        deltas = mesh - theta_star
        keep = ~np.all(np.abs(deltas) < 1e-12, axis=1)
        return cls(deltas=deltas[keep])

    @classmethod
    def axis(cls, j, values, dim=1):
        """Perturbations of component j only."""
        values = np.asarray(values, dtype=np.float64)
        deltas = np.zeros((len(values), dim))
        deltas[:, j] = values
        return cls(deltas=deltas)


@dataclass
class HcrResult:
    bound: float
    argmax_delta: np.ndarray | None
    trace: list  # per-delta (delta, lambda, functional value)
    flags: dict = field(default_factory=dict)
    j: int | None = None
    noise: NoiseModel | None = None


def _as_array(image):
    if isinstance(image, RadianceImage):
        return image.data.astype(np.float64)
    return np.asarray(image, dtype=np.float64)


def lambda_poisson(L1, L2):
    """Poisson chi-squared exponent sum((L1-L2)^2 / L1) over all pixels and
    channels.  Pixels with L1 = L2 = 0 contribute zero; L1 = 0 with L1 != L2
    is undefined."""
    a = _as_array(L1)
    b = _as_array(L2)
    if a.shape != b.shape:
        raise BoundsError(f"image shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    active = diff != 0.0
    if np.any(active & (a <= 0.0)):
        where = tuple(int(v) for v in np.argwhere(active & (a <= 0.0))[0])
        raise DivergenceUndefined(
            f"zero-rate pixel with differing intensities at index {where}"
        )
    # np.sum uses pairwise accumulation, keeping cancellation error small
    return float(np.sum(np.where(active, diff * diff / np.where(active, a, 1.0), 0.0)))


def lambda_gaussian(L1, L2, sigma):
    """AWGN chi-squared exponent ||L1 - L2||^2 / sigma^2."""
    a = _as_array(L1)
    b = _as_array(L2)
    if a.shape != b.shape:
        raise BoundsError(f"image shape mismatch {a.shape} vs {b.shape}")
    if not sigma > 0:
        raise BoundsError("sigma must be > 0")
    diff = a - b
    return float(np.sum(diff * diff) / (sigma * sigma))


def _inv_expm1(lam):
    """1 / (e^lam - 1) without overflow; underflows smoothly to 0."""
    if lam > 700.0:
        return math.exp(-lam)
    return 1.0 / math.expm1(lam)


def hcr_functional(lam, delta_j):
    """delta_j^2 / (exp(lam) - 1); +inf when lam = 0 (images identical, the
    perturbation is unidentifiable)."""
    if lam < 0:
        raise BoundsError("lambda must be >= 0")
    if delta_j == 0:
        raise BoundsError("delta_j must be nonzero")
    if lam == 0.0:
        return math.inf
    return delta_j * delta_j * _inv_expm1(lam)


def _sup_over_grid(forward, theta_star, grid, noise, numerator):
    """Shared grid-supremum loop; `numerator(delta)` gives the functional's
    numerator.  Ties broken lexicographically on delta."""
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
    L0 = _as_array(forward(theta_star))
    best_val = -math.inf
    best_delta = None
    trace = []
    unbounded = False
    for delta in grid:
        L = _as_array(forward(theta_star + delta))
        lam = noise.exponent(L0, L)
        num = numerator(delta)
        if lam == 0.0:
            unbounded = True
            val = math.inf if num != 0.0 else 0.0
        elif num == 0.0:
            val = 0.0
        else:
            val = num * _inv_expm1(lam)
        trace.append((delta.copy(), lam, val))
        if val > best_val or (
            val == best_val
            and best_delta is not None
            and tuple(delta) < tuple(best_delta)
        ):
            best_val = val
            best_delta = delta.copy()
    return best_val, best_delta, trace, unbounded


def hcr_bound(forward, theta_star, grid, noise, j=0):
    """Grid-supremum variance lower bound for component j of theta."""
    val, delta, trace, unbounded = _sup_over_grid(
        forward, theta_star, grid, noise, lambda d: d[j] * d[j]
    )
    return HcrResult(
        bound=val,
        argmax_delta=delta,
        trace=trace,
        flags={"unbounded": unbounded},
        j=j,
        noise=noise,
    )


def mse_bound(forward, theta_star, grid, noise):
    """Grid-supremum lower bound on the total MSE: ||delta||^2 / (e^lam - 1)."""
    val, delta, trace, unbounded = _sup_over_grid(
        forward, theta_star, grid, noise, lambda d: float(d @ d)
    )
    return HcrResult(
        bound=val,
        argmax_delta=delta,
        trace=trace,
        flags={"unbounded": unbounded},
        j=None,
        noise=noise,
    )


def cr_limit(forward, theta_star, xi, noise, j=0, space=None):
    """Finite-difference realization of the small-perturbation limit
    delta^2 / lambda (the Cramer-Rao bound for regular models)."""
    if not xi > 0:
        raise BoundsError("xi must be > 0")
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
    step = np.zeros_like(theta_star)
    step[j] = xi
    if space is not None:
        for cand in (theta_star + step, theta_star - step):
            if not space.contains(cand):
                raise BoundsError(f"theta* +/- xi e_{j} leaves the parameter space")
    L0 = _as_array(forward(theta_star))
    L1 = _as_array(forward(theta_star + step))
    lam = noise.exponent(L0, L1)
    if lam == 0.0:
        return HcrResult(
            bound=math.inf,
            argmax_delta=step,
            trace=[(step, 0.0, math.inf)],
            flags={"unbounded": True},
            j=j,
            noise=noise,
        )
    val = xi * xi / lam
    return HcrResult(
        bound=val,
        argmax_delta=step,
        trace=[(step, lam, val)],
        flags={"unbounded": False},
        j=j,
        noise=noise,
    )
