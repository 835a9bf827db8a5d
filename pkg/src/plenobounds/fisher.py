"""Central-difference image gradients and pixel-wise Fisher information.

Gradients come from finite differences only: visibility-driven parameters
(object position, radius) produce image gradients that are better behaved
under central differencing of independently rendered image pairs than under
automatic differentiation.  Default step 0.01 m, averaged over 16 rounds of
fresh renders.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundsError, NoiseModel
from .renderer import RenderConfig, SceneForward, derive_seed

LOG_EPS = 1e-12  # floor used when exporting FI maps on a log scale


@dataclass
class GradientImage:
    data: np.ndarray  # dL/dtheta_j estimates, same shape as the source image
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise BoundsError("gradient image contains non-finite values")


@dataclass
class FiMap:
    data: np.ndarray  # per-pixel per-channel Fisher information, >= 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if np.any(self.data < 0):
            raise BoundsError("Fisher information map must be nonnegative")

    def channel_mean(self):
        return self.data.mean(axis=-1)

    def log_image(self, eps=LOG_EPS):
        return np.log(self.data + eps)


def fd_gradient(forward, theta_star, j=0, xi=0.01, rounds=16, base_seed=0):
    """Mean over `rounds` of (L(theta + xi e_j) - L(theta - xi e_j)) / (2 xi),
    each round rendered with fresh disjoint seeds."""
    if not xi > 0:
        raise BoundsError("xi must be > 0")
    if rounds < 1:
        raise BoundsError("rounds must be >= 1")
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
    step = np.zeros_like(theta_star)
    step[j] = xi
    acc = None
    for r in range(rounds):
        plus = np.asarray(
            forward(theta_star + step, seed=derive_seed(base_seed, r, 0)),
            dtype=np.float64,
        )
        minus = np.asarray(
            forward(theta_star - step, seed=derive_seed(base_seed, r, 1)),
            dtype=np.float64,
        )
        g = (plus - minus) / (2.0 * xi)
        acc = g if acc is None else acc + g
    return GradientImage(
        data=acc / rounds,
        meta={"xi": xi, "j": j, "rounds": rounds, "theta": theta_star},
    )


def pixelwise_fi(grad, L, noise: NoiseModel):
    """Per-pixel per-channel Fisher information.

    Poisson: (dL/dtheta)^2 / L;  AWGN: (dL/dtheta)^2 / sigma^2.
    """
    g = grad.data if isinstance(grad, GradientImage) else np.asarray(grad, float)
    l = np.asarray(L.data if hasattr(L, "data") else L, dtype=np.float64)
    if g.shape != l.shape:
        raise BoundsError(f"shape mismatch: gradient {g.shape} vs image {l.shape}")
    if noise.variant == "poisson":
        bad = (l <= 0.0) & (g != 0.0)
        if np.any(bad):
            where = tuple(int(v) for v in np.argwhere(bad)[0])
            raise BoundsError(f"zero Poisson rate with nonzero gradient at {where}")
        fi = np.where(g != 0.0, g * g / np.where(l > 0.0, l, 1.0), 0.0)
    else:
        fi = g * g / (noise.sigma * noise.sigma)
    meta = dict(getattr(grad, "meta", {}))
    meta["noise"] = noise
    return FiMap(data=fi, meta=meta)


def total_fi(fi_map):
    """Aggregate information: the observations are independent, so total FI
    is the sum over all pixels and channels."""
    data = fi_map.data if isinstance(fi_map, FiMap) else np.asarray(fi_map)
    return float(np.sum(data))


def viewpoint_grid(
    scene,
    x_offsets,
    z_offsets,
    theta_star,
    noise: NoiseModel,
    j=0,
    xi=0.01,
    rounds=4,
    cfg: RenderConfig | None = None,
    base_seed=0,
):
    """Mean pixel-wise FI for a grid of camera offsets in the world xz-plane.

    The camera is displaced from its scene position and re-aimed at the fixed
    look-at point; entry (a, b) corresponds to (x_offsets[a], z_offsets[b]).
    """
    cfg = cfg or RenderConfig(spp=128, seed=base_seed)
    out = np.zeros((len(x_offsets), len(z_offsets)))
    for a, dx in enumerate(x_offsets):
        for b, dz in enumerate(z_offsets):
            moved = copy.deepcopy(scene)
            moved.camera.position = moved.camera.position + np.array([dx, 0.0, dz])
            moved.validate()  # rejects camera-inside-geometry
            fwd = SceneForward(moved, cfg)
            seed = derive_seed(base_seed, a, b)
            grad = fd_gradient(
                fwd, theta_star, j=j, xi=xi, rounds=rounds, base_seed=seed
            )
            L = fwd(np.atleast_1d(theta_star), seed=derive_seed(seed, 9999))
            fi = pixelwise_fi(grad, L, noise)
            out[a, b] = float(fi.data.mean())
    return out
