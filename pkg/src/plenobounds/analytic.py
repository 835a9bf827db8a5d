"""Closed-form forward models used as oracles for the bound machinery.

Each model maps a parameter vector to a small synthetic image, so every
divergence exponent, bound, and Fisher quantity has a hand-computable value.
The models accept the same (theta, spp=None, seed=None) call signature as
the scene-backed forward so they can stand in for it anywhere.
"""

from __future__ import annotations

import numpy as np

from .renderer import derive_seed

SHAPE = (10, 10, 1)  # 100 independent observation elements
M = int(np.prod(SHAPE))


class ConstantForward:
    """L(theta) = theta[0] everywhere.

    Poisson exponent for a perturbation d: M * d^2 / theta[0];
    AWGN exponent: M * d^2 / sigma^2.
    """

    def __init__(self, shape=SHAPE):
        self.shape = shape

    def __call__(self, theta, spp=None, seed=None):
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        return np.full(self.shape, theta[0])


class AffineForward:
    """L(theta) = a * theta[0] + b per element, with per-element slopes."""

    def __init__(self, slopes, intercepts):
        self.slopes = np.asarray(slopes, dtype=np.float64)
        self.intercepts = np.asarray(intercepts, dtype=np.float64)
        if self.slopes.shape != self.intercepts.shape:
            raise ValueError("slopes and intercepts must share a shape")

    def __call__(self, theta, spp=None, seed=None):
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        return self.slopes * theta[0] + self.intercepts


class QuadraticForward:
    """L(theta) = (theta[0] - c)^2 + floor per element; gradient vanishes at
    theta = c, exercising the zero-information edge cases."""

    def __init__(self, center=0.0, floor=1.0, shape=SHAPE):
        self.center = center
        self.floor = floor
        self.shape = shape

    def __call__(self, theta, spp=None, seed=None):
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        v = (theta[0] - self.center) ** 2 + self.floor
        return np.full(self.shape, v)


class NoisyForward:
    """Wrap an analytic forward with synthetic rendering error.

    Per element the returned image is L * (1 + e) with e zero-mean Gaussian
    of standard deviation amplitude / sqrt(spp), drawn from a stream keyed by
    (seed, theta, spp) so distinct parameter points and sample counts are
    independent, while repeated identical calls are reproducible.
    """

    def __init__(self, inner, amplitude=1.0, base_seed=0):
        self.inner = inner
        self.amplitude = amplitude
        self.base_seed = base_seed

    def __call__(self, theta, spp=None, seed=None):
        clean = np.asarray(self.inner(theta), dtype=np.float64)
        if spp is None:
            return clean
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if seed is None:
            key = hash((self.base_seed, theta.tobytes(), int(spp))) & 0xFFFFFFFF
            seed = derive_seed(self.base_seed, key, int(spp))
        rng = np.random.default_rng(seed)
        rel = rng.normal(0.0, self.amplitude / np.sqrt(spp), size=clean.shape)
        return clean * (1.0 + rel)
