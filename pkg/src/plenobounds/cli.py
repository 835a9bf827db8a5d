"""Experiment driver: config-file orchestration of renders, bounds, Fisher
maps, intervals, variance validation, and MLE tables.

One JSON config describes an experiment; every command is deterministic and
idempotent given (config, seed), so re-running overwrites bit-identical
outputs.  CSV is the only tabular format and PFM the only image format.

Exit codes: 0 success, 2 config error, 3 runtime/render error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .analytic import ConstantForward
from .bounds import (
    BoundsError,
    DeltaGrid,
    NoiseModel,
    cr_limit,
    hcr_bound,
)
from .estimator import EstimatorError, MleConfig, run_trials
from .fisher import fd_gradient, pixelwise_fi, total_fi, viewpoint_grid
from .image_io import ImageIOError, ManifestRow, StackManifest, load_stack, write_pfm
from .render_error import hcr_hat, hcr_interval, variance_decay_fit
from .renderer import (
    RadianceImage,
    RenderConfig,
    RenderError,
    SceneForward,
    derive_seed,
    render,
    theta_seed,
)
from .scene import SceneError, apply_parameters, load_scene

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_TOP_KEYS = {
    "scene", "sweep", "deltas", "noise", "spp", "depth", "xi",
    "spp_schedule", "n_eff", "fisher", "viewgrid", "variance", "mle",
    "theta_dim",
}


class ConfigError(ValueError):
    pass


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path!r}: invalid JSON: {e}")
    _require(isinstance(doc, dict), "config: top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    _require(not unknown, f"config: unknown keys {sorted(unknown)}")
    _require("scene" in doc, "config: missing required key 'scene'")
    _require("sweep" in doc, "config: missing required key 'sweep'")
    doc["_dir"] = os.path.dirname(os.path.abspath(path))
    return doc


def _sweep_values(cfg):
    sweep = cfg["sweep"]
    _require(isinstance(sweep, dict), "config: sweep must be an object")
    j = int(sweep.get("j", 0))
    if "values" in sweep:
        values = [float(v) for v in sweep["values"]]
    else:
        for key in ("start", "stop", "step"):
            _require(key in sweep, f"config: sweep needs 'values' or '{key}'")
        start, stop, step = (float(sweep[k]) for k in ("start", "stop", "step"))
        _require(step > 0, "config: sweep.step must be > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [start + i * step for i in range(max(n, 0))]
    _require(len(values) > 0, "sweep has no points")
    return j, values


def _theta_dim(cfg, scene):
    if scene is not None:
        return scene.parameter_space.dim
    return int(cfg.get("theta_dim", 1))


def _delta_grid(cfg, j, dim, space):
    spec = cfg.get("deltas", "space")
    if spec == "space":
        _require(space is not None, "config: deltas='space' needs a scene")
        return None  # resolved per theta* below
    _require(isinstance(spec, dict) and "values" in spec,
             "config: deltas must be 'space' or {'values': [...]}")
    values = [float(v) for v in spec["values"]]
    _require(len(values) > 0, "config: deltas.values is empty")
    return DeltaGrid.axis(int(spec.get("j", j)), values, dim=dim)


def _noise_models(cfg):
    specs = cfg.get("noise", [{"variant": "poisson"}])
    models = []
    for i, spec in enumerate(specs):
        try:
            models.append(
                NoiseModel(variant=spec.get("variant", "poisson"),
                           sigma=spec.get("sigma"))
            )
        except BoundsError as e:
            raise ConfigError(f"config: noise[{i}]: {e}")
    _require(len(models) > 0, "config: noise list is empty")
    return models


def _load_scene_or_analytic(cfg):
    """Returns (scene or None, analytic forward or None)."""
    ref = cfg["scene"]
    if isinstance(ref, str) and ref.startswith("analytic:"):
        name = ref.split(":", 1)[1]
        _require(name == "constant", f"config: unknown analytic model {name!r}")
        return None, ConstantForward()
    path = ref if os.path.isabs(ref) else os.path.join(cfg["_dir"], ref)
    _require(os.path.exists(path), f"config: scene file {ref!r} does not exist")
    return load_scene(path), None


def _theta_vec(scene, cfg, j, value):
    dim = _theta_dim(cfg, scene)
    theta = np.zeros(dim)
    if scene is not None:
        theta = (scene.parameter_space.lower + scene.parameter_space.upper) / 2.0
    theta[j] = value
    return theta


class StackForward:
    """Forward model backed by a persisted render stack.

    Lookup is exact on (theta, spp, seed); a missing entry is an error naming
    the coordinates, never a silent re-render.
    """

    def __init__(self, manifest_path, base_seed, default_spp):
        self.base_seed = base_seed
        self.default_spp = default_spp
        self.table = {}
        for theta, spp, img in load_stack(manifest_path):
            key = (tuple(np.round(theta, 12)), spp, img.meta["seed"])
            self.table[key] = img.data.astype(np.float64)

    def __call__(self, theta, spp=None, seed=None):
        spp = self.default_spp if spp is None else spp
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if seed is None:
            seed = theta_seed(self.base_seed, theta, spp)
        key = (tuple(np.round(theta, 12)), spp, seed)
        if key not in self.table:
            raise ImageIOError(
                f"stack has no image for theta={list(theta)}, N={spp}, seed={seed}"
            )
        return self.table[key]


def _make_forward(cfg, scene, analytic, seed, spp, from_stack=None):
    if from_stack is not None:
        return StackForward(from_stack, seed, spp)
    if analytic is not None:
        return analytic
    return SceneForward(scene, RenderConfig(spp=spp, seed=seed,
                                            depth=int(cfg.get("depth", 4))))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _spp_list(cfg):
    spps = list(cfg.get("spp_schedule", [])) or [int(cfg.get("spp", 256))]
    if "n_eff" in cfg:
        spps.append(int(cfg["n_eff"]))
    return sorted({int(s) for s in spps})


def cmd_render(cfg, out_dir, seed):
    scene, analytic = _load_scene_or_analytic(cfg)
    _require(scene is not None, "config: render needs a scene, not an analytic model")
    j, values = _sweep_values(cfg)
    dim = _theta_dim(cfg, scene)
    grid = _delta_grid(cfg, j, dim, scene.parameter_space)
    xi = float(cfg.get("xi", 0.01))
    depth = int(cfg.get("depth", 4))
    spps = _spp_list(cfg)
    rounds = int(cfg.get("fisher", {}).get("rounds", 16))
    rows = []
    count = 0
    seen = set()

    def emit(theta, spp, render_seed, role):
        nonlocal count
        key = (tuple(np.round(theta, 12)), spp, render_seed)
        if key in seen:
            return
        seen.add(key)
        bound = apply_parameters(scene, theta)
        img = render(bound, RenderConfig(spp=spp, seed=render_seed, depth=depth),
                     theta=theta)
        name = f"r{count:05d}.pfm"
        write_pfm(img, os.path.join(out_dir, name))
        rows.append(ManifestRow(path=name, theta=theta, spp=spp,
                                seed=render_seed, role=role))
        count += 1

    step = np.zeros(dim)
    step[j] = xi
    for ti, value in enumerate(values):
        theta = _theta_vec(scene, cfg, j, value)
        local = grid or DeltaGrid.from_parameter_space(scene.parameter_space, theta)
        for spp in spps:
            emit(theta, spp, theta_seed(seed, theta, spp), "primary")
            for delta in local:
                t2 = theta + delta
                emit(t2, spp, theta_seed(seed, t2, spp), "perturbed")
            for sgn, role in ((1.0, "gradient-plus"), (-1.0, "gradient-minus")):
                t2 = theta + sgn * step
                emit(t2, spp, theta_seed(seed, t2, spp), role)
        fisher_base = derive_seed(seed, ti, 0xF1)
        spp0 = spps[0]
        for r in range(rounds):
            emit(theta + step, spp0, derive_seed(fisher_base, r, 0), "gradient-plus")
            emit(theta - step, spp0, derive_seed(fisher_base, r, 1), "gradient-minus")
    manifest = StackManifest(rows=rows)
    manifest.write(os.path.join(out_dir, "manifest.csv"))
    return EXIT_OK


def cmd_bounds(cfg, out_dir, seed, from_stack=None):
    scene, analytic = _load_scene_or_analytic(cfg)
    j, values = _sweep_values(cfg)
    dim = _theta_dim(cfg, scene)
    space = scene.parameter_space if scene is not None else None
    grid = _delta_grid(cfg, j, dim, space)
    xi = float(cfg.get("xi", 0.01))
    spp = int(cfg.get("spp", 256))
    forward = _make_forward(cfg, scene, analytic, seed, spp, from_stack)
    rows = []
    for value in values:
        theta = _theta_vec(scene, cfg, j, value)
        local = grid or DeltaGrid.from_parameter_space(space, theta)
        for noise in _noise_models(cfg):
            res = hcr_bound(forward, theta, local, noise, j=j)
            try:
                cr = cr_limit(forward, theta, xi, noise, j=j, space=space)
                cr_val = cr.bound
            except (BoundsError, ImageIOError):
                cr_val = math.nan
            rows.append([
                _fmt(float(value)), j, noise.label(),
                _fmt(float(res.bound)), _fmt(cr_val),
                ";".join(repr(float(d)) for d in res.argmax_delta),
                int(res.flags.get("unbounded", False)),
            ])
    _write_csv(
        os.path.join(out_dir, "bounds.csv"),
        ["theta", "j", "noise", "hcr", "cr", "argmax_delta", "unbounded"],
        rows,
    )
    return EXIT_OK


def cmd_fisher(cfg, out_dir, seed, from_stack=None):
    scene, analytic = _load_scene_or_analytic(cfg)
    j, values = _sweep_values(cfg)
    xi = float(cfg.get("xi", 0.01))
    spp = int(cfg.get("spp", 256))
    rounds = int(cfg.get("fisher", {}).get("rounds", 16))
    forward = _make_forward(cfg, scene, analytic, seed, spp, from_stack)
    rows = []
    for ti, value in enumerate(values):
        theta = _theta_vec(scene, cfg, j, value)
        fisher_base = derive_seed(seed, ti, 0xF1)
        grad = fd_gradient(forward, theta, j=j, xi=xi, rounds=rounds,
                           base_seed=fisher_base)
        L = forward(theta, spp=spp)
        for noise in _noise_models(cfg):
            fi = pixelwise_fi(grad, L, noise)
            total = total_fi(fi)
            name = f"fi_{ti:03d}_{noise.label()}.pfm"
            write_pfm(RadianceImage(data=fi.data.astype(np.float32)),
                      os.path.join(out_dir, name))
            rows.append([_fmt(float(value)), j, noise.label(), _fmt(total), name])
    _write_csv(
        os.path.join(out_dir, "fisher.csv"),
        ["theta", "j", "noise", "total_fi", "map"],
        rows,
    )
    return EXIT_OK


def cmd_viewgrid(cfg, out_dir, seed):
    scene, analytic = _load_scene_or_analytic(cfg)
    _require(scene is not None, "config: viewgrid needs a scene")
    j, values = _sweep_values(cfg)
    vg = cfg.get("viewgrid", {})
    x_offsets = [float(v) for v in vg.get("x_offsets", [0.0])]
    z_offsets = [float(v) for v in vg.get("z_offsets", [0.0])]
    rounds = int(vg.get("rounds", 4))
    spp = int(vg.get("spp", cfg.get("spp", 128)))
    noise = _noise_models(cfg)[0]
    theta = _theta_vec(scene, cfg, j, values[0])
    mat = viewpoint_grid(
        scene, x_offsets, z_offsets, theta, noise, j=j,
        xi=float(cfg.get("xi", 0.01)), rounds=rounds,
        cfg=RenderConfig(spp=spp, seed=seed, depth=int(cfg.get("depth", 4))),
        base_seed=seed,
    )
    rows = [["dx\\dz"] + [_fmt(z) for z in z_offsets]]
    for a, dx in enumerate(x_offsets):
        rows.append([_fmt(dx)] + [_fmt(float(v)) for v in mat[a]])
    _write_csv(os.path.join(out_dir, "viewgrid.csv"), rows[0], rows[1:])
    return EXIT_OK


def cmd_intervals(cfg, out_dir, seed, from_stack=None):
    scene, analytic = _load_scene_or_analytic(cfg)
    j, values = _sweep_values(cfg)
    dim = _theta_dim(cfg, scene)
    space = scene.parameter_space if scene is not None else None
    grid = _delta_grid(cfg, j, dim, space)
    schedule = [int(s) for s in cfg.get("spp_schedule", [])]
    _require(len(set(schedule)) >= 2,
             "config: intervals need spp_schedule with >= 2 distinct values")
    n_eff = int(cfg.get("n_eff", max(schedule) * 4))
    forward = _make_forward(cfg, scene, analytic, seed, n_eff, from_stack)
    rows = []
    for value in values:
        theta = _theta_vec(scene, cfg, j, value)
        local = grid or DeltaGrid.from_parameter_space(space, theta)
        for noise in _noise_models(cfg):
            direct = hcr_bound(forward, theta, local, noise, j=j)
            corrected = hcr_hat(forward, theta, local, noise, j, schedule)
            iv = hcr_interval(direct, corrected)
            rows.append([
                _fmt(float(value)), j, noise.label(),
                _fmt(float(iv.lower)), _fmt(float(iv.upper)),
                int(iv.flags["inverted"]),
            ])
    _write_csv(
        os.path.join(out_dir, "intervals.csv"),
        ["theta", "j", "noise", "lower", "upper", "inverted"],
        rows,
    )
    return EXIT_OK


def cmd_validate_variance(cfg, out_dir, seed):
    scene, analytic = _load_scene_or_analytic(cfg)
    _require(scene is not None, "config: validate-variance needs a scene")
    j, values = _sweep_values(cfg)
    var_cfg = cfg.get("variance", {})
    n_schedule = [int(n) for n in var_cfg.get("n_schedule", [256, 512, 1024, 2048])]
    replicates = int(var_cfg.get("replicates", 20))
    draws = int(var_cfg.get("weight_draws", 1000))
    l_max = float(var_cfg.get("l_max", 12.0))
    theta = _theta_vec(scene, cfg, j, values[0])
    bound = apply_parameters(scene, theta)
    depth = int(cfg.get("depth", 4))
    renders = {}
    for n in n_schedule:
        renders[n] = [
            render(bound, RenderConfig(spp=n, seed=derive_seed(seed, n, k),
                                       depth=depth))
            for k in range(replicates)
        ]
    fit = variance_decay_fit(renders, weight_draws=draws, l_max=l_max, seed=seed)
    rows = [[_fmt(p), c] for p, c in sorted(fit.histogram.items())]
    _write_csv(os.path.join(out_dir, "variance.csv"), ["p_opt", "count"], rows)
    return EXIT_OK


def cmd_mle(cfg, out_dir, seed):
    scene, analytic = _load_scene_or_analytic(cfg)
    _require(scene is not None, "config: mle needs a scene")
    j, values = _sweep_values(cfg)
    dim = _theta_dim(cfg, scene)
    space = scene.parameter_space
    grid = _delta_grid(cfg, j, dim, space)
    mle_cfg = cfg.get("mle", {})
    runs = int(mle_cfg.get("runs", 30))
    half = float(mle_cfg.get("init_halfwidth", 0.5))
    spp = int(cfg.get("spp", 512))
    noise = _noise_models(cfg)[0]
    _require(noise.variant == "awgn", "config: mle requires an awgn noise model")
    forward = _make_forward(cfg, scene, analytic, seed, spp)
    rows = []
    for value in values:
        theta = _theta_vec(scene, cfg, j, value)
        local = grid or DeltaGrid.from_parameter_space(space, theta)
        direct = hcr_bound(forward, theta, local, noise, j=j)
        schedule = [int(s) for s in cfg.get("spp_schedule", [])]
        if len(set(schedule)) >= 2:
            upper = hcr_hat(forward, theta, local, noise, j, schedule).bound
        else:
            upper = direct.bound
        lo = np.clip(theta - half, space.lower, space.upper)
        hi = np.clip(theta + half, space.lower, space.upper)
        est_cfg = MleConfig(
            init_lo=lo, init_hi=hi,
            max_iters=int(mle_cfg.get("max_iters", 200)),
            switch_iter=int(mle_cfg.get("switch_iter", 50)),
            spp_coarse=int(mle_cfg.get("spp_coarse", 512)),
            spp_fine=int(mle_cfg.get("spp_fine", 1024)),
            fd_step=float(cfg.get("xi", 0.01)),
            tol=float(mle_cfg.get("tol", 1e-3)),
        )
        report = run_trials(theta, forward, noise, est_cfg, runs,
                            space=space, base_seed=seed,
                            obs_spp=int(mle_cfg.get("obs_spp", spp)))
        rows.append([
            _fmt(float(value) * 100.0),
            _fmt(float(direct.bound) * 1e4),
            _fmt(float(upper) * 1e4),
            _fmt(report.mse * 1e4),
            _fmt(report.var * 1e4),
            report.diverged_runs,
        ])
    _write_csv(
        os.path.join(out_dir, "mle.csv"),
        ["theta_star_cm", "hcr_lower_cm2", "hcr_upper_cm2",
         "mse_cm2", "var_cm2", "diverged_runs"],
        rows,
    )
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plenobounds",
        description="Estimation-bound experiments on rendered scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "render": "render a parameter sweep to PFM files plus a manifest",
        "bounds": "variance lower bounds over a parameter sweep",
        "fisher": "finite-difference Fisher information maps and totals",
        "viewgrid": "mean Fisher information over a grid of camera offsets",
        "intervals": "bias-corrected bound intervals over a sweep",
        "validate-variance": "pixel-variance decay-exponent fit histogram",
        "mle": "maximum-likelihood trials against the bounds",
    }
    stack_cmds = {"bounds", "fisher", "intervals"}
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        if name in stack_cmds:
            p.add_argument("--from-stack", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        if args.workers and args.workers > 0:
            import numba

            numba.set_num_threads(max(1, args.workers))
        from_stack = getattr(args, "from_stack", None)
        if from_stack is not None and not os.path.exists(from_stack):
            raise ConfigError(f"stack manifest {from_stack!r} does not exist")
        handlers = {
            "render": lambda: cmd_render(cfg, args.out, args.seed),
            "bounds": lambda: cmd_bounds(cfg, args.out, args.seed, from_stack),
            "fisher": lambda: cmd_fisher(cfg, args.out, args.seed, from_stack),
            "viewgrid": lambda: cmd_viewgrid(cfg, args.out, args.seed),
            "intervals": lambda: cmd_intervals(cfg, args.out, args.seed, from_stack),
            "validate-variance": lambda: cmd_validate_variance(cfg, args.out,
                                                               args.seed),
            "mle": lambda: cmd_mle(cfg, args.out, args.seed),
        }
        return handlers[args.command]()
    except (ConfigError, SceneError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RenderError, BoundsError, ImageIOError, EstimatorError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
