"""Unbiased progressive Monte-Carlo path tracer.

Ground truth is defined as depth-D light transport: every pixel estimate is the
mean of N independent path samples, each an unbiased estimate of the D-segment
truncation of the light-transport integral.  Direct emitter sampling (next
event estimation) runs at every bounce; camera rays that hit an emitter
contribute its radiance directly.  No Russian roulette.

Randomness is counter-based: every (seed, pixel, sample) triple owns a
disjoint deterministic stream, so output is a pure function of (scene, config)
regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .scene import Box, Rect, SceneDescription, Sphere, apply_parameters

U64 = np.uint64
_GOLD = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_PIX_KEY = U64(0xD1B54A32D192ED03)
_SMP_KEY = U64(0x8CB92BA72F3D8DD7)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53

_EPS = 1e-6


class RenderError(RuntimeError):
    """Raised when rendering produces a non-finite sample."""


@dataclass
class RenderConfig:
    spp: int = 64
    seed: int = 0
    depth: int = 4  # camera-to-light segment count
    tile: int = 32

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF


@dataclass
class RadianceImage:
    """W x H x C float radiance grid with sampling provenance."""

    data: np.ndarray  # (H, W, C) float32
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError("image data must be (H, W, C)")
        if not np.all(np.isfinite(self.data)):
            raise RenderError("image contains non-finite values")
        if np.any(self.data < 0):
            raise ValueError("radiance must be >= 0")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _stream(seed, pix, samp):
    s = _mix(seed ^ (U64(pix) * _PIX_KEY))
    return _mix(s ^ (U64(samp) * _SMP_KEY))


@njit(cache=True, inline="always")
def _next_u(state):
    state = state + _GOLD
    return state, float(_mix(state) >> U64(11)) * _INV53


@njit(cache=True, inline="always")
def _rect_hit(ox, oy, oz, dx, dy, dz, axis, off, u0, v0, u1, v1):
    """Intersect an axis-aligned rectangle; returns t (or -1) and in-plane uv."""
    if axis == 0:
        o, d = ox, dx
    elif axis == 1:
        o, d = oy, dy
    else:
        o, d = oz, dz
    if abs(d) < 1e-12:
        return -1.0
    t = (off - o) / d
    if t <= _EPS:
        return -1.0
    px = ox + t * dx
    py = oy + t * dy
    pz = oz + t * dz
    if axis == 0:
        u, v = py, pz
    elif axis == 1:
        u, v = px, pz
    else:
        u, v = px, py
    if u < u0 or u > u1 or v < v0 or v > v1:
        return -1.0
    return t


@njit(cache=True)
def _intersect(
    ox, oy, oz, dx, dy, dz, t_max,
    sph, boxes, rct_axis, rct_off, rct_b, em_axis, em_off, em_b,
):
    """Closest hit against all geometry.

    Returns (t, kind, idx, nx, ny, nz); kind: -1 miss, 0 sphere, 1 box,
    2 surface rect, 3 emitter rect.  Normals face the incoming ray for
    two-sided primitives; emitter normals carry their emission orientation
    resolved at shading time.
    """
    best_t = t_max
    kind = -1
    idx = -1
    nx = 0.0
    ny = 0.0
    nz = 0.0

    for i in range(sph.shape[0]):
        cx = sph[i, 0] - ox
        cy = sph[i, 1] - oy
        cz = sph[i, 2] - oz
        r = sph[i, 3]
        b = cx * dx + cy * dy + cz * dz
        c = cx * cx + cy * cy + cz * cz - r * r
        disc = b * b - c
        if disc <= 0.0:
            continue
        sq = np.sqrt(disc)
        t = b - sq
        if t <= _EPS:
            t = b + sq
        if t <= _EPS or t >= best_t:
            continue
        best_t = t
        kind = 0
        idx = i
        nx = (ox + t * dx - sph[i, 0]) / r
        ny = (oy + t * dy - sph[i, 1]) / r
        nz = (oz + t * dz - sph[i, 2]) / r

    for i in range(boxes.shape[0]):
        tmin = _EPS
        tmax = best_t
        ax_hit = -1
        side = 0.0
        ok = True
        for a in range(3):
            if a == 0:
                o, d = ox, dx
            elif a == 1:
                o, d = oy, dy
            else:
                o, d = oz, dz
            lo = boxes[i, a]
            hi = boxes[i, a + 3]
            if abs(d) < 1e-12:
                if o < lo or o > hi:
                    ok = False
                    break
                continue
            inv = 1.0 / d
            t0 = (lo - o) * inv
            t1 = (hi - o) * inv
            sgn = -1.0
            if t0 > t1:
                t0, t1 = t1, t0
                sgn = 1.0
            if t0 > tmin:
                tmin = t0
                ax_hit = a
                side = sgn
            if t1 < tmax:
                tmax = t1
            if tmin > tmax:
                ok = False
                break
        if not ok or ax_hit < 0 or tmin >= best_t or tmin <= _EPS:
            continue
        best_t = tmin
        kind = 1
        idx = i
        nx = ny = nz = 0.0
        if ax_hit == 0:
            nx = side
        elif ax_hit == 1:
            ny = side
        else:
            nz = side

    for i in range(rct_axis.shape[0]):
        t = _rect_hit(
            ox, oy, oz, dx, dy, dz, rct_axis[i], rct_off[i],
            rct_b[i, 0], rct_b[i, 1], rct_b[i, 2], rct_b[i, 3],
        )
        if t > 0.0 and t < best_t:
            best_t = t
            kind = 2
            idx = i
            nx = ny = nz = 0.0
            if rct_axis[i] == 0:
                nx = -1.0 if dx > 0 else 1.0
            elif rct_axis[i] == 1:
                ny = -1.0 if dy > 0 else 1.0
            else:
                nz = -1.0 if dz > 0 else 1.0

    for i in range(em_axis.shape[0]):
        t = _rect_hit(
            ox, oy, oz, dx, dy, dz, em_axis[i], em_off[i],
            em_b[i, 0], em_b[i, 1], em_b[i, 2], em_b[i, 3],
        )
        if t > 0.0 and t < best_t:
            best_t = t
            kind = 3
            idx = i
            nx = ny = nz = 0.0

    if kind < 0:
        return -1.0, -1, -1, 0.0, 0.0, 0.0
    return best_t, kind, idx, nx, ny, nz


@njit(cache=True, inline="always")
def _occluded(
    ox, oy, oz, dx, dy, dz, dist,
    sph, boxes, rct_axis, rct_off, rct_b, em_axis, em_off, em_b,
):
    t, kind, _, _, _, _ = _intersect(
        ox, oy, oz, dx, dy, dz, dist * (1.0 - 1e-4),
        sph, boxes, rct_axis, rct_off, rct_b, em_axis, em_off, em_b,
    )
    return kind >= 0 and t > 0.0


@njit(cache=True, parallel=True)
def _render_kernel(
    width, height, spp, depth, seed,
    cam_pos, cam_right, cam_up, cam_fwd, tan_half, aspect,
    sph, sph_alb, boxes, box_alb, rct_axis, rct_off, rct_b, rct_alb,
    em_axis, em_off, em_b, em_sign, em_rad, em_area,
    bg, out,
):
    n_em = em_axis.shape[0]
    has_bg = bg[0] > 0.0 or bg[1] > 0.0 or bg[2] > 0.0
    inv_pi = 1.0 / np.pi
    for pix in prange(width * height):
        py = pix // width
        px = pix - py * width
        acc_r = 0.0
        acc_g = 0.0
        acc_b = 0.0
        for samp in range(spp):
            st = _stream(seed, pix, samp)
            st, jx = _next_u(st)
            st, jy = _next_u(st)
            ndc_x = (2.0 * (px + jx) / width - 1.0) * tan_half * aspect
            ndc_y = (1.0 - 2.0 * (py + jy) / height) * tan_half
            dx = cam_fwd[0] + ndc_x * cam_right[0] + ndc_y * cam_up[0]
            dy = cam_fwd[1] + ndc_x * cam_right[1] + ndc_y * cam_up[1]
            dz = cam_fwd[2] + ndc_x * cam_right[2] + ndc_y * cam_up[2]
            inv_n = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
            dx *= inv_n
            dy *= inv_n
            dz *= inv_n
            ox = cam_pos[0]
            oy = cam_pos[1]
            oz = cam_pos[2]

            beta_r = 1.0
            beta_g = 1.0
            beta_b = 1.0
            l_r = 0.0
            l_g = 0.0
            l_b = 0.0
            seg = 1
            while True:
                t, kind, idx, nx, ny, nz = _intersect(
                    ox, oy, oz, dx, dy, dz, 1e30,
                    sph, boxes, rct_axis, rct_off, rct_b, em_axis, em_off, em_b,
                )
                if kind < 0:
                    l_r += beta_r * bg[0]
                    l_g += beta_g * bg[1]
                    l_b += beta_b * bg[2]
                    break
                if kind == 3:
                    # emitter hits count only on the camera segment; after the
                    # first bounce emitters contribute via NEE alone
                    if seg == 1:
                        na = em_sign[idx]
                        if em_axis[idx] == 0:
                            facing = dx * na < 0.0
                        elif em_axis[idx] == 1:
                            facing = dy * na < 0.0
                        else:
                            facing = dz * na < 0.0
                        if facing:
                            l_r += beta_r * em_rad[idx, 0]
                            l_g += beta_g * em_rad[idx, 1]
                            l_b += beta_b * em_rad[idx, 2]
                    break

                hx = ox + t * dx
                hy = oy + t * dy
                hz = oz + t * dz
                if kind == 0:
                    a_r = sph_alb[idx, 0]
                    a_g = sph_alb[idx, 1]
                    a_b = sph_alb[idx, 2]
                    # sphere normal faces the incoming ray
                    if nx * dx + ny * dy + nz * dz > 0.0:
                        nx = -nx
                        ny = -ny
                        nz = -nz
                elif kind == 1:
                    a_r = box_alb[idx, 0]
                    a_g = box_alb[idx, 1]
                    a_b = box_alb[idx, 2]
                else:
                    a_r = rct_alb[idx, 0]
                    a_g = rct_alb[idx, 1]
                    a_b = rct_alb[idx, 2]

                if seg >= depth:
                    break

                sx = hx + _EPS * 10.0 * nx
                sy = hy + _EPS * 10.0 * ny
                sz = hz + _EPS * 10.0 * nz

                # next event estimation against every emitter
                for e in range(n_em):
                    st, ru = _next_u(st)
                    st, rv = _next_u(st)
                    lu = em_b[e, 0] + ru * (em_b[e, 2] - em_b[e, 0])
                    lv = em_b[e, 1] + rv * (em_b[e, 3] - em_b[e, 1])
                    if em_axis[e] == 0:
                        qx, qy, qz = em_off[e], lu, lv
                        lnx, lny, lnz = em_sign[e], 0.0, 0.0
                    elif em_axis[e] == 1:
                        qx, qy, qz = lu, em_off[e], lv
                        lnx, lny, lnz = 0.0, em_sign[e], 0.0
                    else:
                        qx, qy, qz = lu, lv, em_off[e]
                        lnx, lny, lnz = 0.0, 0.0, em_sign[e]
                    wx = qx - sx
                    wy = qy - sy
                    wz = qz - sz
                    d2 = wx * wx + wy * wy + wz * wz
                    if d2 < 1e-12:
                        continue
                    dist = np.sqrt(d2)
                    wx /= dist
                    wy /= dist
                    wz /= dist
                    cos_s = wx * nx + wy * ny + wz * nz
                    if cos_s <= 0.0:
                        continue
                    cos_l = -(wx * lnx + wy * lny + wz * lnz)
                    if cos_l <= 0.0:
                        continue
                    if _occluded(
                        sx, sy, sz, wx, wy, wz, dist,
                        sph, boxes, rct_axis, rct_off, rct_b,
                        em_axis, em_off, em_b,
                    ):
                        continue
                    g = cos_s * cos_l * em_area[e] / d2 * inv_pi
                    l_r += beta_r * a_r * em_rad[e, 0] * g
                    l_g += beta_g * a_g * em_rad[e, 1] * g
                    l_b += beta_b * a_b * em_rad[e, 2] * g

                if seg + 1 >= depth and not has_bg:
                    break
                if seg + 1 > depth:
                    break

                # cosine-weighted continuation; f * cos / pdf = albedo
                st, r1 = _next_u(st)
                st, r2 = _next_u(st)
                phi = 2.0 * np.pi * r1
                sin_t = np.sqrt(r2)
                cos_t = np.sqrt(1.0 - r2)
                if abs(nx) > 0.9:
                    bx, by, bz = 0.0, 1.0, 0.0
                else:
                    bx, by, bz = 1.0, 0.0, 0.0
                ux = ny * bz - nz * by
                uy = nz * bx - nx * bz
                uz = nx * by - ny * bx
                inv_u = 1.0 / np.sqrt(ux * ux + uy * uy + uz * uz)
                ux *= inv_u
                uy *= inv_u
                uz *= inv_u
                vx = ny * uz - nz * uy
                vy = nz * ux - nx * uz
                vz = nx * uy - ny * ux
                ca = np.cos(phi) * sin_t
                sa = np.sin(phi) * sin_t
                dx = ca * ux + sa * vx + cos_t * nx
                dy = ca * uy + sa * vy + cos_t * ny
                dz = ca * uz + sa * vz + cos_t * nz
                ox, oy, oz = sx, sy, sz
                beta_r *= a_r
                beta_g *= a_g
                beta_b *= a_b
                seg += 1

            acc_r += l_r
            acc_g += l_g
            acc_b += l_b
        out[py, px, 0] = acc_r / spp
        out[py, px, 1] = acc_g / spp
        out[py, px, 2] = acc_b / spp


def _flatten(scene: SceneDescription):
    """Pack a validated scene into the flat arrays the kernel consumes."""
    spheres = []
    sph_alb = []
    boxes = []
    box_alb = []
    rcts = []
    rct_alb = []
    for s in scene.surfaces:
        sh = s.shape
        if isinstance(sh, Sphere):
            spheres.append([*sh.center, sh.radius])
            sph_alb.append(s.albedo)
        elif isinstance(sh, Box):
            boxes.append([*sh.min, *sh.max])
            box_alb.append(s.albedo)
        elif isinstance(sh, Rect):
            rcts.append((_AXIS_IDX[sh.axis], sh.offset, *sh.min, *sh.max))
            rct_alb.append(s.albedo)

    em_axis = []
    em_off = []
    em_b = []
    em_sign = []
    em_rad = []
    em_area = []
    for e in scene.emitters:
        sh = e.shape
        em_axis.append(_AXIS_IDX[sh.axis])
        em_off.append(sh.offset)
        em_b.append([*sh.min, *sh.max])
        em_sign.append(float(sh.normal_sign))
        em_rad.append(e.radiance)
        em_area.append(sh.area)

    cam = scene.camera
    fwd = cam.look_at - cam.position
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, cam.up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("camera up vector is parallel to the view direction")
    right = right / nr
    up = np.cross(right, fwd)
    w, h = cam.resolution
    tan_half = np.tan(np.deg2rad(cam.fov) / 2.0)

    def arr(x, shape, dtype=np.float64):
        a = np.asarray(x, dtype=dtype)
        if a.size == 0:
            empty = tuple(0 if s == -1 else s for s in shape)
            return np.zeros(empty, dtype=dtype)
        return a.reshape(shape)

    return dict(
        width=w,
        height=h,
        cam_pos=np.asarray(cam.position, dtype=np.float64),
        cam_right=right.astype(np.float64),
        cam_up=up.astype(np.float64),
        cam_fwd=fwd.astype(np.float64),
        tan_half=float(tan_half),
        aspect=w / h,
        sph=arr(spheres, (-1, 4)),
        sph_alb=arr(sph_alb, (-1, 3)),
        boxes=arr(boxes, (-1, 6)),
        box_alb=arr(box_alb, (-1, 3)),
        rct_axis=arr([r[0] for r in rcts], (-1,), np.int64),
        rct_off=arr([r[1] for r in rcts], (-1,)),
        rct_b=arr([r[2:] for r in rcts], (-1, 4)),
        rct_alb=arr(rct_alb, (-1, 3)),
        em_axis=arr(em_axis, (-1,), np.int64),
        em_off=arr(em_off, (-1,)),
        em_b=arr(em_b, (-1, 4)),
        em_sign=arr(em_sign, (-1,)),
        em_rad=arr(em_rad, (-1, 3)),
        em_area=arr(em_area, (-1,)),
        bg=np.asarray(scene.background, dtype=np.float64),
    )


_AXIS_IDX = {"x": 0, "y": 1, "z": 2}


def render(scene: SceneDescription, cfg: RenderConfig, theta=None) -> RadianceImage:
    """Render the scene; each pixel is the mean of cfg.spp independent
    depth-cfg.depth path samples.  Deterministic in (scene, cfg)."""
    p = _flatten(scene)
    out = np.zeros((p["height"], p["width"], 3), dtype=np.float64)
    _render_kernel(
        p["width"], p["height"], cfg.spp, cfg.depth, U64(cfg.seed),
        p["cam_pos"], p["cam_right"], p["cam_up"], p["cam_fwd"],
        p["tan_half"], p["aspect"],
        p["sph"], p["sph_alb"], p["boxes"], p["box_alb"],
        p["rct_axis"], p["rct_off"], p["rct_b"], p["rct_alb"],
        p["em_axis"], p["em_off"], p["em_b"], p["em_sign"],
        p["em_rad"], p["em_area"], p["bg"], out,
    )
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise RenderError(f"non-finite sample at pixel (y={bad[0]}, x={bad[1]})")
    meta = {"spp": cfg.spp, "seed": cfg.seed, "depth": cfg.depth}
    if theta is not None:
        meta["theta"] = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    return RadianceImage(data=out.astype(np.float32), meta=meta)


def _mix_py(z: int) -> int:
    z &= 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(base_seed: int, *indices: int) -> int:
    """Derive a disjoint child seed from a base seed and an index path."""
    s = _mix_py(base_seed ^ 0xA0761D6478BD642F)
    for k in indices:
        s = _mix_py(s ^ ((k + 1) * 0xE7037ED1A0B428DB & 0xFFFFFFFFFFFFFFFF))
    return s


def render_stack(scene, thetas, cfgs, base_seed=None):
    """Render one image per (theta, cfg) pair with seeds derived from
    (base seed, theta index, cfg index), so all sample streams are disjoint."""
    if base_seed is None:
        base_seed = cfgs[0].seed
    images = []
    for ti, theta in enumerate(thetas):
        bound = apply_parameters(scene, theta)
        for ci, cfg in enumerate(cfgs):
            child = RenderConfig(
                spp=cfg.spp,
                seed=derive_seed(base_seed, ti, ci),
                depth=cfg.depth,
                tile=cfg.tile,
            )
            images.append(render(bound, child, theta=theta))
    return images


def theta_seed(base_seed: int, theta, spp: int) -> int:
    """Seed for the render of (theta, spp): distinct theta or sample counts
    get statistically uncorrelated sample streams."""
    values = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    s = _mix_py(base_seed ^ 0x2545F4914F6CDD1D)
    for v in values.tobytes():
        s = _mix_py(s ^ v)
    return _mix_py(s ^ spp)


class SceneForward:
    """Forward model theta -> radiance image for a parameterized scene.

    Calls are pure: the same (theta, spp, seed) always renders the same image.
    When seed is omitted it is derived from (cfg.seed, theta, spp), so
    different evaluation points use disjoint sample streams.
    """

    def __init__(self, scene: SceneDescription, cfg: RenderConfig):
        self.scene = scene
        self.cfg = cfg

    def __call__(self, theta, spp=None, seed=None):
        spp = self.cfg.spp if spp is None else spp
        if seed is None:
            seed = theta_seed(self.cfg.seed, theta, spp)
        cfg = RenderConfig(spp=spp, seed=seed, depth=self.cfg.depth, tile=self.cfg.tile)
        bound = apply_parameters(self.scene, theta)
        return render(bound, cfg, theta=theta).data.astype(np.float64)
