"""Parametric scene descriptions and parameter-to-attribute bindings.

A scene is a small set of Lambertian surfaces (axis-aligned boxes, rectangles,
spheres), rectangular area emitters, and a pinhole camera.  Abstract parameter
vectors are mapped onto concrete scene attributes through affine bindings, so
that a single scene document describes a whole family of scenes indexed by a
parameter point.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

_AXES = ("x", "y", "z")
# in-plane axes for an axis-aligned rectangle, keyed by its normal axis
_RECT_PLANE = {"x": (1, 2), "y": (0, 2), "z": (0, 1)}


class SceneError(ValueError):
    """Raised for schema violations and invariant violations; the message
    names the offending path or rule."""


def _vec3(value, path):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise SceneError(f"{path}: expected 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SceneError(f"{path}: non-finite component")
    return arr


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise SceneError(f"{path}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise SceneError(f"{path}: unknown key(s) {sorted(unknown)}")


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def validate(self, path):
        self.center = _vec3(self.center, f"{path}.center")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise SceneError(f"{path}.radius: sphere radius must be > 0")

    def to_dict(self):
        return {"type": "sphere", "center": list(self.center), "radius": self.radius}


@dataclass
class Box:
    min: np.ndarray
    max: np.ndarray

    def validate(self, path):
        self.min = _vec3(self.min, f"{path}.min")
        self.max = _vec3(self.max, f"{path}.max")
        if not np.all(self.max > self.min):
            raise SceneError(f"{path}: box extents must be > 0 on every axis")

    def to_dict(self):
        return {"type": "box", "min": list(self.min), "max": list(self.max)}


@dataclass
class Rect:
    """Axis-aligned rectangle: normal along `axis` at coordinate `offset`,
    spanning [min, max] in the two remaining axes (in x<y<z order)."""

    axis: str
    offset: float
    min: np.ndarray
    max: np.ndarray
    normal_sign: int = 1

    def validate(self, path):
        if self.axis not in _AXES:
            raise SceneError(f"{path}.axis: must be one of {_AXES}")
        if not np.isfinite(self.offset):
            raise SceneError(f"{path}.offset: non-finite")
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if self.min.shape != (2,) or self.max.shape != (2,):
            raise SceneError(f"{path}: rect min/max must have 2 components")
        if not (np.all(np.isfinite(self.min)) and np.all(np.isfinite(self.max))):
            raise SceneError(f"{path}: non-finite extent")
        if not np.all(self.max > self.min):
            raise SceneError(f"{path}: rect extents must be > 0")
        if self.normal_sign not in (-1, 1):
            raise SceneError(f"{path}.normal_sign: must be -1 or 1")

    @property
    def area(self):
        ext = self.max - self.min
        return float(ext[0] * ext[1])

    def to_dict(self):
        return {
            "type": "rect",
            "axis": self.axis,
            "offset": self.offset,
            "min": list(self.min),
            "max": list(self.max),
            "normal_sign": self.normal_sign,
        }


_SHAPE_TYPES = {"sphere": Sphere, "box": Box, "rect": Rect}


def _parse_shape(obj, path):
    _check_keys(
        obj,
        {"type", "center", "radius", "min", "max", "axis", "offset", "normal_sign"},
        path,
    )
    kind = obj.get("type")
    if kind == "sphere":
        _check_keys(obj, {"type", "center", "radius"}, path)
        shape = Sphere(center=obj.get("center"), radius=float(obj.get("radius", 0.0)))
    elif kind == "box":
        _check_keys(obj, {"type", "min", "max"}, path)
        shape = Box(min=obj.get("min"), max=obj.get("max"))
    elif kind == "rect":
        shape = Rect(
            axis=obj.get("axis", ""),
            offset=float(obj.get("offset", np.nan)),
            min=obj.get("min", ()),
            max=obj.get("max", ()),
            normal_sign=int(obj.get("normal_sign", 1)),
        )
    else:
        raise SceneError(f"{path}.type: unknown shape type {kind!r}")
    shape.validate(path)
    return shape


@dataclass
class Surface:
    shape: Sphere | Box | Rect
    albedo: np.ndarray  # per-channel reflectance; Lambertian BRDF = albedo/pi

    def validate(self, path):
        self.shape.validate(f"{path}.shape")
        self.albedo = _vec3(self.albedo, f"{path}.albedo")
        if np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise SceneError(f"{path}.albedo: albedo out of [0,1]")

    def to_dict(self):
        return {"shape": self.shape.to_dict(), "albedo": list(self.albedo)}


@dataclass
class Emitter:
    shape: Rect
    radiance: np.ndarray  # W sr^-1 m^-2, emitted uniformly over the hemisphere

    def validate(self, path):
        if not isinstance(self.shape, Rect):
            raise SceneError(f"{path}.shape: emitters must be rectangles")
        self.shape.validate(f"{path}.shape")
        self.radiance = _vec3(self.radiance, f"{path}.radiance")
        if np.any(self.radiance < 0):
            raise SceneError(f"{path}.radiance: must be >= 0 componentwise")

    def to_dict(self):
        return {"shape": self.shape.to_dict(), "radiance": list(self.radiance)}


@dataclass
class CameraModel:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov: float  # vertical field of view, degrees
    resolution: tuple  # (W, H)

    def validate(self, path="camera"):
        self.position = _vec3(self.position, f"{path}.position")
        self.look_at = _vec3(self.look_at, f"{path}.look_at")
        self.up = _vec3(self.up, f"{path}.up")
        if not (0 < self.fov < 180):
            raise SceneError(f"{path}.fov: must satisfy 0 < fov < 180")
        w, h = self.resolution
        if int(w) < 1 or int(h) < 1:
            raise SceneError(f"{path}.resolution: W and H must be >= 1")
        self.resolution = (int(w), int(h))
        if np.allclose(self.position, self.look_at):
            raise SceneError(f"{path}.look_at: must differ from position")

    def to_dict(self):
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov": self.fov,
            "resolution": list(self.resolution),
        }


@dataclass
class ParameterBinding:
    target: str  # e.g. "surfaces[2].shape.center.x"
    index: int  # component of theta driving this target
    scale: float = 1.0
    offset: float = 0.0

    def to_dict(self):
        return {
            "target": self.target,
            "index": self.index,
            "scale": self.scale,
            "offset": self.offset,
        }


@dataclass
class ParameterSpace:
    lower: np.ndarray
    upper: np.ndarray
    step: np.ndarray  # grid step for sweep / supremum operations

    def validate(self, path="parameter_space"):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        self.step = np.asarray(self.step, dtype=np.float64)
        if not (self.lower.shape == self.upper.shape == self.step.shape):
            raise SceneError(f"{path}: lower/upper/step shapes differ")
        if np.any(self.lower >= self.upper):
            raise SceneError(f"{path}: lower must be < upper componentwise")
        if np.any(self.step <= 0):
            raise SceneError(f"{path}: step must be > 0")
        if np.any(self.upper - self.lower < self.step):
            raise SceneError(f"{path}: grid needs >= 2 points per component")

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, values):
        values = np.asarray(values, dtype=np.float64)
        return bool(np.all(values >= self.lower) and np.all(values <= self.upper))

    def grid(self, j):
        """Grid of component-j values from lower[j] to upper[j] at step[j]."""
        n = int(np.floor((self.upper[j] - self.lower[j]) / self.step[j] + 1e-9)) + 1
        return self.lower[j] + self.step[j] * np.arange(n)

    def to_dict(self):
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "step": list(self.step),
        }


@dataclass
class ParameterPoint:
    values: np.ndarray
    space: ParameterSpace | None = None

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if self.space is not None and not self.space.contains(self.values):
            raise SceneError(
                f"parameter point {list(self.values)} outside parameter space bounds"
            )


@dataclass
class SceneDescription:
    camera: CameraModel
    surfaces: list = field(default_factory=list)
    emitters: list = field(default_factory=list)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bindings: list = field(default_factory=list)
    parameter_space: ParameterSpace | None = None
    channels: int = 3

    def validate(self):
        self.camera.validate()
        for i, s in enumerate(self.surfaces):
            s.validate(f"surfaces[{i}]")
        for i, e in enumerate(self.emitters):
            e.validate(f"emitters[{i}]")
        self.background = _vec3(self.background, "background")
        if np.any(self.background < 0):
            raise SceneError("background: must be >= 0 componentwise")
        if not self.emitters and not np.any(self.background > 0):
            raise SceneError("scene needs at least one emitter or nonzero background")
        if self.parameter_space is not None:
            self.parameter_space.validate()
        self._validate_bindings()
        self._check_camera_outside_solids()

    def _validate_bindings(self):
        dim = self.parameter_space.dim if self.parameter_space is not None else 0
        bound = set()
        for i, b in enumerate(self.bindings):
            path = f"bindings[{i}]"
            if self.parameter_space is None:
                raise SceneError(f"{path}: bindings require a parameter_space")
            if not (0 <= b.index < dim):
                raise SceneError(f"{path}.index: out of range for {dim} parameters")
            resolve_target(self, b.target)  # raises if unresolvable
            bound.add(b.index)
        if self.bindings:
            missing = set(range(dim)) - bound
            if missing:
                raise SceneError(
                    f"bindings: theta component(s) {sorted(missing)} bind no target"
                )

    def _check_camera_outside_solids(self):
        p = self.camera.position
        for i, s in enumerate(self.surfaces):
            sh = s.shape
            if isinstance(sh, Sphere) and np.linalg.norm(p - sh.center) < sh.radius:
                raise SceneError(f"camera.position: inside surfaces[{i}] sphere")
            if isinstance(sh, Box) and np.all(p > sh.min) and np.all(p < sh.max):
                raise SceneError(f"camera.position: inside surfaces[{i}] box")

    def to_dict(self):
        out = {
            "camera": self.camera.to_dict(),
            "surfaces": [s.to_dict() for s in self.surfaces],
            "emitters": [e.to_dict() for e in self.emitters],
            "background": list(self.background),
            "bindings": [b.to_dict() for b in self.bindings],
        }
        if self.parameter_space is not None:
            out["parameter_space"] = self.parameter_space.to_dict()
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _split_target(target):
    """'surfaces[2].shape.center.x' -> [('surfaces', 2), 'shape', 'center', 'x']"""
    tokens = []
    for part in target.split("."):
        if "[" in part:
            name, rest = part.split("[", 1)
            if not rest.endswith("]"):
                raise SceneError(f"target {target!r}: malformed index in {part!r}")
            try:
                idx = int(rest[:-1])
            except ValueError:
                raise SceneError(f"target {target!r}: non-integer index in {part!r}")
            tokens.append((name, idx))
        else:
            tokens.append(part)
    return tokens


def resolve_target(scene, target):
    """Resolve a binding target to (owner, key) such that the scalar lives at
    owner.<key> or owner[key].  Raises SceneError if it does not resolve."""
    tokens = _split_target(target)
    node = scene
    for t, tok in enumerate(tokens):
        last = t == len(tokens) - 1
        if isinstance(tok, tuple):
            name, idx = tok
            seq = getattr(node, name, None)
            if seq is None:
                raise SceneError(f"target {target!r}: no attribute {name!r}")
            try:
                nxt = seq[idx]
            except (IndexError, TypeError):
                raise SceneError(f"target {target!r}: index {idx} out of range")
            if last:
                raise SceneError(f"target {target!r}: does not end in a scalar")
            node = nxt
        elif isinstance(node, np.ndarray):
            if tok not in _AXES:
                raise SceneError(f"target {target!r}: component {tok!r} not in xyz")
            if not last:
                raise SceneError(f"target {target!r}: {tok!r} must be terminal")
            return node, _AXES.index(tok)
        else:
            if not hasattr(node, tok):
                raise SceneError(f"target {target!r}: no attribute {tok!r}")
            val = getattr(node, tok)
            if last:
                if not np.isscalar(val) and not isinstance(val, float):
                    raise SceneError(f"target {target!r}: not a scalar attribute")
                return node, tok
            node = val
    raise SceneError(f"target {target!r}: does not resolve to a scalar")


def _set_target(scene, target, value):
    owner, key = resolve_target(scene, target)
    if isinstance(owner, np.ndarray):
        owner[key] = value
    else:
        setattr(owner, key, float(value))


def parse_scene(document):
    """Parse and validate a scene document (JSON text or an already-decoded
    dict).  Unknown keys are rejected; invariant violations name the rule."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as e:
            raise SceneError(f"document is not valid JSON: {e}")
    else:
        doc = document
    _check_keys(
        doc,
        {"camera", "surfaces", "emitters", "background", "bindings", "parameter_space"},
        "document",
    )
    if "camera" not in doc:
        raise SceneError("document: missing required key 'camera'")
    cam_obj = doc["camera"]
    _check_keys(cam_obj, {"position", "look_at", "up", "fov", "resolution"}, "camera")
    camera = CameraModel(
        position=cam_obj.get("position", ()),
        look_at=cam_obj.get("look_at", ()),
        up=cam_obj.get("up", (0.0, 1.0, 0.0)),
        fov=float(cam_obj.get("fov", 0.0)),
        resolution=tuple(cam_obj.get("resolution", (0, 0))),
    )

    surfaces = []
    for i, s in enumerate(doc.get("surfaces", [])):
        path = f"surfaces[{i}]"
        _check_keys(s, {"shape", "albedo"}, path)
        if "shape" not in s or "albedo" not in s:
            raise SceneError(f"{path}: needs 'shape' and 'albedo'")
        surfaces.append(
            Surface(shape=_parse_shape(s["shape"], f"{path}.shape"), albedo=s["albedo"])
        )

    emitters = []
    for i, e in enumerate(doc.get("emitters", [])):
        path = f"emitters[{i}]"
        _check_keys(e, {"shape", "radiance"}, path)
        if "shape" not in e or "radiance" not in e:
            raise SceneError(f"{path}: needs 'shape' and 'radiance'")
        shape = _parse_shape(e["shape"], f"{path}.shape")
        if not isinstance(shape, Rect):
            raise SceneError(f"{path}.shape: emitters must be rectangles")
        emitters.append(Emitter(shape=shape, radiance=e["radiance"]))

    bindings = []
    for i, b in enumerate(doc.get("bindings", [])):
        path = f"bindings[{i}]"
        _check_keys(b, {"target", "index", "scale", "offset"}, path)
        if "target" not in b or "index" not in b:
            raise SceneError(f"{path}: needs 'target' and 'index'")
        bindings.append(
            ParameterBinding(
                target=str(b["target"]),
                index=int(b["index"]),
                scale=float(b.get("scale", 1.0)),
                offset=float(b.get("offset", 0.0)),
            )
        )

    space = None
    if "parameter_space" in doc:
        ps = doc["parameter_space"]
        _check_keys(ps, {"lower", "upper", "step"}, "parameter_space")
        space = ParameterSpace(
            lower=ps.get("lower", ()), upper=ps.get("upper", ()), step=ps.get("step", ())
        )

    scene = SceneDescription(
        camera=camera,
        surfaces=surfaces,
        emitters=emitters,
        background=np.asarray(doc.get("background", (0.0, 0.0, 0.0)), dtype=np.float64),
        bindings=bindings,
        parameter_space=space,
    )
    scene.validate()
    return scene


def load_scene(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_scene(f.read())


def apply_parameters(scene, theta):
    """Return a scene copy with every bound attribute set to
    scale * theta[index] + offset.  Unbound attributes are untouched."""
    if isinstance(theta, ParameterPoint):
        values = theta.values
    else:
        values = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if scene.parameter_space is not None and not scene.parameter_space.contains(values):
        raise SceneError(
            f"parameter point {list(values)} outside parameter space bounds"
        )
    out = copy.deepcopy(scene)
    for b in scene.bindings:
        if b.index >= len(values):
            raise SceneError(f"binding {b.target!r}: theta has no component {b.index}")
        _set_target(out, b.target, b.scale * values[b.index] + b.offset)
    out.validate()
    return out
