"""Bit-exact float image persistence (PFM) and render-stack manifests.

PFM layout is normative: ASCII header ``PF\\n<width> <height>\\n-1.0\\n``
followed by H rows bottom-to-top of W RGB triplets as little-endian 32-bit
floats.  Sampling provenance (theta, spp, seed) lives in a CSV manifest, not
in the image file.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .renderer import RadianceImage

MANIFEST_FIELDS = ["path", "theta", "spp", "seed", "role"]
ROLES = {"primary", "perturbed", "gradient-plus", "gradient-minus"}


class ImageIOError(ValueError):
    pass


def write_pfm(image, path):
    """Write a color PFM.  Lossless: read_pfm(write_pfm(img)) is bit-identical
    in pixel data."""
    data = image.data if isinstance(image, RadianceImage) else np.asarray(image)
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ImageIOError("PFM writer expects an (H, W, 3) image")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(data[::-1].tobytes())  # bottom-to-top row order


def _read_token(f):
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise ImageIOError("malformed header: unexpected end of file")
        if c in b" \n\r\t":
            if tok:
                return tok
            continue
        tok += c


def read_pfm(path):
    """Read a color PFM written by write_pfm (or any little-endian PF file).
    Rejects NaN/Inf pixels and big-endian payloads."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic != b"PF":
            raise ImageIOError(f"malformed header: expected 'PF', got {magic!r}")
        try:
            w = int(_read_token(f))
            h = int(_read_token(f))
            scale = float(_read_token(f))
        except ValueError:
            raise ImageIOError("malformed header: bad dimensions or scale")
        if w < 1 or h < 1:
            raise ImageIOError("malformed header: nonpositive dimensions")
        if scale > 0:
            raise ImageIOError("big-endian unsupported")
        payload = f.read(w * h * 3 * 4)
        if len(payload) != w * h * 3 * 4:
            raise ImageIOError("truncated payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 3)[::-1].copy()
    if not np.all(np.isfinite(data)):
        raise ImageIOError("NaN/Inf pixels rejected on read")
    return RadianceImage(data=data)


@dataclass
class ManifestRow:
    path: str
    theta: np.ndarray
    spp: int
    seed: int
    role: str = "primary"

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=np.float64))
        if self.spp < 1:
            raise ImageIOError("manifest row: spp must be >= 1")
        if self.role not in ROLES:
            raise ImageIOError(f"manifest row: unknown role {self.role!r}")


@dataclass
class StackManifest:
    rows: list = field(default_factory=list)

    def validate(self):
        paths = set()
        dims = None
        for i, r in enumerate(self.rows):
            if r.path in paths:
                raise ImageIOError(f"manifest row {i}: duplicate path {r.path!r}")
            paths.add(r.path)
            if dims is None:
                dims = len(r.theta)
            elif len(r.theta) != dims:
                raise ImageIOError(f"manifest row {i}: theta dimensionality mismatch")

    def write(self, path):
        self.validate()
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(MANIFEST_FIELDS)
            for r in self.rows:
                theta = ";".join(repr(float(v)) for v in r.theta)
                writer.writerow([r.path, theta, r.spp, r.seed, r.role])

    @classmethod
    def read(cls, path):
        rows = []
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != MANIFEST_FIELDS:
                raise ImageIOError(f"manifest header must be {MANIFEST_FIELDS}")
            for rec in reader:
                if not rec:
                    continue
                if len(rec) != 5:
                    raise ImageIOError(f"manifest row has {len(rec)} fields, want 5")
                p, theta_s, spp, seed, role = rec
                theta = [float(v) for v in theta_s.split(";")] if theta_s else []
                rows.append(
                    ManifestRow(
                        path=p, theta=theta, spp=int(spp), seed=int(seed), role=role
                    )
                )
        m = cls(rows=rows)
        m.validate()
        return m


def load_stack(manifest_path):
    """Load every image referenced by a manifest, in row order.

    Returns a list of (theta, spp, RadianceImage).  Enforces dimension
    consistency across images and uniqueness of (theta, spp, seed) triples.
    """
    manifest = StackManifest.read(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    shape = None
    seen = set()
    for r in manifest.rows:
        key = (tuple(r.theta), r.spp, r.seed)
        if key in seen:
            raise ImageIOError(f"duplicate (theta, spp, seed) triple {key}")
        seen.add(key)
        full = r.path if os.path.isabs(r.path) else os.path.join(base, r.path)
        if not os.path.exists(full):
            raise ImageIOError(f"missing file {r.path!r}")
        img = read_pfm(full)
        if shape is None:
            shape = img.data.shape
        elif img.data.shape != shape:
            raise ImageIOError(
                f"dimension mismatch: {r.path!r} is {img.data.shape}, want {shape}"
            )
        img.meta.update({"theta": r.theta, "spp": r.spp, "seed": r.seed, "role": r.role})
        out.append((r.theta, r.spp, img))
    return out
