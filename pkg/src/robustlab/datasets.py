"""Seeded synthetic 2-d classification sets and their CSV exchange format.

All generators emit points inside the unit box. Two-moons and rings are
min/max rescaled into [0,1]^2 and record the affine transform in the
dataset metadata (`rescale_offset`, `rescale_scale`) so tests can recover
pre-rescale geometry exactly; blobs are clipped instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParameterError, ParseError, SchemaError, ShapeError
from .model import FLOAT_FMT
from .tensor import Tensor


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned valid-input region with finite per-dimension bounds."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or not lo:
            raise ParameterError("domain bounds must be non-empty and of equal length")
        if not all(math.isfinite(a) and math.isfinite(b) for a, b in zip(lo, hi)):
            raise ParameterError("domain bounds must be finite")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ParameterError(f"domain needs lower < upper in every dimension, got {lo} / {hi}")

    @classmethod
    def unit(cls, dim: int) -> "DomainBox":
        return cls(lower=(0.0,) * dim, upper=(1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower)

    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper)

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lower_array(), self.upper_array())

    def contains(self, points: np.ndarray, tol: float = 0.0) -> bool:
        pts = np.asarray(points)
        return bool(
            np.all(pts >= self.lower_array() - tol) and np.all(pts <= self.upper_array() + tol)
        )


@dataclass(frozen=True)
class Dataset:
    """Labeled points plus the domain they live in and how they were made."""

    points: Tensor
    labels: np.ndarray
    domain: DomainBox
    num_classes: int
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        pts = self.points.data
        lab = np.asarray(self.labels)
        if pts.ndim != 2 or pts.shape[1] != self.domain.dim:
            raise ShapeError(f"points shape {pts.shape} does not match domain dim {self.domain.dim}")
        if lab.ndim != 1 or lab.shape[0] != pts.shape[0]:
            raise ShapeError(f"labels shape {lab.shape} does not match {pts.shape[0]} points")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ParameterError(f"labels must be integers, got dtype {lab.dtype}")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be at least 2")
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise ParameterError(f"labels must lie in [0, {self.num_classes})")
        if not self.domain.contains(pts):
            raise ParameterError("points must lie inside the domain box")
        lab = lab.astype(np.int64)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.domain.dim

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            points=Tensor._wrap(self.points.data[idx].copy()),
            labels=self.labels[idx],
            domain=self.domain,
            num_classes=self.num_classes,
            meta=dict(self.meta),
        )


def split_dataset(dataset: Dataset, n_first: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then split into (first n, rest)."""
    n = len(dataset)
    if not 0 < n_first < n:
        raise ParameterError(f"n_first must be in (0, {n}), got {n_first}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.take(perm[:n_first]), dataset.take(perm[n_first:])


def _fmt(v: float) -> str:
    return format(float(v), FLOAT_FMT)


def _fmt_vec(vec: np.ndarray) -> str:
    return " ".join(_fmt(v) for v in vec)


def _rescale_to_unit(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Min/max map onto [0,1] per dimension; returns (scaled, offset, scale).

    Inverse transform: original = scaled * scale + offset. Degenerate
    (constant) dimensions map to 0.5.
    """
    offset = points.min(axis=0)
    scale = points.max(axis=0) - offset
    degenerate = scale == 0.0
    scale = np.where(degenerate, 1.0, scale)
    offset = np.where(degenerate, offset - 0.5, offset)
    return (points - offset) / scale, offset, scale


def _balanced_labels(n: int, num_classes: int) -> np.ndarray:
    return np.repeat(np.arange(num_classes), n // num_classes)


def gen_two_moons(n: int, noise_sigma: float, seed: int) -> Dataset:
    """Two interleaved radius-1 half-circle arcs, the second flipped and
    offset by (1, -0.5), plus isotropic Gaussian noise; rescaled to [0,1]^2.
    """
    if n <= 0 or n % 2:
        raise ParameterError(f"two moons needs a positive even n, got {n}")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    half = n // 2
    t0 = rng.uniform(0.0, math.pi, half)
    t1 = rng.uniform(0.0, math.pi, half)
    arc0 = np.column_stack([np.cos(t0), np.sin(t0)])
    arc1 = np.column_stack([1.0 + np.cos(t1), 0.5 - np.sin(t1)])
    raw = np.concatenate([arc0, arc1]) + noise_sigma * rng.standard_normal((n, 2))
    scaled, offset, scale = _rescale_to_unit(raw)
    meta = {
        "generator": "two_moons",
        "seed": str(seed),
        "noise_sigma": _fmt(noise_sigma),
        "rescale_offset": _fmt_vec(offset),
        "rescale_scale": _fmt_vec(scale),
    }
    return Dataset(
        points=Tensor._wrap(scaled),
        labels=_balanced_labels(n, 2),
        domain=DomainBox.unit(2),
        num_classes=2,
        meta=meta,
    )


def gen_gaussian_blobs(n: int, centers: Sequence[Sequence[float]], sigma: float, seed: int) -> Dataset:
    """Equal-sized isotropic Gaussian classes around the given centers,
    clipped to the unit box.
    """
    ctr = np.asarray(centers, dtype=np.float64)
    if ctr.ndim != 2 or ctr.shape[0] < 2:
        raise ParameterError("need at least 2 centers")
    dim = ctr.shape[1]
    box = DomainBox.unit(dim)
    if not box.contains(ctr):
        raise ParameterError(f"centers must lie inside the unit box, got {ctr.tolist()}")
    k = ctr.shape[0]
    if n <= 0 or n % k:
        raise ParameterError(f"n must be a positive multiple of the {k} centers, got {n}")
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    per = n // k
    pts = np.repeat(ctr, per, axis=0) + sigma * rng.standard_normal((n, dim))
    meta = {
        "generator": "gaussian_blobs",
        "seed": str(seed),
        "sigma": _fmt(sigma),
        "centers": ";".join(_fmt_vec(c) for c in ctr),
    }
    return Dataset(
        points=Tensor._wrap(box.clip(pts)),
        labels=_balanced_labels(n, k),
        domain=box,
        num_classes=k,
        meta=meta,
    )


def gen_rings(n: int, radii: tuple[float, float], noise_sigma: float, seed: int) -> Dataset:
    """Class 0 on an inner circle, class 1 on an outer one, noise added,
    then rescaled to [0,1]^2.
    """
    r_inner, r_outer = (float(r) for r in radii)
    if not 0 < r_inner < r_outer:
        raise ParameterError(f"radii must satisfy 0 < inner < outer, got {radii}")
    if n <= 0 or n % 2:
        raise ParameterError(f"rings needs a positive even n, got {n}")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    half = n // 2
    theta0 = rng.uniform(0.0, 2.0 * math.pi, half)
    theta1 = rng.uniform(0.0, 2.0 * math.pi, half)
    ring0 = r_inner * np.column_stack([np.cos(theta0), np.sin(theta0)])
    ring1 = r_outer * np.column_stack([np.cos(theta1), np.sin(theta1)])
    raw = np.concatenate([ring0, ring1]) + noise_sigma * rng.standard_normal((n, 2))
    scaled, offset, scale = _rescale_to_unit(raw)
    meta = {
        "generator": "rings",
        "seed": str(seed),
        "noise_sigma": _fmt(noise_sigma),
        "r_inner": _fmt(r_inner),
        "r_outer": _fmt(r_outer),
        "rescale_offset": _fmt_vec(offset),
        "rescale_scale": _fmt_vec(scale),
    }
    return Dataset(
        points=Tensor._wrap(scaled),
        labels=_balanced_labels(n, 2),
        domain=DomainBox.unit(2),
        num_classes=2,
        meta=meta,
    )


def rescale_inverse(dataset: Dataset) -> np.ndarray:
    """Undo the recorded affine rescale, recovering pre-rescale coordinates."""
    try:
        offset = np.array([float(v) for v in dataset.meta["rescale_offset"].split()])
        scale = np.array([float(v) for v in dataset.meta["rescale_scale"].split()])
    except KeyError as e:
        raise SchemaError(f"dataset metadata lacks {e.args[0]!r}; was it rescaled?") from None
    return dataset.points.data * scale + offset


def save_csv(dataset: Dataset, path) -> None:
    """CSV with `#`-comment metadata lines, a header row, then one row per point."""
    dim = dataset.dim
    lines = []
    lines.append(f"# num_classes = {dataset.num_classes}")
    lines.append(f"# domain_lower = {_fmt_vec(dataset.domain.lower_array())}")
    lines.append(f"# domain_upper = {_fmt_vec(dataset.domain.upper_array())}")
    for key in sorted(dataset.meta):
        lines.append(f"# {key} = {dataset.meta[key]}")
    lines.append(",".join([f"x{i}" for i in range(dim)] + ["label"]))
    pts, labs = dataset.points.data, dataset.labels
    for row, lab in zip(pts, labs):
        lines.append(",".join([_fmt(v) for v in row] + [str(int(lab))]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_csv(path) -> Dataset:
    """Parse a dataset CSV written by `save_csv`.

    Raises ParseError with the offending line number for malformed content
    and SchemaError for declared-schema violations (e.g. a label >= C).
    """
    text = Path(path).read_text(encoding="utf-8")
    meta: dict[str, str] = {}
    header: list[str] | None = None
    header_line = 0
    rows: list[tuple[int, str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if "=" not in body:
                raise ParseError(f"comment is not 'key = value': {body!r}", line=lineno)
            key, value = body.split("=", 1)
            meta[key.strip()] = value.strip()
            continue
        if header is None:
            header = stripped.split(",")
            header_line = lineno
            continue
        rows.append((lineno, stripped))
    if header is None:
        raise ParseError("missing header row")
    dim = len(header) - 1
    if dim < 1 or header != [f"x{i}" for i in range(dim)] + ["label"]:
        raise ParseError(f"bad header {','.join(header)!r}", line=header_line)

    for key in ("num_classes", "domain_lower", "domain_upper"):
        if key not in meta:
            raise ParseError(f"missing required metadata comment {key!r}")
    try:
        num_classes = int(meta.pop("num_classes"))
        lower = tuple(float(v) for v in meta.pop("domain_lower").split())
        upper = tuple(float(v) for v in meta.pop("domain_upper").split())
    except ValueError as e:
        raise ParseError(f"bad metadata value: {e}") from None
    if len(lower) != dim or len(upper) != dim:
        raise SchemaError(f"domain bounds have dim {len(lower)}, header declares {dim}")
    domain = DomainBox(lower, upper)

    points = np.empty((len(rows), dim))
    labels = np.empty(len(rows), dtype=np.int64)
    for i, (lineno, row) in enumerate(rows):
        cells = row.split(",")
        if len(cells) != dim + 1:
            raise ParseError(f"expected {dim + 1} cells, got {len(cells)}", line=lineno)
        try:
            points[i] = [float(c) for c in cells[:dim]]
            labels[i] = int(cells[dim])
        except ValueError:
            raise ParseError(f"non-numeric cell in row {row!r}", line=lineno) from None
        if not (0 <= labels[i] < num_classes):
            raise SchemaError(f"label {labels[i]} outside declared [0, {num_classes}) (line {lineno})")
    if not np.all(np.isfinite(points)):
        raise SchemaError("dataset contains non-finite coordinates")
    if not domain.contains(points):
        raise SchemaError("dataset contains points outside its declared domain")
    return Dataset(
        points=Tensor._wrap(points),
        labels=labels,
        domain=domain,
        num_classes=num_classes,
        meta=meta,
    )
