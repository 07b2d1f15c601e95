"""Raster types, pixel addressing and dataset I/O.

All rasters are row-major numpy arrays indexed ``[y, x]`` with y pointing
down. Depth is stored in millimeters as ``uint16``; a stored value of 0
marks a missing sensor reading.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from PIL import Image

__all__ = [
    "BACKGROUND_DEPTH",
    "DepthMap",
    "LabelMask",
    "ProbabilityMap",
    "Pixel",
    "Roi",
    "SamplePair",
    "FormatError",
    "DimensionMismatchError",
    "depth_at",
    "load_depth",
    "load_labels",
    "save_depth",
    "save_labels",
    "save_probability",
    "load_sample_pair",
    "save_sample_pair",
    "read_manifest",
    "write_manifest",
    "iter_manifest",
    "roi_mask",
    "load_manifest",
]

#: Depth returned for probes that leave the image or land on a sensor hole.
BACKGROUND_DEPTH = 50000


class FormatError(ValueError):
    """A raster file could not be read or has the wrong layout."""


class DimensionMismatchError(ValueError):
    """Two rasters that must share a shape do not."""

    def __init__(self, what: str, first: tuple[int, int], second: tuple[int, int]):
        self.first = first
        self.second = second
        super().__init__(
            f"{what}: {first[0]}x{first[1]} vs {second[0]}x{second[1]} (width x height)"
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class _Raster:
    data: np.ndarray

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass(frozen=True)
class DepthMap(_Raster):
    """Depth raster in millimeters; 0 means invalid."""

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise FormatError(f"depth map must be 2-D, got shape {a.shape}")
        if a.dtype != np.uint16:
            if a.size and (np.any(a < 0) or np.any(a > 65535)):
                raise FormatError("depth values must lie in [0, 65535]")
            a = a.astype(np.uint16)
        object.__setattr__(self, "data", _frozen(a))

    @property
    def valid(self) -> np.ndarray:
        return self.data != 0


@dataclass(frozen=True)
class LabelMask(_Raster):
    """Binary class raster (1 = foreground)."""

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise FormatError(f"label mask must be 2-D, got shape {a.shape}")
        if a.dtype == bool:
            a = a.astype(np.uint8)
        elif a.size and not np.isin(a, (0, 1)).all():
            raise ValueError("label mask values must be 0 or 1")
        object.__setattr__(self, "data", _frozen(a.astype(np.uint8, copy=False)))


@dataclass(frozen=True)
class ProbabilityMap(_Raster):
    """Per-pixel foreground probability in [0, 1]."""

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise FormatError(f"probability map must be 2-D, got shape {a.shape}")
        if a.size and not (np.all(a >= 0.0) and np.all(a <= 1.0)):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(a))

    def threshold(self, boundary: float) -> LabelMask:
        return LabelMask(self.data >= boundary)


class Pixel(NamedTuple):
    x: int
    y: int


class Roi(NamedTuple):
    """Axis-aligned pixel rectangle ``[x0, x0 + w) x [y0, y0 + h)``."""

    x0: int
    y0: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.y0, self.y1), slice(self.x0, self.x1))

    @classmethod
    def from_bounds(cls, x0: int, y0: int, x1: int, y1: int) -> "Roi":
        return cls(int(x0), int(y0), int(x1 - x0), int(y1 - y0))

    def clamp(self, width: int, height: int) -> "Roi":
        """Intersect with a ``width x height`` raster.

        Raises ValueError when nothing of the rectangle is left.
        """
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"{self} lies outside a {width}x{height} raster")
        return Roi.from_bounds(x0, y0, x1, y1)

    def expand(self, margin: int) -> "Roi":
        return Roi(self.x0 - margin, self.y0 - margin, self.w + 2 * margin, self.h + 2 * margin)

    def overlaps(self, other: "Roi") -> bool:
        return (
            self.x0 < other.x1 and other.x0 < self.x1
            and self.y0 < other.y1 and other.y0 < self.y1
        )

    def union(self, other: "Roi") -> "Roi":
        return Roi.from_bounds(
            min(self.x0, other.x0), min(self.y0, other.y0),
            max(self.x1, other.x1), max(self.y1, other.y1),
        )

    def contains(self, p: Pixel) -> bool:
        return self.x0 <= p[0] < self.x1 and self.y0 <= p[1] < self.y1


def roi_mask(rois: Sequence[Roi] | Roi | None, width: int, height: int) -> np.ndarray:
    """Boolean ``(height, width)`` mask of the union of *rois* (all True for None)."""
    if rois is None:
        return np.ones((height, width), dtype=bool)
    if isinstance(rois, Roi):
        rois = [rois]
    mask = np.zeros((height, width), dtype=bool)
    for r in rois:
        mask[r.clamp(width, height).slices] = True
    return mask


@dataclass(frozen=True)
class SamplePair:
    depth: DepthMap
    labels: LabelMask

    def __post_init__(self):
        if self.depth.size != self.labels.size:
            raise DimensionMismatchError("depth and labels differ", self.depth.size, self.labels.size)


def depth_at(depth: DepthMap | np.ndarray, p: Pixel | tuple[int, int],
             background: int = BACKGROUND_DEPTH) -> int:
    """Depth at ``p``, or *background* when ``p`` is off-image or invalid."""
    a = depth.data if isinstance(depth, DepthMap) else depth
    x, y = int(p[0]), int(p[1])
    if 0 <= x < a.shape[1] and 0 <= y < a.shape[0]:
        d = int(a[y, x])
        if d != 0:
            return d
    return background


# ---------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------
def _open(path: str | os.PathLike) -> Image.Image:
    try:
        im = Image.open(path)
        im.load()
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return im


def load_depth(path: str | os.PathLike) -> DepthMap:
    im = _open(path)
    if im.mode not in ("I;16", "I;16B", "I;16L"):
        raise FormatError(f"{path}: expected 16-bit single-channel image, got mode {im.mode}")
    return DepthMap(np.array(im, dtype=np.uint16))


def load_labels(path: str | os.PathLike) -> LabelMask:
    im = _open(path)
    if im.mode != "L":
        raise FormatError(f"{path}: expected 8-bit single-channel image, got mode {im.mode}")
    return LabelMask(np.array(im) >= 128)


def save_depth(depth: DepthMap, path: str | os.PathLike) -> None:
    Image.fromarray(np.ascontiguousarray(depth.data, dtype=np.uint16)).save(path, format="PNG")


def save_labels(labels: LabelMask, path: str | os.PathLike) -> None:
    Image.fromarray((labels.data * 255).astype(np.uint8)).save(path, format="PNG")


def save_probability(prob: ProbabilityMap, path: str | os.PathLike) -> None:
    """Export as 16-bit PNG with value ``round(p * 65535)``."""
    q = np.rint(prob.data * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def load_sample_pair(depth_path: str | os.PathLike, label_path: str | os.PathLike) -> SamplePair:
    """Read a depth PNG and its label PNG.

    Raises
    ------
    FormatError
        Either file is unreadable or has the wrong bit depth.
    DimensionMismatchError
        The two rasters differ in size.
    """
    return SamplePair(load_depth(depth_path), load_labels(label_path))


def save_sample_pair(pair: SamplePair, depth_path: str | os.PathLike,
                     label_path: str | os.PathLike) -> None:
    save_depth(pair.depth, depth_path)
    save_labels(pair.labels, label_path)


def read_manifest(path: str | os.PathLike) -> list[tuple[Path, Path]]:
    """Parse ``<depth_path>\\t<label_path>`` lines; relative paths resolve
    against the manifest's directory."""
    base = Path(path).parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected '<depth>\\t<label>'")
            entries.append(tuple(base / p if not Path(p).is_absolute() else Path(p) for p in parts))
    return entries


def write_manifest(path: str | os.PathLike, entries: Sequence[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d, l in entries:
            fh.write(f"{d}\t{l}\n")


def iter_manifest(path: str | os.PathLike) -> Iterator[SamplePair]:
    for d, l in read_manifest(path):
        yield load_sample_pair(d, l)


def load_manifest(path: str | os.PathLike) -> list[SamplePair]:
    return list(iter_manifest(path))
