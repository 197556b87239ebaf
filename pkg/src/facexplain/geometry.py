"""Landmark ingestion, semantic region rasterization and area weights."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import (
    ConventionMismatchError,
    CoordinateRangeError,
    DegenerateRegionError,
    LandmarkParseError,
    RegionMismatchError,
    RegionSpecError,
)

CONVENTION = "facemesh-468"
LANDMARK_COUNT = 468
BACKGROUND = "background"
REGION_COUNT = 13

# Subject's point of view, as in the face-mesh topology: "left" regions appear
# on the right half of an unmirrored image.
CANONICAL_REGIONS = (
    "background",
    "forehead_left", "forehead_right",
    "eye_left", "eye_right",
    "nose_left", "nose_right",
    "cheek_left", "cheek_right",
    "mouth_left", "mouth_right",
    "chin_left", "chin_right",
)

MIN_RASTER_SIZE = 16


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray  # (count, 2), normalized (x, y)
    convention: str = CONVENTION

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise LandmarkParseError(f"points must be (n, 2), got shape {pts.shape}")
        if self.convention != CONVENTION:
            raise ConventionMismatchError(f"unsupported landmark convention {self.convention!r}")
        if pts.shape[0] != LANDMARK_COUNT:
            raise ConventionMismatchError(
                f"{CONVENTION} expects {LANDMARK_COUNT} points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise CoordinateRangeError("landmark coordinates must be finite")
        bad = np.flatnonzero(np.any((pts < 0.0) | (pts > 1.0), axis=1))
        if bad.size:
            i = int(bad[0])
            raise CoordinateRangeError(
                f"landmark {i} = ({pts[i, 0]}, {pts[i, 1]}) outside [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def to_json(self) -> dict:
        return {"convention": self.convention, "points": self.points.tolist()}


def load_landmarks(source: IO | bytes | str) -> LandmarkSet:
    """Parse landmark JSON ``{"convention": "facemesh-468", "points": [[x, y], ...]}``.

    ``source`` may be a binary/text stream, raw bytes or a JSON string.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LandmarkParseError(f"malformed landmark JSON: {exc}") from exc
    if not isinstance(doc, dict) or "points" not in doc:
        raise LandmarkParseError("landmark JSON must be an object with a 'points' list")
    convention = doc.get("convention", CONVENTION)
    try:
        points = np.array(doc["points"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise LandmarkParseError(f"points are not numeric pairs: {exc}") from exc
    if points.ndim != 2 or points.shape[1:] != (2,):
        if points.size == 0:
            points = points.reshape(0, 2)
        else:
            raise LandmarkParseError(f"points must be [x, y] pairs, got shape {points.shape}")
    return LandmarkSet(points, convention=convention)


@dataclass(frozen=True)
class RegionSpec:
    name: str
    polygon: tuple[int, ...]
    side: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "polygon", tuple(int(i) for i in self.polygon))
        if self.side not in ("left", "right", "none"):
            raise RegionSpecError(f"region {self.name!r}: side must be left|right|none")
        if len(self.polygon) < 3:
            raise RegionSpecError(f"region {self.name!r}: polygon needs at least 3 indices")
        if min(self.polygon) < 0 or max(self.polygon) >= LANDMARK_COUNT:
            raise RegionSpecError(
                f"region {self.name!r}: landmark indices must lie in [0, {LANDMARK_COUNT})")


def validate_specs(specs: Sequence[RegionSpec]) -> None:
    names = [s.name for s in specs]
    if len(specs) != REGION_COUNT:
        raise RegionSpecError(f"expected {REGION_COUNT} regions, got {len(specs)}")
    if len(set(names)) != len(names):
        raise RegionSpecError("region names must be distinct")
    if names.count(BACKGROUND) != 1:
        raise RegionSpecError("exactly one region must be named 'background'")


def parse_region_specs(doc) -> list[RegionSpec]:
    if not isinstance(doc, list):
        raise RegionSpecError("region spec file must be a JSON array")
    try:
        specs = [RegionSpec(d["name"], d["polygon"], d.get("side", "none")) for d in doc]
    except (KeyError, TypeError) as exc:
        raise RegionSpecError(f"malformed region entry: {exc}") from exc
    validate_specs(specs)
    return specs


def load_region_specs(path=None) -> list[RegionSpec]:
    """Load a RegionSpec JSON array; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("facexplain").joinpath("data/regions_v1.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegionSpecError(f"malformed region spec JSON: {exc}") from exc
    return parse_region_specs(doc)


def default_region_specs() -> list[RegionSpec]:
    return load_region_specs(None)


# -- rasterization -----------------------------------------------------------

def scanline_fill(vertices: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd scan-fill of a polygon given in pixel coordinates.

    A pixel is set when its center lies inside the polygon. Edge crossings use
    the half-open rule ``(y0 <= yc) != (y1 <= yc)``.
    """
    v = np.asarray(vertices, dtype=np.float64)
    out = np.zeros((height, width), dtype=bool)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    row_lo = max(0, int(math.floor(y0.min() - 0.5)))
    row_hi = min(height, int(math.ceil(y0.max() + 0.5)))
    for j in range(row_lo, row_hi):
        yc = j + 0.5
        crosses = (y0 <= yc) != (y1 <= yc)
        if not crosses.any():
            continue
        ax, ay, bx, by = x0[crosses], y0[crosses], x1[crosses], y1[crosses]
        xs = np.sort(ax + (yc - ay) * (bx - ax) / (by - ay))
        for xa, xb in zip(xs[0::2], xs[1::2]):
            # centers i + 0.5 in [xa, xb)
            i0 = max(0, math.ceil(xa - 0.5))
            i1 = min(width, math.ceil(xb - 0.5))
            if i1 > i0:
                out[j, i0:i1] = True
    return out


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-12:
        return v.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


@dataclass
class RegionMaskSet:
    width: int
    height: int
    names: tuple[str, ...]
    masks: dict[str, np.ndarray]
    areas: dict[str, int] = field(default_factory=dict)
    labels: np.ndarray | None = None  # (height, width) index into names

    def __post_init__(self):
        if not self.areas:
            self.areas = {n: int(self.masks[n].sum()) for n in self.names}
        if self.labels is None:
            labels = np.full((self.height, self.width), -1, dtype=np.int16)
            for k, n in enumerate(self.names):
                labels[self.masks[n]] = k
            self.labels = labels

    @property
    def image_area(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def union(self, names: Iterable[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return np.isin(self.labels, idx)

    @classmethod
    def from_labels(cls, labels: np.ndarray, names: Sequence[str]) -> "RegionMaskSet":
        labels = np.asarray(labels)
        h, w = labels.shape
        masks = {n: labels == k for k, n in enumerate(names)}
        return cls(w, h, tuple(names), masks, labels=labels.astype(np.int16))


def build_region_masks(landmarks: LandmarkSet, specs: Sequence[RegionSpec],
                       width: int, height: int) -> RegionMaskSet:
    """Rasterize the face regions and derive the background as their complement.

    Pixels claimed by several face polygons go to the region whose polygon
    centroid is nearest (ties: earlier region in ``specs``).
    """
    if width < MIN_RASTER_SIZE or height < MIN_RASTER_SIZE:
        raise ValueError(f"raster must be at least {MIN_RASTER_SIZE}x{MIN_RASTER_SIZE}")
    validate_specs(specs)
    names = tuple(s.name for s in specs)
    scale = np.array([width, height], dtype=np.float64)
    face = [k for k, s in enumerate(specs) if s.name != BACKGROUND]
    bg = names.index(BACKGROUND)

    claims = np.zeros((len(face), height, width), dtype=bool)
    centroids = np.zeros((len(face), 2))
    for row, k in enumerate(face):
        poly = landmarks.points[list(specs[k].polygon)] * scale
        claims[row] = scanline_fill(poly, width, height)
        if not claims[row].any():
            raise DegenerateRegionError(names[k])
        centroids[row] = polygon_centroid(poly)

    labels = np.full((height, width), bg, dtype=np.int16)
    count = claims.sum(axis=0)
    single = count == 1
    labels[single] = np.asarray(face, dtype=np.int16)[claims[:, single].argmax(axis=0)]
    multi = np.nonzero(count > 1)
    if multi[0].size:
        cy = multi[0] + 0.5
        cx = multi[1] + 0.5
        d2 = (cx[None, :] - centroids[:, 0:1]) ** 2 + (cy[None, :] - centroids[:, 1:2]) ** 2
        d2[~claims[:, multi[0], multi[1]]] = np.inf
        labels[multi] = np.asarray(face, dtype=np.int16)[d2.argmin(axis=0)]

    masks = {n: labels == k for k, n in enumerate(names)}
    for n in names:
        if not masks[n].any():
            detail = "no pixels left outside the face" if n == BACKGROUND else \
                "no pixels left after overlap resolution"
            raise DegenerateRegionError(n, detail)
    return RegionMaskSet(width, height, names, masks, labels=labels)


# -- weights -----------------------------------------------------------------

@dataclass(frozen=True)
class PairWeights:
    w_a: dict[str, float]
    w_b: dict[str, float]
    w_hat: dict[str, float]
    denominator: float  # sum_i w_a[i] * w_b[i]


def area_weight(image_area: int, region_area: int) -> float:
    """Ratio of image area to region area."""
    return image_area / region_area


def pair_weights(masks_a: RegionMaskSet, masks_b: RegionMaskSet) -> PairWeights:
    missing = set(masks_a.names) ^ set(masks_b.names)
    if missing:
        raise RegionMismatchError(f"regions present in only one mask set: {sorted(missing)}")
    names = masks_a.names
    w_a = {n: area_weight(masks_a.image_area, masks_a.areas[n]) for n in names}
    w_b = {n: area_weight(masks_b.image_area, masks_b.areas[n]) for n in names}
    prods = np.array([w_a[n] * w_b[n] for n in names])
    denom = math.fsum(prods)
    w_hat = {n: float(p / denom) for n, p in zip(names, prods)}
    return PairWeights(w_a, w_b, w_hat, denom)
