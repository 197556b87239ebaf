"""Faithfulness harness: cut-and-paste patch test and masking sensitivity."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .embedding import Embedder
from .errors import ImageSizeError, InputError
from .geometry import RegionMaskSet
from .perturbation import Explanation, MaskingStrategy, SimilarityMap, explain_pair, pair_score

DIRECTIONS = ("B->A", "A->B")


@dataclass(frozen=True)
class PatchRect:
    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InputError(f"patch must have positive area, got {self.width}x{self.height}")
        if self.x < 0 or self.y < 0:
            raise InputError("patch origin must be non-negative")

    def check_inside(self, shape) -> None:
        h, w = shape[:2]
        if self.x + self.width > w or self.y + self.height > h:
            raise InputError(f"patch {self} exceeds the {w}x{h} image")

    @property
    def slices(self):
        return (slice(self.y, self.y + self.height), slice(self.x, self.x + self.width))

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape[:2], dtype=bool)
        m[self.slices] = True
        return m

    @classmethod
    def bounding(cls, mask: np.ndarray) -> "PatchRect":
        ys, xs = np.nonzero(mask)
        return cls(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


@dataclass
class PipelineConfig:
    embedder: Embedder
    strategy: MaskingStrategy = field(default_factory=MaskingStrategy)
    theta: float = 0.01
    t_max: int = 12
    h1_update: str = "assign"

    def explain(self, a, b, masks_a, masks_b, strategy: MaskingStrategy | None = None) -> Explanation:
        return explain_pair(a, b, masks_a, masks_b, self.embedder, strategy or self.strategy,
                            self.theta, self.t_max, self.h1_update)


def cut_and_paste(a, b, rect: PatchRect, direction: str = "B->A"):
    """Copy the rectangle from the source image into the destination at the
    same coordinates; returns the (possibly modified) pair ``(a, b)``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ImageSizeError(f"pair images differ in size: {a.shape} vs {b.shape}")
    if direction not in DIRECTIONS:
        raise InputError(f"direction must be one of {DIRECTIONS}")
    rect.check_inside(a.shape)
    if direction == "B->A":
        a = a.copy()
        a[rect.slices] = b[rect.slices]
    else:
        b = b.copy()
        b[rect.slices] = a[rect.slices]
    return a, b


@dataclass
class PatchTestReport:
    rect: PatchRect
    direction: str
    score_before: float
    score_after: float
    map_before: tuple[SimilarityMap, SimilarityMap]
    map_after: tuple[SimilarityMap, SimilarityMap]
    affected_regions: list[str]
    region_deltas: dict[str, float]
    sign_changed_outside: list[str]

    def to_json(self) -> dict:
        return {
            "rect": {"x": self.rect.x, "y": self.rect.y, "width": self.rect.width, "height": self.rect.height},
            "direction": self.direction,
            "score_before": self.score_before,
            "score_after": self.score_after,
            "affected_regions": list(self.affected_regions),
            "region_before": dict(self.map_before[0].per_region),
            "region_after": dict(self.map_after[0].per_region),
            "region_deltas": dict(self.region_deltas),
            "sign_changed_outside": list(self.sign_changed_outside),
        }


def affected_regions(rect: PatchRect, *mask_sets: RegionMaskSet) -> list[str]:
    """Regions whose raster in any of the mask sets meets the rectangle."""
    names = mask_sets[0].names
    hit = set()
    for ms in mask_sets:
        inside = ms.labels[rect.slices]
        hit.update(names[k] for k in np.unique(inside))
    return [n for n in names if n in hit]


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def patch_test(config: PipelineConfig, a, b, masks_a: RegionMaskSet, masks_b: RegionMaskSet,
               rect: PatchRect, direction: str = "B->A") -> PatchTestReport:
    a2, b2 = cut_and_paste(a, b, rect, direction)
    before = config.explain(a, b, masks_a, masks_b)
    after = config.explain(a2, b2, masks_a, masks_b)
    hit = affected_regions(rect, masks_a, masks_b)
    pre, post = before.s_avg[0].per_region, after.s_avg[0].per_region
    deltas = {n: post[n] - pre[n] for n in pre}
    flipped = [n for n in pre if n not in hit and _sign(pre[n]) != _sign(post[n])]
    return PatchTestReport(rect, direction, before.base_score, after.base_score, before.s_avg, after.s_avg,
                           hit, deltas, flipped)


@dataclass
class SensitivityReport:
    strategies: list[str]
    maps: list[tuple[SimilarityMap, SimilarityMap]]
    scores: list[float]          # unperturbed pair score (identical for every strategy)
    distances: np.ndarray        # (k, k) mean absolute per-region S_AVG difference

    def to_json(self) -> dict:
        return {
            "strategies": list(self.strategies),
            "scores": list(self.scores),
            "region_values": [dict(m[0].per_region) for m in self.maps],
            "distances": self.distances.tolist(),
        }


def map_distance(m1: SimilarityMap, m2: SimilarityMap) -> float:
    return float(np.mean([abs(m1.per_region[n] - m2.per_region[n]) for n in m1.per_region]))


def masking_sensitivity(config: PipelineConfig, a, b, masks_a: RegionMaskSet, masks_b: RegionMaskSet,
                        strategies) -> SensitivityReport:
    strategies = list(strategies)
    if len(strategies) < 2:
        raise InputError("masking sensitivity needs at least two strategies")
    runs = [config.explain(a, b, masks_a, masks_b, s) for s in strategies]
    k = len(runs)
    dist = np.zeros((k, k))
    for i, j in itertools.combinations(range(k), 2):
        dist[i, j] = dist[j, i] = map_distance(runs[i].s_avg[0], runs[j].s_avg[0])
    return SensitivityReport([s.label() for s in strategies], [r.s_avg for r in runs],
                             [r.base_score for r in runs], dist)


def full_paste_score(embedder: Embedder, a, b, direction: str = "B->A") -> float:
    """Score after pasting the whole source image over the destination."""
    h, w = np.asarray(a).shape[:2]
    a2, b2 = cut_and_paste(a, b, PatchRect(0, 0, w, h), direction)
    return pair_score(embedder, a2, b2)
