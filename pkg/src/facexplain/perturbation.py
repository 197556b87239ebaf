"""Symmetric semantic occlusion and the S0 / S1 / S_AVG similarity maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import Embedder, EmbeddingError, cosine_similarity
from .errors import ImageSizeError, RegionMismatchError
from .geometry import PairWeights, RegionMaskSet, area_weight, pair_weights

log = logging.getLogger(__name__)

STRATEGIES = ("black", "white", "noise")


@dataclass(frozen=True)
class MaskingStrategy:
    kind: str = "black"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"masking strategy must be one of {STRATEGIES}, got {self.kind!r}")

    @classmethod
    def parse(cls, text: str, default_seed: int = 0) -> "MaskingStrategy":
        """``black``, ``white``, ``noise`` or ``noise:<seed>``."""
        kind, _, seed = text.partition(":")
        return cls(kind, int(seed) if seed else default_seed)

    def fill(self, shape) -> np.ndarray:
        if self.kind == "black":
            return np.zeros(shape, dtype=np.uint8)
        if self.kind == "white":
            return np.full(shape, 255, dtype=np.uint8)
        # one noise field per (seed, shape) so both images and every
        # iteration see identical fill values
        return np.random.default_rng(self.seed).integers(0, 256, size=shape, dtype=np.uint8)

    def label(self) -> str:
        return f"noise:{self.seed}" if self.kind == "noise" else self.kind


def apply_mask(image: np.ndarray, region_mask: np.ndarray, strategy: MaskingStrategy,
               fill: np.ndarray | None = None) -> np.ndarray:
    """Remove the pixels where ``region_mask`` is set, replacing them per ``strategy``."""
    image = np.asarray(image)
    region_mask = np.asarray(region_mask, dtype=bool)
    if region_mask.shape != image.shape[:2]:
        raise ImageSizeError(f"mask shape {region_mask.shape} does not match image {image.shape[:2]}")
    if fill is None:
        fill = strategy.fill(image.shape)
    out = image.copy()
    out[region_mask] = fill[region_mask]
    return out


# -- result types ------------------------------------------------------------

@dataclass(frozen=True)
class ContributionRow:
    region: str
    delta: float
    w_hat: float
    c: float
    score: float  # perturbed pair score


@dataclass
class ContributionTable:
    base_score: float
    rows: list[ContributionRow]

    def values(self) -> dict[str, float]:
        return {r.region: r.c for r in self.rows}

    def row(self, region: str) -> ContributionRow:
        for r in self.rows:
            if r.region == region:
                return r
        raise KeyError(region)

    def to_json(self) -> dict:
        return {
            "base_score": self.base_score,
            "rows": [{"region": r.region, "delta": r.delta, "w_hat": r.w_hat, "c": r.c} for r in self.rows],
        }


@dataclass
class SimilarityMap:
    per_pixel: np.ndarray
    per_region: dict[str, float]
    kind: str  # S0 | S1 | S_AVG

    @property
    def shape(self):
        return self.per_pixel.shape


def normalize_signed(values: dict[str, float]) -> dict[str, float]:
    """Split normalization: non-negative values over their sum, negatives over |sum|."""
    pos = sum(v for v in values.values() if v >= 0)
    neg = sum(-v for v in values.values() if v < 0)
    out = {}
    for n, v in values.items():
        if v >= 0:
            out[n] = v / pos if pos > 0 else 0.0
        else:
            out[n] = v / neg
    return out


def region_map(per_region: dict[str, float], masks: RegionMaskSet, kind: str) -> SimilarityMap:
    lut = np.array([per_region[n] for n in masks.names], dtype=np.float64)
    return SimilarityMap(lut[masks.labels], dict(per_region), kind)


def _check_pair(a, b, masks_a: RegionMaskSet, masks_b: RegionMaskSet):
    if a.shape[:2] != masks_a.shape or b.shape[:2] != masks_b.shape:
        raise ImageSizeError("image and mask sizes differ")
    if a.shape != b.shape:
        raise ImageSizeError(f"pair images differ in size: {a.shape} vs {b.shape}")
    if masks_a.names != masks_b.names:
        raise RegionMismatchError("mask sets do not share the same ordered region names")


def pair_score(embedder: Embedder, a, b) -> float:
    fa, fb = embedder.embed_batch([a, b])
    return cosine_similarity(fa, fb)


def _scores(embedder: Embedder, pairs: Sequence[tuple[np.ndarray, np.ndarray]], labels: Sequence[str]) -> np.ndarray:
    flat = [im for pair in pairs for im in pair]
    try:
        embs = embedder.embed_batch(flat)
    except EmbeddingError as exc:
        if exc.index is None:
            raise
        raise type(exc)(f"{labels[exc.index // 2]}: {exc}", index=exc.index // 2) from exc
    return np.array([cosine_similarity(embs[2 * i], embs[2 * i + 1]) for i in range(len(pairs))])


# -- single removal ----------------------------------------------------------

def single_removal(a, b, masks_a: RegionMaskSet, masks_b: RegionMaskSet, weights: PairWeights | None,
                   strategy: MaskingStrategy, embedder: Embedder, base_score: float | None = None):
    """Occlude each region in both images; returns (table, S0_A, S0_B)."""
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b, masks_a, masks_b)
    weights = weights or pair_weights(masks_a, masks_b)
    if base_score is None:
        base_score = pair_score(embedder, a, b)
    fill = strategy.fill(a.shape)
    names = masks_a.names
    pairs = [(apply_mask(a, masks_a.masks[n], strategy, fill), apply_mask(b, masks_b.masks[n], strategy, fill))
             for n in names]
    scores = _scores(embedder, pairs, names)
    rows = []
    for n, s in zip(names, scores):
        delta = base_score - float(s)
        rows.append(ContributionRow(n, delta, weights.w_hat[n], delta * weights.w_hat[n], float(s)))
    table = ContributionTable(base_score, rows)
    values = normalize_signed(table.values())
    return table, region_map(values, masks_a, "S0"), region_map(values, masks_b, "S0")


# -- greedy removal ----------------------------------------------------------

@dataclass
class GreedyStep:
    t: int
    region_added: str
    score_after: float
    delta: float          # previous score minus score_after
    w_hat_best: float
    c_best: float
    accumulated: tuple[str, ...]
    best_mask_a: np.ndarray = field(repr=False)
    best_mask_b: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {
            "t": self.t, "region_added": self.region_added, "score_after": self.score_after,
            "delta": self.delta, "w_hat_best": self.w_hat_best, "c_best": self.c_best,
            "accumulated": list(self.accumulated),
        }


@dataclass
class GreedyTrace:
    polarity: str
    base_score: float
    theta: float
    t_max: int
    steps: list[GreedyStep] = field(default_factory=list)
    stop_reason: str = ""     # t_max | theta | exhausted
    stop_t: int = 0           # iteration at which the loop ended
    stop_delta: float = 0.0   # signed score change of that iteration
    weight_denominator: float = 0.0
    h1: dict[str, float] = field(default_factory=dict)  # raw per-region H1 values

    def scores(self) -> list[float]:
        return [s.score_after for s in self.steps]


def greedy_removal(a, b, masks_a: RegionMaskSet, masks_b: RegionMaskSet, strategy: MaskingStrategy,
                   embedder: Embedder, theta: float = 0.01, t_max: int = 12, polarity: str = "negative",
                   weights: PairWeights | None = None, base_score: float | None = None,
                   h1_update: str = "assign"):
    """Greedy joint occlusion; returns (S1_A, S1_B, trace) for one polarity.

    ``negative`` removes, at each step, the region whose joint occlusion with
    everything removed so far gives the lowest score; ``positive`` the highest.
    An iteration whose best candidate moves the score the wrong way is not
    recorded and ends the run. A run also ends once the step's score progress
    is at most ``theta``, after ``t_max`` steps, or when only one region is left
    (full occlusion of both images is never scored).

    ``h1_update="assign"`` writes each step's contribution over the whole
    accumulated mask; ``"add"`` accumulates it instead.
    """
    if not theta > 0:
        raise ValueError("theta must be > 0")
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if polarity not in ("negative", "positive"):
        raise ValueError("polarity must be 'negative' or 'positive'")
    if h1_update not in ("assign", "add"):
        raise ValueError("h1_update must be 'assign' or 'add'")
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b, masks_a, masks_b)
    weights = weights or pair_weights(masks_a, masks_b)
    if base_score is None:
        base_score = pair_score(embedder, a, b)
    fill = strategy.fill(a.shape)
    names = masks_a.names
    sign = 1.0 if polarity == "negative" else -1.0

    trace = GreedyTrace(polarity, base_score, theta, t_max, weight_denominator=weights.denominator)
    h1 = dict.fromkeys(names, 0.0)
    acc_a = np.zeros(masks_a.shape, dtype=bool)
    acc_b = np.zeros(masks_b.shape, dtype=bool)
    removed: list[str] = []
    s_prev = base_score
    t = 0
    while True:
        remaining = [n for n in names if n not in removed]
        if len(remaining) <= 1:
            trace.stop_reason = "exhausted"
            break
        t += 1
        cand_a = [acc_a | masks_a.masks[n] for n in remaining]
        cand_b = [acc_b | masks_b.masks[n] for n in remaining]
        pairs = [(apply_mask(a, ma, strategy, fill), apply_mask(b, mb, strategy, fill))
                 for ma, mb in zip(cand_a, cand_b)]
        try:
            scores = _scores(embedder, pairs, remaining)
        except EmbeddingError as exc:
            raise type(exc)(f"greedy iteration {t}: {exc}", index=exc.index) from exc
        # argmin/argmax return the first extremum: lowest canonical index wins ties
        k = int(np.argmin(scores) if polarity == "negative" else np.argmax(scores))
        s_t = float(scores[k])
        delta = s_prev - s_t
        progress = sign * delta
        trace.stop_t, trace.stop_delta = t, delta
        if progress < 0:
            trace.stop_reason = "theta"
            break
        acc_a, acc_b = cand_a[k], cand_b[k]
        removed.append(remaining[k])
        w_a = area_weight(masks_a.image_area, int(acc_a.sum()))
        w_b = area_weight(masks_b.image_area, int(acc_b.sum()))
        w_hat_best = w_a * w_b / weights.denominator
        c_best = delta * w_hat_best
        for n in removed:
            h1[n] = c_best if h1_update == "assign" else h1[n] + c_best
        trace.steps.append(GreedyStep(t, remaining[k], s_t, delta, w_hat_best, c_best, tuple(removed),
                                      acc_a, acc_b))
        s_prev = s_t
        if progress <= theta:
            trace.stop_reason = "theta"
            break
        if t >= t_max:
            trace.stop_reason = "t_max"
            break
    trace.h1 = h1
    values = normalize_signed(h1)
    log.debug("greedy %s stopped at t=%d (%s)", polarity, trace.stop_t, trace.stop_reason)
    return region_map(values, masks_a, "S1"), region_map(values, masks_b, "S1"), trace


def combine_greedy(trace_neg: GreedyTrace, trace_pos: GreedyTrace, masks_a: RegionMaskSet,
                   masks_b: RegionMaskSet):
    """S1 from the H1- and H1+ runs: per-region sum, then split normalization."""
    raw = {n: trace_neg.h1[n] + trace_pos.h1[n] for n in masks_a.names}
    values = normalize_signed(raw)
    return region_map(values, masks_a, "S1"), region_map(values, masks_b, "S1")


def average_map(s0: SimilarityMap, s1: SimilarityMap) -> SimilarityMap:
    if s0.per_pixel.shape != s1.per_pixel.shape:
        raise ImageSizeError(f"map shapes differ: {s0.per_pixel.shape} vs {s1.per_pixel.shape}")
    if list(s0.per_region) != list(s1.per_region):
        raise RegionMismatchError("maps cover different region sets")
    per_region = {n: (s0.per_region[n] + s1.per_region[n]) / 2.0 for n in s0.per_region}
    return SimilarityMap((s0.per_pixel + s1.per_pixel) / 2.0, per_region, "S_AVG")


# -- full pair explanation ---------------------------------------------------

@dataclass
class Explanation:
    base_score: float
    weights: PairWeights
    table: ContributionTable
    s0: tuple[SimilarityMap, SimilarityMap]
    s1: tuple[SimilarityMap, SimilarityMap]
    s_avg: tuple[SimilarityMap, SimilarityMap]
    trace_negative: GreedyTrace
    trace_positive: GreedyTrace


def explain_pair(a, b, masks_a: RegionMaskSet, masks_b: RegionMaskSet, embedder: Embedder,
                 strategy: MaskingStrategy | None = None, theta: float = 0.01, t_max: int = 12,
                 h1_update: str = "assign") -> Explanation:
    """Single removal, both greedy polarities and the average map for one pair."""
    strategy = strategy or MaskingStrategy()
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b, masks_a, masks_b)
    weights = pair_weights(masks_a, masks_b)
    base = pair_score(embedder, a, b)
    table, s0_a, s0_b = single_removal(a, b, masks_a, masks_b, weights, strategy, embedder, base)
    runs = {}
    for pol in ("negative", "positive"):
        _, _, runs[pol] = greedy_removal(a, b, masks_a, masks_b, strategy, embedder, theta, t_max, pol,
                                         weights, base, h1_update)
    s1_a, s1_b = combine_greedy(runs["negative"], runs["positive"], masks_a, masks_b)
    return Explanation(base, weights, table, (s0_a, s0_b), (s1_a, s1_b),
                       (average_map(s0_a, s1_a), average_map(s0_b, s1_b)),
                       runs["negative"], runs["positive"])
