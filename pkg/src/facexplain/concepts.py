"""Region importance via KernelSHAP over region-presence coalitions, fused with Borda count."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .embedding import Embedder
from .errors import CorpusError, FaceXplainError, RankingError, SolverError
from .geometry import RegionMaskSet, build_region_masks
from .perturbation import MaskingStrategy

log = logging.getLogger(__name__)

ENDPOINT_WEIGHT = 1e6
CHUNK = 512

# short names used in published concept tables; M_* is an alias of MO_*
ABBREVIATIONS = {
    "B": "background",
    "F": "forehead", "E": "eye", "N": "nose", "CHE": "cheek", "MO": "mouth", "M": "mouth", "CH": "chin",
}


def expand_abbreviation(code: str) -> str:
    """``"CHE_R"`` -> ``"cheek_right"``."""
    part, _, side = code.partition("_")
    base = ABBREVIATIONS[part.upper()]
    if not side:
        return base
    sides = {"R": "right", "L": "left"}
    return f"{base}_{sides[side.upper()]}"


def shapley_kernel_weight(m: int, k: int) -> float:
    if not 0 <= k <= m:
        raise ValueError(f"coalition size {k} outside [0, {m}]")
    if k == 0 or k == m:
        return ENDPOINT_WEIGHT
    return (m - 1) / (math.comb(m, k) * k * (m - k))


@dataclass
class ShapMatrix:
    phi: np.ndarray      # (m, d)
    base: np.ndarray     # (d,) value of the empty coalition
    full: np.ndarray     # (d,) value of the full coalition
    names: tuple[str, ...]
    mode: str = "exact"
    n_coalitions: int = 0


# -- coalition design ----------------------------------------------------------

def all_coalitions(m: int) -> np.ndarray:
    """Every non-trivial coalition (sizes 1..m-1), as a bool matrix."""
    codes = np.arange(1, 2 ** m - 1)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(bool)


def sampled_coalitions(m: int, budget: int, rng: np.random.Generator):
    """KernelSHAP design: enumerate whole size classes while the budget allows,
    then draw paired samples for the remaining sizes. Returns (Z, weights)."""
    sizes = list(range(1, (m + 1) // 2))  # k paired with m - k
    if m % 2 == 0:
        sizes.append(m // 2)
    kw = np.array([(m - 1) / (k * (m - k)) for k in sizes])
    paired = np.array([k != m - k for k in sizes])
    kw[paired] *= 2
    kw /= kw.sum()

    rows, weights = [], []
    left = budget
    mass_left = 1.0
    done = 0
    for i, k in enumerate(sizes):
        n_sub = math.comb(m, k) * (2 if paired[i] else 1)
        if n_sub > left:
            break
        w = kw[i] / n_sub
        for combo in itertools.combinations(range(m), k):
            z = np.zeros(m, dtype=bool)
            z[list(combo)] = True
            rows.append(z)
            weights.append(w)
            if paired[i]:
                rows.append(~z)
                weights.append(w)
        left -= n_sub
        mass_left -= kw[i]
        done = i + 1
    rest = sizes[done:]
    if rest and left >= 2:
        p = kw[done:] / kw[done:].sum()
        counts: dict[bytes, list] = {}
        n_draw = left // 2
        for _ in range(n_draw):
            k = rest[rng.choice(len(rest), p=p)]
            z = np.zeros(m, dtype=bool)
            z[rng.choice(m, size=k, replace=False)] = True
            for zz in (z, ~z):
                key = zz.tobytes()
                if key in counts:
                    counts[key][1] += 1
                else:
                    counts[key] = [zz, 1]
        total = sum(c for _, c in counts.values())
        for zz, c in counts.values():
            rows.append(zz)
            weights.append(mass_left * c / total)
    return np.array(rows, dtype=bool).reshape(-1, m), np.array(weights)


# -- solvers ---------------------------------------------------------------------

def solve_constrained(z: np.ndarray, w: np.ndarray, y: np.ndarray, base: np.ndarray, full: np.ndarray) -> np.ndarray:
    """Weighted least squares with the efficiency constraint eliminated exactly.

    ``z`` (n, m) coalitions, ``y`` (n, d) values. Returns phi (m, d) with
    ``phi.sum(0) == full - base`` up to rounding.
    """
    m = z.shape[1]
    zf = z.astype(np.float64)
    total = full - base
    target = y - base - zf[:, -1:] * total
    x = zf[:, :-1] - zf[:, -1:]
    sw = np.sqrt(w)[:, None]
    try:
        sol, _, rank, _ = np.linalg.lstsq(x * sw, target * sw, rcond=None)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"weighted least squares failed: {exc}") from exc
    if rank < m - 1:
        raise SolverError(f"coalition design is rank deficient ({rank} < {m - 1})")
    return np.vstack([sol, total - sol.sum(axis=0)])


def solve_penalized(z: np.ndarray, w: np.ndarray, y: np.ndarray, base: np.ndarray, full: np.ndarray) -> np.ndarray:
    """Plain weighted regression with intercept; the endpoints enter as rows
    carrying the surrogate kernel weight, so efficiency holds approximately."""
    m = z.shape[1]
    zz = np.vstack([np.zeros((1, m), bool), z, np.ones((1, m), bool)]).astype(np.float64)
    yy = np.vstack([base[None], y, full[None]])
    ww = np.concatenate([[shapley_kernel_weight(m, 0)], w, [shapley_kernel_weight(m, m)]])
    design = np.hstack([np.ones((len(zz), 1)), zz])
    sw = np.sqrt(ww)[:, None]
    try:
        sol, _, rank, _ = np.linalg.lstsq(design * sw, yy * sw, rcond=None)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"weighted least squares failed: {exc}") from exc
    if rank < m + 1:
        raise SolverError(f"coalition design is rank deficient ({rank} < {m + 1})")
    return sol[1:]


def shap_from_values(value_fn: Callable[[np.ndarray], np.ndarray], m: int, mode: str = "exact",
                     budget: int | None = None, seed: int = 0, solver: str = "constrained"):
    """KernelSHAP for an arbitrary vector-valued game ``value_fn(Z) -> (n, d)``.

    Returns (phi, base, full, n_coalitions).
    """
    ends = value_fn(np.array([np.zeros(m, bool), np.ones(m, bool)]))
    base, full = ends[0], ends[1]
    if mode == "exact":
        z = all_coalitions(m)
        sizes = z.sum(axis=1)
        w = np.array([shapley_kernel_weight(m, int(k)) for k in sizes])
    elif mode == "sampled":
        if budget is None or budget < 2 * m:
            raise ValueError(f"sampled mode needs budget >= {2 * m}")
        z, w = sampled_coalitions(m, int(budget), np.random.default_rng(seed))
    else:
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    y = value_fn(z)
    solve = {"constrained": solve_constrained, "penalized": solve_penalized}[solver]
    return solve(z, w, y, base, full), base, full, len(z) + 2


def occlusion_value_fn(image: np.ndarray, masks: RegionMaskSet, strategy: MaskingStrategy, embedder: Embedder):
    """Value of a coalition = embedding of the image with absent regions occluded."""
    image = np.asarray(image)
    fill = strategy.fill(image.shape)
    labels = masks.labels

    def value(z: np.ndarray) -> np.ndarray:
        out = []
        for s in range(0, len(z), CHUNK):
            present = z[s:s + CHUNK][:, labels]  # (c, H, W)
            batch = np.empty((len(present),) + image.shape, dtype=image.dtype)
            batch[:] = fill
            np.copyto(batch, image[None], where=present[..., None])
            try:
                out.append(embedder.vectors(batch))
            except FaceXplainError as exc:
                i = s + (getattr(exc, "index", None) or 0)
                flags = "".join("1" if f else "0" for f in z[i])
                raise type(exc)(f"coalition {flags}: {exc}") from exc
        return np.concatenate(out) if out else np.zeros((0, embedder.descriptor.dimension))

    return value


def kernel_shap(image, masks: RegionMaskSet, strategy: MaskingStrategy, embedder: Embedder,
                mode: str = "exact", budget: int | None = None, seed: int = 0,
                solver: str = "constrained") -> ShapMatrix:
    value = occlusion_value_fn(image, masks, strategy, embedder)
    phi, base, full, n = shap_from_values(value, len(masks.names), mode, budget, seed, solver)
    return ShapMatrix(phi, base, full, masks.names, mode, n)


# -- importance and fusion ---------------------------------------------------------

@dataclass
class PartImportance:
    names: tuple[str, ...]
    scores: np.ndarray

    def ranking(self) -> list[str]:
        """Descending importance, ties broken by region name."""
        order = sorted(range(len(self.names)), key=lambda i: (-self.scores[i], self.names[i]))
        return [self.names[i] for i in order]

    def as_dict(self) -> dict[str, float]:
        return {n: float(s) for n, s in zip(self.names, self.scores)}


def part_importance(shap: ShapMatrix) -> PartImportance:
    return PartImportance(tuple(shap.names), np.abs(shap.phi).sum(axis=1))


@dataclass
class GlobalConceptRanking:
    order: list[str]
    borda_scores: dict[str, int]
    n_images: int
    mode: str = "exact"
    per_image: list[dict[str, float]] = field(default_factory=list)

    def top(self, n: int) -> "GlobalConceptRanking":
        if not 1 <= n <= len(self.order):
            raise ValueError(f"top count must lie in [1, {len(self.order)}]")
        return GlobalConceptRanking(self.order[:n], self.borda_scores, self.n_images, self.mode, self.per_image)

    def to_json(self) -> dict:
        return {"order": list(self.order), "borda": [self.borda_scores[n] for n in self.order],
                "n_images": self.n_images, "mode": self.mode}


def borda_fuse(rankings: Sequence[Sequence[str]], importances: Sequence[dict[str, float]] | None = None,
               mode: str = "exact") -> GlobalConceptRanking:
    """Position i (1-based) in each ranking earns m - i points.

    Equal totals are ordered by mean raw importance (when given), then name.
    """
    if not rankings:
        raise RankingError("need at least one ranking")
    names = sorted(rankings[0])
    m = len(names)
    if len(set(names)) != m:
        raise RankingError("ranking contains duplicates")
    totals = dict.fromkeys(names, 0)
    for r in rankings:
        if len(r) != m or sorted(r) != names:
            raise RankingError(f"ranking is not a permutation of {names}: {list(r)}")
        for pos, n in enumerate(r, start=1):
            totals[n] += m - pos
    mean_imp = dict.fromkeys(names, 0.0)
    if importances:
        for n in names:
            mean_imp[n] = float(np.mean([imp[n] for imp in importances]))
    order = sorted(names, key=lambda n: (-totals[n], -mean_imp[n], n))
    return GlobalConceptRanking(order, totals, len(rankings), mode, list(importances or []))


def extract_concepts(images, landmark_sets, embedder: Embedder, strategy: MaskingStrategy | None = None,
                     mode: str = "exact", n: int = 8, specs=None, budget: int | None = None,
                     seed: int = 0) -> GlobalConceptRanking:
    """Per-image KernelSHAP -> importance -> ranking, Borda-fused and cut to ``n``.

    Images that fail are logged and skipped.
    """
    from .geometry import default_region_specs

    strategy = strategy or MaskingStrategy()
    specs = specs if specs is not None else default_region_specs()
    if not 1 <= n <= len(specs):
        raise ValueError(f"top count must lie in [1, {len(specs)}]")
    images = list(images)
    if not images:
        raise CorpusError("empty corpus")
    rankings, importances = [], []
    for i, (img, lm) in enumerate(zip(images, landmark_sets)):
        try:
            img = np.asarray(img)
            masks = build_region_masks(lm, specs, img.shape[1], img.shape[0])
            imp = part_importance(kernel_shap(img, masks, strategy, embedder, mode, budget, seed + i))
        except (FaceXplainError, ValueError) as exc:
            log.warning("skipping corpus image %d: %s", i, exc)
            continue
        rankings.append(imp.ranking())
        importances.append(imp.as_dict())
    if not rankings:
        raise CorpusError("every corpus image failed")
    return borda_fuse(rankings, importances, mode).top(n)
