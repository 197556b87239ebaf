"""Synthetic aligned faces for tests and demos.

Faces are drawn from a hand-laid 2D template of the landmarks referenced by
the default region polygons. Each identity owns a per-region texture; a
genuine pair shares it, an impostor pair does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    LANDMARK_COUNT,
    LandmarkSet,
    RegionMaskSet,
    build_region_masks,
    default_region_specs,
)

# image-left half of the face (subject's right side) plus the midline
_RIGHT_HALF = {
    # face oval
    109: (0.42, 0.115), 67: (0.345, 0.14), 103: (0.28, 0.185), 54: (0.23, 0.245),
    21: (0.195, 0.315), 162: (0.178, 0.385), 127: (0.172, 0.455), 234: (0.172, 0.525),
    93: (0.178, 0.595), 132: (0.19, 0.655), 58: (0.21, 0.715), 172: (0.24, 0.77),
    136: (0.28, 0.82), 150: (0.32, 0.86), 149: (0.36, 0.895), 176: (0.40, 0.92),
    148: (0.45, 0.94),
    # brow line
    70: (0.24, 0.325), 63: (0.29, 0.305), 105: (0.34, 0.295), 66: (0.39, 0.30),
    107: (0.44, 0.315),
    # lower eye band, nose flank
    116: (0.23, 0.47), 117: (0.29, 0.478), 118: (0.35, 0.48), 245: (0.44, 0.46),
    193: (0.45, 0.35), 114: (0.43, 0.53), 129: (0.42, 0.60), 64: (0.43, 0.655),
    98: (0.45, 0.68), 97: (0.47, 0.69),
    # mouth surround
    203: (0.40, 0.70), 186: (0.36, 0.745), 57: (0.355, 0.78), 43: (0.37, 0.82),
    106: (0.41, 0.85),
    # eye and lip details
    33: (0.26, 0.40), 133: (0.41, 0.405), 159: (0.335, 0.375), 145: (0.335, 0.425),
    61: (0.375, 0.78), 37: (0.46, 0.755), 84: (0.46, 0.81),
}

_MIRROR = {
    109: 338, 67: 297, 103: 332, 54: 284, 21: 251, 162: 389, 127: 356, 234: 454,
    93: 323, 132: 361, 58: 288, 172: 397, 136: 365, 150: 379, 149: 378, 176: 400,
    148: 377, 70: 300, 63: 293, 105: 334, 66: 296, 107: 336, 116: 345, 117: 346,
    118: 347, 245: 465, 193: 417, 114: 343, 129: 358, 64: 294, 98: 327, 97: 326,
    203: 423, 186: 410, 57: 287, 43: 273, 106: 335, 33: 263, 133: 362, 159: 386,
    145: 374, 61: 291, 37: 267, 84: 314,
}

_MIDLINE = {
    10: 0.10, 151: 0.20, 9: 0.31, 168: 0.39, 6: 0.45, 197: 0.50, 195: 0.55, 5: 0.60,
    4: 0.64, 1: 0.665, 2: 0.69, 164: 0.72, 0: 0.745, 13: 0.775, 14: 0.785, 17: 0.82,
    18: 0.845, 200: 0.87, 199: 0.895, 175: 0.92, 152: 0.95,
}


def template_points() -> np.ndarray:
    """Canonical (468, 2) landmark layout in normalized coordinates."""
    pts = np.full((LANDMARK_COUNT, 2), np.nan)
    for i, (x, y) in _RIGHT_HALF.items():
        pts[i] = (x, y)
        pts[_MIRROR[i]] = (1.0 - x, y)
    for i, y in _MIDLINE.items():
        pts[i] = (0.5, y)
    # unused indices: a small deterministic spiral around the nose; they never
    # enter a default polygon but keep the set valid
    rest = np.flatnonzero(np.isnan(pts[:, 0]))
    k = np.arange(rest.size)
    r = 0.02 + 0.2 * np.sqrt(k / rest.size)
    a = k * 2.399963
    pts[rest, 0] = 0.5 + r * np.cos(a) * 0.9
    pts[rest, 1] = 0.55 + r * np.sin(a)
    return pts


def template_landmarks() -> LandmarkSet:
    return LandmarkSet(template_points())


def jitter_landmarks(rng: np.random.Generator, scale: float = 0.03, shift: float = 0.015,
                     rotate_deg: float = 2.0, point_noise: float = 0.003) -> LandmarkSet:
    """Template under a small random similarity transform plus per-point noise."""
    pts = template_points() - 0.5
    s = 1.0 + rng.uniform(-scale, scale)
    th = np.deg2rad(rng.uniform(-rotate_deg, rotate_deg))
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    pts = s * pts @ rot.T + rng.uniform(-shift, shift, size=2)
    pts += rng.normal(0.0, point_noise, size=pts.shape)
    return LandmarkSet(np.clip(pts + 0.5, 0.0, 1.0))


@dataclass(frozen=True)
class Identity:
    """Per-region texture parameters, rows follow the region order."""
    base: np.ndarray    # (13, 3) mean RGB in [0, 255]
    amp: np.ndarray     # (13,) stripe amplitude
    freq: np.ndarray    # (13, 2) cycles per image along x, y
    phase: np.ndarray   # (13,)

    @classmethod
    def random(cls, rng: np.random.Generator, n_regions: int = 13) -> "Identity":
        return cls(
            base=rng.uniform(40, 215, size=(n_regions, 3)),
            amp=rng.uniform(10, 40, size=n_regions),
            freq=rng.uniform(2, 12, size=(n_regions, 2)) * rng.choice([-1, 1], size=(n_regions, 2)),
            phase=rng.uniform(0, 2 * np.pi, size=n_regions),
        )


def render_face(masks: RegionMaskSet, identity: Identity, rng: np.random.Generator | None = None,
                pixel_noise: float = 0.0, only: str | None = None) -> np.ndarray:
    """Paint every region with its identity texture; returns uint8 (H, W, 3).

    With ``only`` set, every other region is left black.
    """
    h, w = masks.shape
    yy, xx = np.mgrid[0:h, 0:w]
    u, v = (xx + 0.5) / w, (yy + 0.5) / h
    img = np.zeros((h, w, 3))
    for k, name in enumerate(masks.names):
        if only is not None and name != only:
            continue
        m = masks.masks[name]
        wave = identity.amp[k] * np.sin(2 * np.pi * (identity.freq[k, 0] * u[m] + identity.freq[k, 1] * v[m])
                                        + identity.phase[k])
        img[m] = identity.base[k] + wave[:, None]
    if pixel_noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        img += rng.normal(0.0, pixel_noise, size=img.shape)
        if only is not None:
            img[~masks.masks[only]] = 0.0
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass
class SyntheticPair:
    image_a: np.ndarray
    image_b: np.ndarray
    landmarks_a: LandmarkSet
    landmarks_b: LandmarkSet
    masks_a: RegionMaskSet
    masks_b: RegionMaskSet
    genuine: bool


def make_pair(seed: int, genuine: bool = True, size: int = 128, specs=None,
              pixel_noise: float = 4.0, identity_noise: float = 0.08) -> SyntheticPair:
    """Aligned pair of synthetic faces.

    Genuine pairs share an identity up to ``identity_noise`` relative drift in
    the texture parameters; impostors draw independent identities.
    """
    rng = np.random.default_rng(seed)
    specs = specs if specs is not None else default_region_specs()
    lm_a, lm_b = jitter_landmarks(rng), jitter_landmarks(rng)
    masks_a = build_region_masks(lm_a, specs, size, size)
    masks_b = build_region_masks(lm_b, specs, size, size)
    ident_a = Identity.random(rng, len(specs))
    if genuine:
        def drift(x):
            return x * (1.0 + rng.normal(0.0, identity_noise, size=np.shape(x)))
        ident_b = Identity(np.clip(drift(ident_a.base), 0, 255), drift(ident_a.amp),
                           ident_a.freq, ident_a.phase + rng.normal(0.0, identity_noise, len(specs)))
    else:
        ident_b = Identity.random(rng, len(specs))
    img_a = render_face(masks_a, ident_a, rng, pixel_noise)
    img_b = render_face(masks_b, ident_b, rng, pixel_noise)
    return SyntheticPair(img_a, img_b, lm_a, lm_b, masks_a, masks_b, genuine)


def make_face(seed: int, size: int = 128, specs=None, only: str | None = None,
              pixel_noise: float = 4.0):
    """Single synthetic face: returns (image, landmarks, masks)."""
    rng = np.random.default_rng(seed)
    specs = specs if specs is not None else default_region_specs()
    lm = jitter_landmarks(rng)
    masks = build_region_masks(lm, specs, size, size)
    img = render_face(masks, Identity.random(rng, len(specs)), rng, pixel_noise, only=only)
    return img, lm, masks


def make_patch_fixture(seed: int, region: str, size: int = 128, bright: float = 225.0,
                       dark: float = 30.0) -> SyntheticPair:
    """Impostor pair whose ``region`` is strongly mismatched (bright in A, dark
    in B), the setting in which pasting that region should register as a gain."""
    pair = make_pair(seed, genuine=False, size=size)
    rng = np.random.default_rng(seed + 7919)
    k = pair.masks_a.names.index(region)
    ident_a, ident_b = Identity.random(rng, len(pair.masks_a.names)), Identity.random(rng, len(pair.masks_a.names))
    ident_a.base[k] = bright
    ident_b.base[k] = dark
    pair.image_a = render_face(pair.masks_a, ident_a, rng, 4.0)
    pair.image_b = render_face(pair.masks_b, ident_b, rng, 4.0)
    return pair
