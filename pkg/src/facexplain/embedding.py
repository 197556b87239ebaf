"""Embedding backends and the cosine matching score."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmbeddingError,
    ImageSizeError,
    MissingEmbeddingError,
    ZeroNormError,
)


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    norm: float

    @classmethod
    def from_values(cls, values) -> "Embedding":
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size < 1:
            raise DimensionMismatchError("embedding must have at least one dimension")
        norm = float(np.linalg.norm(v))
        if not norm > 0.0:
            raise ZeroNormError("zero-norm embedding")
        v = v.copy()
        v.setflags(write=False)
        return cls(v, norm)

    @property
    def dim(self) -> int:
        return int(self.values.size)


def cosine_similarity(f_a: Embedding, f_b: Embedding) -> float:
    """Raw (unclamped) cosine of two embeddings."""
    if f_a.dim != f_b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {f_a.dim} vs {f_b.dim}")
    if f_a.norm <= 0.0 or f_b.norm <= 0.0:
        raise ZeroNormError("cosine of a zero-norm embedding")
    if f_a is f_b or np.array_equal(f_a.values, f_b.values):
        return 1.0
    return float(np.dot(f_a.values, f_b.values) / (f_a.norm * f_b.norm))


@dataclass(frozen=True)
class EmbedderDescriptor:
    kind: str  # model-file | precomputed-cache | synthetic
    dimension: int
    input_size: tuple[int, int]  # (width, height)
    determinism: str = "deterministic"
    concurrent_safe: bool = True


class Embedder:
    """Backend base class.

    Subclasses implement ``_vectors`` on a validated uint8 batch of shape
    (n, height, width, 3). ``vectors`` returns raw rows (zero rows allowed);
    ``embed``/``embed_batch`` wrap them as validated ``Embedding`` objects.
    """

    descriptor: EmbedderDescriptor

    def _check(self, image, index=None) -> np.ndarray:
        img = np.asarray(image)
        w, h = self.descriptor.input_size
        if img.shape != (h, w, 3):
            where = "" if index is None else f"image {index}: "
            raise ImageSizeError(f"{where}expected ({h}, {w}, 3) RGB raster, got {img.shape}")
        if img.dtype != np.uint8:
            img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        return img

    def vectors(self, images: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
        if len(images) == 0:
            return np.zeros((0, self.descriptor.dimension))
        w, h = self.descriptor.input_size
        if isinstance(images, np.ndarray) and images.dtype == np.uint8 and images.shape[1:] == (h, w, 3):
            batch = images
        else:
            batch = np.stack([self._check(im, i) for i, im in enumerate(images)])
        out = np.asarray(self._vectors(batch), dtype=np.float64)
        if out.shape != (len(batch), self.descriptor.dimension):
            raise DimensionMismatchError(
                f"backend returned shape {out.shape}, expected ({len(batch)}, {self.descriptor.dimension})")
        return out

    def _vectors(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def embed(self, image) -> Embedding:
        return Embedding.from_values(self.vectors([image])[0])

    def embed_batch(self, images) -> list[Embedding]:
        vecs = self.vectors(images)
        out = []
        for i, v in enumerate(vecs):
            try:
                out.append(Embedding.from_values(v))
            except EmbeddingError as exc:
                raise type(exc)(f"image {i}: {exc}", index=i) from exc
        return out


def to_gray(batch: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma in [0, 1] as float32."""
    weights = np.array([0.299, 0.587, 0.114], dtype=np.float32) / np.float32(255.0)
    return batch.astype(np.float32) @ weights


class SyntheticEmbedder(Embedder):
    """Deterministic block-statistics embedder.

    Grayscale at 64x64, 8x8 grid of blocks, block means then block standard
    deviations (128 values), zero padded to ``dimension``.
    """

    GRID = 8
    SIDE = 64

    def __init__(self, input_size=(128, 128), dimension=512):
        if dimension < 2 * self.GRID * self.GRID:
            raise ConfigError(f"synthetic embedder needs dimension >= {2 * self.GRID ** 2}")
        self.descriptor = EmbedderDescriptor("synthetic", int(dimension), tuple(input_size))

    def _resize(self, gray: np.ndarray) -> np.ndarray:
        n, h, w = gray.shape
        s = self.SIDE
        if h % s == 0 and w % s == 0:
            fh, fw = h // s, w // s
            pooled = gray.reshape(n, s, fh, s, fw).sum(axis=4).sum(axis=2)
            return pooled.astype(np.float64) / (fh * fw)
        return np.stack([
            np.asarray(Image.fromarray(g.astype(np.float32), mode="F").resize((s, s), Image.BILINEAR),
                       dtype=np.float64)
            for g in gray
        ])

    def _vectors(self, batch):
        g = self._resize(to_gray(batch))
        n, b = len(g), self.SIDE // self.GRID
        blocks = g.reshape(n, self.GRID, b, self.GRID, b).transpose(0, 1, 3, 2, 4).reshape(n, self.GRID ** 2, b * b)
        out = np.zeros((n, self.descriptor.dimension))
        k = self.GRID ** 2
        out[:, :k] = blocks.mean(axis=2)
        out[:, k:2 * k] = blocks.std(axis=2)
        return out


def image_key(image: np.ndarray) -> str:
    """sha256 of the raw uint8 raster bytes (row-major, RGB interleaved)."""
    return hashlib.sha256(np.ascontiguousarray(image, dtype=np.uint8).tobytes()).hexdigest()


class CacheEmbedder(Embedder):
    """Looks up precomputed embeddings in a directory of ``{sha256}.json`` files."""

    def __init__(self, directory, dimension: int, input_size=(128, 128)):
        self.directory = Path(directory)
        self.descriptor = EmbedderDescriptor("precomputed-cache", int(dimension), tuple(input_size))

    def _vectors(self, batch):
        out = np.zeros((len(batch), self.descriptor.dimension))
        for i, img in enumerate(batch):
            key = image_key(img)
            path = self.directory / f"{key}.json"
            try:
                doc = json.loads(path.read_text())
            except FileNotFoundError:
                raise MissingEmbeddingError(f"no cached embedding for image {i} (key {key})", index=i) from None
            if doc.get("dim") != self.descriptor.dimension or len(doc["values"]) != doc["dim"]:
                raise DimensionMismatchError(
                    f"cache entry {key} has dim {doc.get('dim')}, expected {self.descriptor.dimension}", index=i)
            out[i] = doc["values"]
        return out

    def store(self, image: np.ndarray, values) -> Path:
        values = [float(x) for x in np.asarray(values).ravel()]
        if len(values) != self.descriptor.dimension:
            raise DimensionMismatchError(f"expected {self.descriptor.dimension} values, got {len(values)}")
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"{image_key(self._check(image))}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps({"dim": len(values), "values": values}))
        os.replace(tmp, path)
        return path


def populate_cache(cache: CacheEmbedder, source: Embedder, images) -> None:
    """Fill ``cache`` with ``source`` embeddings of ``images``."""
    for img, vec in zip(images, source.vectors(images)):
        cache.store(img, vec)


class OnnxEmbedder(Embedder):
    """ONNX model with one image input and one vector output.

    The uint8 raster is scaled by ``scale``, then normalized per channel with
    ``mean``/``std`` and laid out as NCHW or NHWC float32.
    """

    def __init__(self, path, input_size, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0),
                 scale=1.0 / 255.0, layout="NCHW", dimension=None, batch_size=32):
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise ConfigError("the model-file backend needs onnxruntime (pip install onnxruntime)") from exc
        if layout not in ("NCHW", "NHWC"):
            raise ConfigError(f"layout must be NCHW or NHWC, got {layout!r}")
        opts = ort.SessionOptions()
        self.session = ort.InferenceSession(str(path), opts, providers=["CPUExecutionProvider"])
        self.input_name = self.session.get_inputs()[0].name
        self.mean = np.asarray(mean, dtype=np.float32)
        self.std = np.asarray(std, dtype=np.float32)
        self.scale = np.float32(scale)
        self.layout = layout
        self.batch_size = int(batch_size)
        input_size = tuple(int(v) for v in input_size)
        if dimension is None:
            w, h = input_size
            probe = self._run(np.zeros((1, h, w, 3), dtype=np.uint8))
            dimension = probe.shape[1]
        self.descriptor = EmbedderDescriptor("model-file", int(dimension), input_size)

    def _prep(self, batch):
        x = (batch.astype(np.float32) * self.scale - self.mean) / self.std
        if self.layout == "NCHW":
            x = x.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(x)

    def _run(self, batch):
        (y,) = self.session.run(None, {self.input_name: self._prep(batch)})[:1]
        return np.asarray(y, dtype=np.float64).reshape(len(batch), -1)

    def _vectors(self, batch):
        parts = []
        for s in range(0, len(batch), self.batch_size):
            chunk = batch[s:s + self.batch_size]
            try:
                parts.append(self._run(chunk))
            except Exception:  # fixed-batch models: fall back to one image per run
                parts.extend(self._run(chunk[i:i + 1]) for i in range(len(chunk)))
        return np.concatenate(parts)


def load_embedder(spec, input_size=None) -> Embedder:
    """Build a backend from ``"synthetic"``, a config dict, or a path to a JSON config.

    Config keys: ``kind`` (synthetic | precomputed-cache | model-file),
    ``input_size`` [w, h], ``dimension``; cache: ``directory``; model-file:
    ``path``, ``mean``, ``std``, ``scale``, ``layout``.
    """
    base_dir = Path(".")
    if spec is None or spec == "synthetic":
        spec = {"kind": "synthetic"}
    elif isinstance(spec, (str, os.PathLike)):
        path = Path(spec)
        try:
            spec = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"embedder config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed embedder config {path}: {exc}") from exc
        base_dir = path.parent
    kind = spec.get("kind", "synthetic")
    size = tuple(spec.get("input_size") or input_size or (128, 128))
    if kind == "synthetic":
        return SyntheticEmbedder(size, spec.get("dimension", 512))
    if kind == "precomputed-cache":
        if "dimension" not in spec or "directory" not in spec:
            raise ConfigError("precomputed-cache backend needs 'directory' and 'dimension'")
        return CacheEmbedder(base_dir / spec["directory"], spec["dimension"], size)
    if kind == "model-file":
        if "path" not in spec:
            raise ConfigError("model-file backend needs 'path'")
        extra = {k: spec[k] for k in ("mean", "std", "scale", "layout", "dimension", "batch_size") if k in spec}
        return OnnxEmbedder(base_dir / spec["path"], size, **extra)
    raise ConfigError(f"unknown embedder kind {kind!r}")
