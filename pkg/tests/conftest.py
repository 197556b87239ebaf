from __future__ import annotations

import functools

import numpy as np
import pytest

from facexplain.embedding import Embedder, EmbedderDescriptor, SyntheticEmbedder
from facexplain.synthetic import make_face, make_pair

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def embedder():
    return SyntheticEmbedder()


@functools.lru_cache(maxsize=None)
def cached_pair(seed: int, genuine: bool):
    return make_pair(seed, genuine=genuine)


@functools.lru_cache(maxsize=None)
def cached_face(seed: int, only: str | None = None):
    return make_face(seed, only=only)


class ScriptedEmbedder(Embedder):
    """Stub backend whose pair score is a chosen function of the occluded region set.

    Images are produced by ``scripted_pair``: channel 0 holds ``10 + region index``,
    channel 2 marks image B. A embeds to e0; B embeds to cos(s) e0 + sin(s) e1 with
    s = score(frozenset of occluded region indices).
    """

    def __init__(self, score, n_regions=13, size=(128, 128)):
        self.score = score
        self.n_regions = n_regions
        self.descriptor = EmbedderDescriptor("synthetic", 4, size)

    def _vectors(self, batch):
        out = np.zeros((len(batch), 4))
        for i, img in enumerate(batch):
            if not (img[..., 2] == 200).any():
                out[i, 0] = 1.0
                continue
            present = set(np.unique(img[..., 0]).tolist()) - {0}
            gone = frozenset(k for k in range(self.n_regions) if 10 + k not in present)
            s = self.score(gone)
            out[i, 0], out[i, 1] = s, np.sqrt(1.0 - s * s)
        return out


def scripted_pair(masks):
    a = np.zeros(masks.shape + (3,), dtype=np.uint8)
    a[..., 0] = 10 + masks.labels
    b = a.copy()
    b[..., 2] = 200
    return a, b


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
