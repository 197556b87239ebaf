"""File writers. Every write goes to a temp file in the target directory, then is renamed."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .perturbation import ContributionTable, GreedyTrace


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, doc) -> Path:
    return atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def write_png(path, image: np.ndarray) -> Path:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def contributions_csv(table: ContributionTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region", "delta", "w_hat", "c"])
    for r in table.rows:
        w.writerow([r.region, repr(r.delta), repr(r.w_hat), repr(r.c)])
    return buf.getvalue()


def write_contributions(out_dir, table: ContributionTable, stem: str = "contributions"):
    out_dir = Path(out_dir)
    return (atomic_write_text(out_dir / f"{stem}.csv", contributions_csv(table)),
            write_json(out_dir / f"{stem}.json", table.to_json()))


def trace_jsonl(trace: GreedyTrace) -> str:
    return "".join(json.dumps(s.to_json()) + "\n" for s in trace.steps)


def trace_meta(trace: GreedyTrace) -> dict:
    return {
        "polarity": trace.polarity, "base_score": trace.base_score, "theta": trace.theta,
        "t_max": trace.t_max, "stop_reason": trace.stop_reason, "stop_t": trace.stop_t,
        "stop_delta": trace.stop_delta, "weight_denominator": trace.weight_denominator,
        "h1": dict(trace.h1),
    }


def write_trace(path, trace: GreedyTrace) -> Path:
    return atomic_write_text(path, trace_jsonl(trace))


def importance_csv(names, per_image: list[dict[str, float]], labels=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", *names])
    for i, imp in enumerate(per_image):
        w.writerow([labels[i] if labels else i, *(repr(imp[n]) for n in names)])
    return buf.getvalue()
