"""Command-line entry point: ``facexplain explain|concepts|patch-test|sensitivity``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import exports, render
from .concepts import extract_concepts
from .embedding import load_embedder
from .errors import ConfigError, FaceXplainError, InputError
from .evaluation import PatchRect, PipelineConfig, masking_sensitivity, patch_test
from .geometry import REGION_COUNT, build_region_masks, load_landmarks, load_region_specs
from .perturbation import STRATEGIES, Explanation, MaskingStrategy

log = logging.getLogger("facexplain")

EXIT_OK, EXIT_PIPELINE, EXIT_INPUT = 0, 1, 2


@dataclass
class RunConfig:
    embedder: object = "synthetic"     # "synthetic", a backend dict, or a path to backend JSON
    regions: str | None = None         # region-spec JSON; None uses the bundled layout
    strategy: str = "black"
    theta: float = 0.01
    t_max: int = 12
    top_n: int = 8
    out: str = "out"
    seed: int = 0
    h1_update: str = "assign"
    mode: str = "exact"                # concepts: exact | sampled
    budget: int | None = None

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigError(f"theta must be positive, got {self.theta}")
        if not 1 <= self.top_n <= REGION_COUNT:
            raise ConfigError(f"top_n must lie in [1, {REGION_COUNT}], got {self.top_n}")
        if self.t_max < 1:
            raise ConfigError(f"t_max must be at least 1, got {self.t_max}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")

    @classmethod
    def from_sources(cls, config_path: str | None, overrides: dict) -> "RunConfig":
        doc = {}
        base = Path(".")
        if config_path:
            path = Path(config_path)
            try:
                doc = json.loads(path.read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config must be a JSON object")
            base = path.parent
            for key in ("embedder", "regions"):
                if isinstance(doc.get(key), str) and doc[key] != "synthetic":
                    doc[key] = str(base / doc[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc

    def masking(self, kind: str | None = None) -> MaskingStrategy:
        return MaskingStrategy(kind or self.strategy, self.seed)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(load_embedder(self.embedder), self.masking(), self.theta, self.t_max, self.h1_update)

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc.pop("out")
        return doc


# -- input loading -----------------------------------------------------------

def _read_image(path) -> np.ndarray:
    try:
        return exports.read_image(path)
    except FileNotFoundError:
        raise InputError(f"image not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc


def _read_landmarks(path):
    try:
        with open(path, "rb") as fh:
            return load_landmarks(fh)
    except FileNotFoundError:
        raise InputError(f"landmark file not found: {path}") from None
    except InputError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def _load_pair(cfg: RunConfig, args):
    specs = load_region_specs(cfg.regions)
    a, b = _read_image(args.image_a), _read_image(args.image_b)
    lm_a, lm_b = _read_landmarks(args.landmarks_a), _read_landmarks(args.landmarks_b)
    masks_a = build_region_masks(lm_a, specs, a.shape[1], a.shape[0])
    masks_b = build_region_masks(lm_b, specs, b.shape[1], b.shape[0])
    return a, b, masks_a, masks_b


# -- subcommands ---------------------------------------------------------------

def _summary(exp: Explanation, cfg: RunConfig) -> dict:
    def maps(pair):
        return {"A": dict(pair[0].per_region), "B": dict(pair[1].per_region)}
    return {
        "base_score": exp.base_score,
        "config": cfg.to_json(),
        "weights": {"denominator": exp.weights.denominator, "w_hat": dict(exp.weights.w_hat)},
        "S0": maps(exp.s0), "S1": maps(exp.s1), "S_AVG": maps(exp.s_avg),
        "greedy": {"negative": exports.trace_meta(exp.trace_negative),
                   "positive": exports.trace_meta(exp.trace_positive)},
    }


def cmd_explain(cfg: RunConfig, args) -> Path:
    a, b, masks_a, masks_b = _load_pair(cfg, args)
    exp = cfg.pipeline().explain(a, b, masks_a, masks_b)
    out = Path(cfg.out)
    exports.write_contributions(out, exp.table)
    exports.write_trace(out / "trace_negative.jsonl", exp.trace_negative)
    exports.write_trace(out / "trace_positive.jsonl", exp.trace_positive)
    exports.write_json(out / "summary.json", _summary(exp, cfg))
    for name, pair in (("s0", exp.s0), ("s1", exp.s1), ("s_avg", exp.s_avg)):
        for side, img, smap in (("a", a, pair[0]), ("b", b, pair[1])):
            exports.write_png(out / f"{name}_{side}.png", render.overlay(img, smap.per_pixel))
    exports.write_png(out / "panel.png", render.explanation_panel(a, b, exp))
    return out


def _read_manifest(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"corpus manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(doc, list) or not all(isinstance(e, dict) and {"image", "landmarks"} <= set(e) for e in doc):
        raise InputError("manifest must be a JSON list of {image, landmarks} objects")
    return [(path.parent / e["image"], path.parent / e["landmarks"]) for e in doc]


def cmd_concepts(cfg: RunConfig, args) -> Path:
    entries = _read_manifest(args.manifest)
    images = [_read_image(p) for p, _ in entries]
    landmarks = [_read_landmarks(q) for _, q in entries]
    ranking = extract_concepts(images, landmarks, load_embedder(cfg.embedder), cfg.masking(), cfg.mode,
                               cfg.top_n, load_region_specs(cfg.regions), cfg.budget, cfg.seed)
    out = Path(cfg.out)
    exports.write_json(out / "concepts.json", ranking.to_json())
    rows = "".join(f"{i},{n},{ranking.borda_scores[n]!r}\n" for i, n in enumerate(ranking.order, 1))
    exports.atomic_write_text(out / "concepts.csv", "rank,region,borda\n" + rows)
    if ranking.per_image:
        names = list(ranking.per_image[0])
        exports.atomic_write_text(out / "importance.csv", exports.importance_csv(names, ranking.per_image))
    exports.write_png(out / "concepts.png", render.concept_chart(ranking))
    return out


def cmd_patch_test(cfg: RunConfig, args) -> Path:
    a, b, masks_a, masks_b = _load_pair(cfg, args)
    report = patch_test(cfg.pipeline(), a, b, masks_a, masks_b, PatchRect(*args.rect), args.direction)
    out = Path(cfg.out)
    exports.write_json(out / "patch_test.json", report.to_json())
    before = render.overlay(a, report.map_before[0].per_pixel, legend=False)
    after = render.overlay(a, report.map_after[0].per_pixel)
    exports.write_png(out / "patch_test.png", render.side_by_side([before, after]))
    return out


def cmd_sensitivity(cfg: RunConfig, args) -> Path:
    a, b, masks_a, masks_b = _load_pair(cfg, args)
    strategies = [cfg.masking(s) for s in args.strategies]
    report = masking_sensitivity(cfg.pipeline(), a, b, masks_a, masks_b, strategies)
    out = Path(cfg.out)
    exports.write_json(out / "sensitivity.json", report.to_json())
    panels = [render.overlay(a, m[0].per_pixel, legend=(i == len(report.maps) - 1))
              for i, m in enumerate(report.maps)]
    exports.write_png(out / "sensitivity.png", render.side_by_side(panels))
    return out


def cmd_make_fixture(cfg: RunConfig, args) -> Path:
    """Write a synthetic pair (images, landmarks) plus a one-entry manifest."""
    from .synthetic import make_pair, make_patch_fixture

    pair = (make_patch_fixture(cfg.seed, args.patch_region) if args.patch_region
            else make_pair(cfg.seed, genuine=not args.impostor))
    out = Path(cfg.out)
    exports.write_png(out / "a.png", pair.image_a)
    exports.write_png(out / "b.png", pair.image_b)
    exports.write_json(out / "a_landmarks.json", pair.landmarks_a.to_json())
    exports.write_json(out / "b_landmarks.json", pair.landmarks_b.to_json())
    exports.write_json(out / "manifest.json", [{"image": "a.png", "landmarks": "a_landmarks.json"},
                                               {"image": "b.png", "landmarks": "b_landmarks.json"}])
    return out


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its keys")
    common.add_argument("--embedder", help="'synthetic' or a backend config JSON path")
    common.add_argument("--regions", help="region-spec JSON (default: bundled layout)")
    common.add_argument("--strategy", choices=STRATEGIES)
    common.add_argument("--seed", type=int)
    common.add_argument("--theta", type=float)
    common.add_argument("--t-max", dest="t_max", type=int)
    common.add_argument("--top-n", dest="top_n", type=int)
    common.add_argument("--out")
    common.add_argument("--error-json", action="store_true", help="print failures as JSON on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="facexplain", description="Explain face-verification scores.")
    sub = parser.add_subparsers(dest="command", required=True)

    def pair_command(name, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        for arg in ("image_a", "image_b", "landmarks_a", "landmarks_b"):
            p.add_argument(arg)
        return p

    pair_command("explain", "similarity maps and contributions for one pair")
    p = sub.add_parser("concepts", parents=[common], help="global concept ranking over a corpus")
    p.add_argument("manifest")
    p.add_argument("--mode", choices=("exact", "sampled"))
    p.add_argument("--budget", type=int)
    p = pair_command("patch-test", "cut-and-paste faithfulness check")
    p.add_argument("--rect", type=int, nargs=4, metavar=("X", "Y", "W", "H"), required=True)
    p.add_argument("--direction", choices=("B->A", "A->B"), default="B->A")
    p = pair_command("sensitivity", "compare maps across masking strategies")
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES, required=True)
    p = sub.add_parser("make-fixture", parents=[common], help="write a synthetic demo pair")
    p.add_argument("--impostor", action="store_true")
    p.add_argument("--patch-region", help="impostor pair with this region strongly mismatched")
    return parser


COMMANDS = {"explain": cmd_explain, "concepts": cmd_concepts,
            "patch-test": cmd_patch_test, "sensitivity": cmd_sensitivity,
            "make-fixture": cmd_make_fixture}
OVERRIDES = ("embedder", "regions", "strategy", "seed", "theta", "t_max", "top_n", "out", "mode", "budget")


def _fail(exc: Exception, code: int, as_json: bool) -> int:
    if as_json:
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if getattr(exc, "index", None) is not None:
            doc["index"] = exc.index
        print(json.dumps(doc), file=sys.stderr)
    else:
        print(f"facexplain: error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in OVERRIDES}
        cfg = RunConfig.from_sources(args.config, overrides)
        out = COMMANDS[args.command](cfg, args)
    except InputError as exc:
        return _fail(exc, EXIT_INPUT, args.error_json)
    except FaceXplainError as exc:
        return _fail(exc, EXIT_PIPELINE, args.error_json)
    log.info("wrote %s", out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
