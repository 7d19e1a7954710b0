"""Command-line front end.

Exit codes: 0 success, 1 gradient check failed, 2 bad input (parse, grid,
config or missing file), 3 an instance could not be encoded (unless
``--skip-degenerate``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import KINDS, AnalysisError, SweepReport, synth_corpus, upper_bound_sweep
from .codec import EncodeDegenerateError, dumps_label_document, encode, label_document
from .config import ConfigError, LvtConfig, preset_for
from .datasets import FORMATS, AnnotationParseError, load_annotations
from .geometry import Polygon
from .loss import GRADIENT_TOLERANCE, LOSS_NAMES, gradient_suite

EXIT_OK, EXIT_LOSS, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2, 3
MANIFEST_VERSION = "1"
FULL_GRID = "n_d=4,8,16,24,32;n_p=2,3,5,7,9"


class InputError(Exception):
    """Anything that maps to exit code 2."""


class DegenerateError(Exception):
    """Maps to exit code 3."""


@dataclass
class Corpus:
    source: str
    images: list[tuple[str, list[Polygon]]]
    seed: int
    ignored: dict[str, int]

    @property
    def polygons(self) -> list[Polygon]:
        return [p for _, polys in self.images for p in polys]


def parse_synthetic(spec: str) -> tuple[str, int, int]:
    """``kind:count[:seed=S]`` -> (kind, count, seed)."""
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise InputError(f"synthetic corpus must look like kind:count[:seed=S], got {spec!r}")
    kind = parts[0]
    if kind not in KINDS:
        raise InputError(f"unknown corpus kind {kind!r}; choose from {', '.join(KINDS)}")
    try:
        count = int(parts[1])
    except ValueError:
        raise InputError(f"corpus count must be an integer, got {parts[1]!r}") from None
    if count < 1:
        raise InputError("corpus count must be at least 1")
    seed = 0
    if len(parts) == 3:
        key, sep, raw = parts[2].partition("=")
        if key != "seed" or not sep:
            raise InputError(f"expected seed=S, got {parts[2]!r}")
        try:
            seed = int(raw)
        except ValueError:
            raise InputError(f"seed must be an integer, got {raw!r}") from None
    return kind, count, seed


def parse_grid(spec: str) -> tuple[list[int], list[int]]:
    """``n_d=4,8;n_p=2,3`` -> ([4, 8], [2, 3]); both keys are required."""
    found: dict[str, list[int]] = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        key, sep, raw = part.partition("=")
        key = key.strip()
        if not sep or key not in ("n_d", "n_p"):
            raise InputError(f"bad grid entry {part.strip()!r}; expected n_d=... or n_p=...")
        if key in found:
            raise InputError(f"grid key {key} given twice")
        try:
            values = [int(v) for v in raw.split(",")]
        except ValueError:
            raise InputError(f"grid values for {key} must be integers, got {raw.strip()!r}") from None
        if len(set(values)) != len(values):
            raise InputError(f"grid values for {key} repeat")
        found[key] = values
    if set(found) != {"n_d", "n_p"}:
        raise InputError("grid needs both n_d=... and n_p=...")
    if min(found["n_p"]) < 2:
        raise InputError("n_p must be at least 2 everywhere in the grid")
    if min(found["n_d"]) < 4:
        raise InputError("n_d must be at least 4 everywhere in the grid")
    return found["n_d"], found["n_p"]


def _load_config(args, source: str | None) -> LvtConfig:
    try:
        cfg = preset_for(source) if source else LvtConfig()
        if args.config:
            cfg = LvtConfig.load(args.config, base=cfg)
        return cfg.with_assignments(args.set or [])
    except ConfigError as exc:
        raise InputError(str(exc)) from None


def _source(args) -> str | None:
    if getattr(args, "synthetic", None):
        return parse_synthetic(args.synthetic)[0]
    return getattr(args, "format", None)


def _load_corpus(args) -> Corpus:
    if args.synthetic and args.inputs:
        raise InputError("give annotation files or --synthetic, not both")
    if args.synthetic:
        kind, count, seed = parse_synthetic(args.synthetic)
        polys = synth_corpus(kind, count, seed)
        return Corpus(f"{kind}:{count}:seed={seed}", [(f"{kind}_{i:05d}", [p]) for i, p in enumerate(polys)], seed, {})
    if not args.inputs:
        raise InputError("no input: give annotation files or --synthetic")
    if not args.format:
        raise InputError("--format is required with annotation files")
    images, ignored, seen = [], {}, set()
    for path in args.inputs:
        image_id = Path(path).stem
        if image_id in seen:
            raise InputError(f"two inputs share the image id {image_id!r}")
        seen.add(image_id)
        try:
            anns = load_annotations(path, args.format)
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
        except AnnotationParseError as exc:
            raise InputError(f"{path}: {exc}") from None
        images.append((image_id, [a.polygon for a in anns if a.care]))
        ignored[image_id] = sum(not a.care for a in anns)
    images.sort(key=lambda item: item[0])
    source = "+".join(sorted(Path(p).name for p in args.inputs))
    return Corpus(source, images, 0, ignored)


def _canvas(args, polygons: Sequence[Polygon]) -> tuple[int, int]:
    if args.canvas:
        try:
            w, h = (int(v) for v in args.canvas.lower().split("x"))
        except ValueError:
            raise InputError(f"canvas must look like WxH, got {args.canvas!r}") from None
        if w < 1 or h < 1:
            raise InputError("canvas must be at least 1x1")
        return w, h
    if not polygons:
        return 1, 1
    hi = np.max([p.vertices.max(axis=0) for p in polygons], axis=0)
    return max(1, math.ceil(hi[0]) + 1), max(1, math.ceil(hi[1]) + 1)


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(command: str, argv: Sequence[str], cfg: LvtConfig | None, inputs, seed) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict() if cfg else None,
        "inputs": [{"path": str(p), "sha256": _digest(p)} for p in inputs],
        "seed": seed,
        "tool_version": __version__,
    }


def _write(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def _replay_argv(argv: Sequence[str]) -> list[str]:
    """Arguments that decide the output bytes: ``--out`` and ``--threads`` dropped."""
    kept, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a in ("--out", "--threads", "--report"):
            skip = True
            continue
        if a.startswith(("--out=", "--threads=", "--report=")):
            continue
        kept.append(a)
    return kept


def cmd_encode(args, argv) -> int:
    corpus = _load_corpus(args)
    cfg = _load_config(args, _source(args))
    docs, problems, skipped = {}, [], {}
    for image_id, polys in corpus.images:
        canvas = _canvas(args, polys)
        labels = []
        skipped[image_id] = 0
        for i, poly in enumerate(polys):
            try:
                labels.append(encode(poly, cfg, canvas))
            except EncodeDegenerateError as exc:
                skipped[image_id] += 1
                problems.append(f"{image_id} instance {i}: {exc}")
        doc = label_document(image_id, labels, cfg.n_d)
        doc["canvas"] = list(canvas)
        doc["ignored"] = corpus.ignored.get(image_id, 0)
        doc["skipped"] = skipped[image_id]
        docs[image_id] = doc
    if problems and not args.skip_degenerate:
        raise DegenerateError("\n".join(problems))
    for image_id, doc in docs.items():
        print(f"{image_id}: {len(doc['instances'])} instances, {doc['ignored']} ignored, {doc['skipped']} skipped")
    if args.out:
        files = {f"{image_id}.json": dumps_label_document(doc) for image_id, doc in docs.items()}
        files["manifest.json"] = _dump(_manifest("encode", _replay_argv(argv), cfg, args.inputs, corpus.seed))
        _write(Path(args.out), files)
    return EXIT_OK


def _sweep_outputs(name: str, report: SweepReport, manifest: dict, per_instance: bool) -> dict[str, str]:
    return {
        f"{name}.json": report.to_json(per_instance),
        f"{name}.txt": report.to_table(),
        "manifest.json": _dump(manifest),
    }


def cmd_roundtrip(args, argv) -> int:
    corpus = _load_corpus(args)
    cfg = _load_config(args, _source(args))
    polys = corpus.polygons
    if not polys:
        raise InputError("input holds no instances to evaluate")
    report = upper_bound_sweep(
        polys, [cfg.n_d], [cfg.n_p], cfg,
        canvas=_canvas(args, polys), corpus_id=corpus.source, seed=corpus.seed, threads=args.threads,
    )
    sys.stdout.write(report.to_table())
    out = args.out or args.report
    if out:
        manifest = _manifest("roundtrip", _replay_argv(argv), cfg, args.inputs, corpus.seed)
        _write(Path(out), _sweep_outputs("roundtrip", report, manifest, per_instance=True))
    failures = report.rows[0].failures
    if failures and not args.skip_degenerate:
        raise DegenerateError(f"{failures} instance(s) could not be encoded")
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    n_d_set, n_p_set = parse_grid(args.grid)
    corpus = _load_corpus(args)
    cfg = _load_config(args, _source(args))
    polys = corpus.polygons
    if not polys:
        raise InputError("input holds no instances to evaluate")
    report = upper_bound_sweep(
        polys, n_d_set, n_p_set, cfg,
        canvas=_canvas(args, polys), corpus_id=corpus.source, seed=corpus.seed, threads=args.threads,
    )
    sys.stdout.write(report.to_table())
    if args.out:
        manifest = _manifest("sweep", _replay_argv(argv), cfg, args.inputs, corpus.seed)
        _write(Path(args.out), _sweep_outputs("sweep", report, manifest, per_instance=False))
    return EXIT_OK


def cmd_losscheck(args, argv) -> int:
    if args.trials < 1:
        raise InputError("--trials must be at least 1")
    worst = gradient_suite(args.trials, args.seed, flip=args.flip_gradient or ())
    rows = [{"loss": name, "max_rel_error": worst[name], "pass": worst[name] <= GRADIENT_TOLERANCE} for name in LOSS_NAMES]
    print(f"{'loss':<18} {'max rel error':>14}  status")
    for r in rows:
        print(f"{r['loss']:<18} {r['max_rel_error']:>14.3e}  {'pass' if r['pass'] else 'FAIL'}")
    if args.out:
        doc = {
            "version": MANIFEST_VERSION,
            "trials": args.trials,
            "seed": args.seed,
            "tolerance": GRADIENT_TOLERANCE,
            "rows": rows,
        }
        _write(
            Path(args.out),
            {"losscheck.json": _dump(doc), "manifest.json": _dump(_manifest("losscheck", _replay_argv(argv), None, [], args.seed))},
        )
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_LOSS


def cmd_replay(args, argv) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        replay = list(manifest["argv"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read manifest {args.manifest}: {exc}") from None
    for entry in manifest.get("inputs", []):
        path = Path(entry["path"])
        if not path.exists() or _digest(path) != entry["sha256"]:
            raise InputError(f"input {path} is missing or changed since the manifest was written")
    if args.out:
        replay += ["--out", args.out]
    return main(replay)


def _add_common(p: argparse.ArgumentParser, inputs: bool = True) -> None:
    if inputs:
        p.add_argument("inputs", nargs="*", help="annotation files, one image per file")
        p.add_argument("--format", choices=sorted(FORMATS), help="annotation format of the input files")
        p.add_argument("--synthetic", "--corpus", dest="synthetic", metavar="KIND:COUNT[:seed=S]",
                       help="use a synthetic corpus instead of files")
        p.add_argument("--canvas", metavar="WxH", help="raster size (default: fits the largest coordinates)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker processes (default: $LEAFVEIN_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leafvein", description="Leaf-vein text contour codec tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="write label documents for annotation files")
    _add_common(p)
    p.add_argument("--skip-degenerate", action="store_true", help="drop instances that cannot be encoded")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("roundtrip", help="encode, decode and score every instance at one setting")
    _add_common(p)
    p.add_argument("--report", help="same as --out")
    p.add_argument("--skip-degenerate", action="store_true", help="do not fail on instances that cannot be encoded")
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("sweep", help="roundtrip IoU over an (n_d, n_p) grid")
    _add_common(p)
    p.add_argument("--grid", default=FULL_GRID, help=f"grid spec (default {FULL_GRID!r})")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("losscheck", help="check loss gradients against finite differences")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--flip-gradient", action="append", choices=LOSS_NAMES, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which already matches the contract
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AnalysisError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateError as exc:
        print(f"error: degenerate instances:\n{exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
