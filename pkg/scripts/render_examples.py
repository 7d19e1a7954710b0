"""Draw a few encoded instances per corpus kind as layered SVG files."""

import argparse
from pathlib import Path

from leafvein.analysis import CANVAS, KINDS, render_instance, synth_corpus
from leafvein.codec import CodecError, decode, encode
from leafvein.config import preset_for


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--per-kind", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/svg"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for kind in KINDS:
        cfg = preset_for(kind)
        for i, poly in enumerate(synth_corpus(kind, args.per_kind, args.seed)):
            try:
                label = encode(poly, cfg, CANVAS)
            except CodecError as exc:
                print(f"{kind} {i}: skipped ({exc})")
                continue
            path = args.out / f"{kind}_{i:02d}.svg"
            render_instance(poly, label, decode(label.kernel, label.lengths, cfg), path)
            print(path)


if __name__ == "__main__":
    main()
