"""Roundtrip IoU of synthetic corpora on the grid spanned by the two config presets.

    python scripts/upper_bound.py --count 300 --seed 0 --out runs/upper_bound
"""

import argparse
import time
from pathlib import Path

from leafvein.analysis import KINDS, synth_corpus, upper_bound_sweep
from leafvein.config import PRESETS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=300, help="shapes per corpus kind")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", type=Path, default=None, help="directory for JSON reports")
    args = ap.parse_args()

    for kind in KINDS:
        corpus = synth_corpus(kind, args.count, args.seed)
        settings = sorted(set(PRESETS.values()))
        t0 = time.perf_counter()
        report = upper_bound_sweep(
            corpus,
            sorted({d for d, _ in settings}),
            sorted({p for _, p in settings}),
            corpus_id=kind,
            seed=args.seed,
            threads=args.threads,
        )
        print(report.to_table(), end="")
        print(f"# {time.perf_counter() - t0:.1f} s\n")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"{kind}.json").write_text(report.to_json(per_instance=True))


if __name__ == "__main__":
    main()
