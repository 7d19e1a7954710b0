"""Mean roundtrip IoU over the full (n_d, n_p) grid for every synthetic corpus kind.

Writes one JSON report and one text table per kind; ``--kinds`` restricts
the run. Reports depend only on ``--count`` and ``--seed``.
"""

import argparse
from pathlib import Path

from leafvein.analysis import KINDS, synth_corpus, upper_bound_sweep

N_D = (4, 8, 16, 24, 32)
N_P = (2, 3, 5, 7, 9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kinds", nargs="+", choices=KINDS, default=list(KINDS))
    ap.add_argument("--count", type=int, default=150)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("runs/grid"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for kind in args.kinds:
        report = upper_bound_sweep(
            synth_corpus(kind, args.count, args.seed), N_D, N_P, corpus_id=kind, seed=args.seed, threads=args.threads
        )
        table = report.to_table()
        print(table)
        (args.out / f"{kind}.txt").write_text(table)
        (args.out / f"{kind}.json").write_text(report.to_json())


if __name__ == "__main__":
    main()
