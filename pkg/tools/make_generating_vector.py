"""Build the bundled rank-1 lattice generating vector.

Component-by-component search with product weights 1/j^2 and the
Bernoulli-polynomial (Korobov, alpha=1) kernel, averaged over the embedded
point counts 2^8 ... 2^16 so every power-of-two prefix is reasonable.
Coordinates beyond ``--cbc-dims`` are filled with fixed-seed random odd
integers.

    python3 tools/make_generating_vector.py > src/miqmc/data/lattice_vector.txt
"""
import argparse
import sys

import numpy as np


def omega(x):
    return 2.0 * np.pi**2 * (x * x - x + 1.0 / 6.0)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dims", type=int, default=3600)
    ap.add_argument("--cbc-dims", type=int, default=256)
    ap.add_argument("--log2n", type=int, default=16)
    ap.add_argument("--min-log2n", type=int, default=8)
    ap.add_argument("--candidates", type=int, default=2048)
    ap.add_argument("--seed", type=int, default=20170101)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    N = 2**args.log2n
    n = np.arange(N, dtype=np.int64)
    levels = range(args.min_log2n, args.log2n + 1)
    # prod[m] holds the running product over chosen dims for the 2^m rule
    prods = {m: np.ones(2**m) for m in levels}
    z = [1]
    for m in levels:
        nm = np.arange(2**m)
        prods[m] *= 1.0 + omega(nm / 2**m)
    for j in range(2, args.cbc_dims + 1):
        gamma = 1.0 / j**2
        cand = rng.choice(np.arange(1, N // 2, 2), size=args.candidates, replace=False)
        score = np.zeros(len(cand))
        for m in levels:
            Nm = 2**m
            nm = np.arange(Nm, dtype=np.int64)
            base = prods[m]
            e0 = base.mean() - 1.0
            for i0 in range(0, len(cand), 256):
                c = cand[i0:i0 + 256]
                x = (np.outer(c, nm) % Nm) / Nm
                err = (base * (1.0 + gamma * omega(x))).mean(axis=1) - 1.0
                score[i0:i0 + 256] += err / max(e0, 1e-300)
        best = int(cand[np.argmin(score)])
        z.append(best)
        for m in levels:
            Nm = 2**m
            nm = np.arange(Nm, dtype=np.int64)
            prods[m] *= 1.0 + gamma * omega(((best * nm) % Nm) / Nm)
        print(f"dim {j}: z={best}", file=sys.stderr)
    tail = rng.integers(0, 2**19, size=args.dims - len(z)) * 2 + 1
    z.extend(int(t) for t in tail)
    sys.stdout.write("\n".join(str(v) for v in z) + "\n")


if __name__ == "__main__":
    main()
