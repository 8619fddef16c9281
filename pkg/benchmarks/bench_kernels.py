"""Time the LSTM recurrence kernels: compiled extension vs numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Shapes cover the d-vector at desk scale (H=64) and at full width (H=768).
Both backends are also checked to agree before timing.
"""

import argparse
import json
import platform
import sys
import timeit

import numpy as np

from enrolltss.autograd import _kernels_py, kernels

SHAPES = [  # (T, B, H)
    (60, 16, 64),
    (98, 1, 64),
    (98, 8, 256),
    (98, 2, 768),
]


def case(t, b, h, dtype, seed=0):
    rng = np.random.default_rng(seed)
    xproj = rng.standard_normal((t, b, 4 * h)).astype(dtype)
    whh = (rng.standard_normal((h, 4 * h)) / np.sqrt(h)).astype(dtype)
    dh = rng.standard_normal((t, b, h)).astype(dtype)
    return xproj, whh, dh


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    ext = kernels.compiled_backend
    backends = {"python": _kernels_py}
    if ext is None:
        print("compiled extension not built; timing the numpy fallback only", file=sys.stderr)
    else:
        backends["cython"] = ext

    rows = []
    print(f"{'T':>4} {'B':>3} {'H':>4}  {'backend':<7} {'forward ms':>11} {'backward ms':>12}")
    for t, b, h in SHAPES:
        xproj, whh, dh = case(t, b, h, args.dtype)
        ref = _kernels_py.lstm_forward(xproj, whh)
        for name, impl in backends.items():
            fwd = impl.lstm_forward(xproj, whh)
            tol = 1e-4 if args.dtype == "float32" else 1e-10
            if not all(np.allclose(a, r, atol=tol) for a, r in zip(fwd, ref)):
                raise SystemExit(f"{name} forward disagrees with the numpy reference at T={t} B={b} H={h}")
            _, cs, acts = fwd
            f_s = best_of(lambda: impl.lstm_forward(xproj, whh), args.repeat)
            b_s = best_of(lambda: impl.lstm_backward(dh, cs, acts, whh), args.repeat)
            rows.append({"T": t, "B": b, "H": h, "backend": name, "forward_s": f_s, "backward_s": b_s})
            print(f"{t:>4} {b:>3} {h:>4}  {name:<7} {f_s * 1e3:>11.3f} {b_s * 1e3:>12.3f}")
        if "cython" in backends:
            py, cy = rows[-2], rows[-1]
            print(f"{'':>14}speedup  {py['forward_s'] / cy['forward_s']:>10.2f}x "
                  f"{py['backward_s'] / cy['backward_s']:>11.2f}x")

    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"platform": platform.platform(), "numpy": np.__version__, "dtype": args.dtype,
                       "results": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
