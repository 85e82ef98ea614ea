"""Time the compiled and numpy bilinear Jacobian kernels on pOSE operators.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from wnnlm.kernels import BACKENDS, OperatorPattern, bilinear_jacobian
from wnnlm.pose import build_pose_operator
from wnnlm.synth import SynthSpec, make_scene

SIZES = [(10, 20, 4), (20, 50, 4), (40, 100, 6), (80, 200, 8)]


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    names = sorted(BACKENDS)
    print("F     P    p    nnz      " + "  ".join(f"{n:>12}" for n in names) + "   speedup")
    for F, P, p in SIZES:
        scene = make_scene(SynthSpec(F=F, P=P, K=1, missing_fraction=0.2), seed=1)
        op = build_pose_operator(scene.obs, 0.05)
        pat = OperatorPattern(op.A, 3 * F, P)
        B = rng.standard_normal((3 * F, p))
        C = rng.standard_normal((P, p))
        times = {n: best_time(lambda n=n: bilinear_jacobian(pat, B, C, which=n), args.repeat)
                 for n in names}
        ref = bilinear_jacobian(pat, B, C, which="python")
        for n in names:
            out = bilinear_jacobian(pat, B, C, which=n)
            assert np.allclose(out[0], ref[0]) and abs(out[1] - ref[1]).max() < 1e-12
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        cells = "  ".join(f"{1e3 * times[n]:10.3f}ms" for n in names)
        print(f"{F:<5d} {P:<4d} {p:<4d} {op.A.nnz:<8d} {cells}   {speed:6.2f}x")


if __name__ == "__main__":
    main()
