"""Time the compiled and numpy ray-casting kernels on a chest phantom.

    python3 benchmarks/bench_projector.py --dims 128 --detector 256 --repeat 3

Both kernels trace the same detector rays. The script reports the best wall
time per kernel and the largest path-length difference between them.
"""

import argparse
import time

import numpy as np

from cxrduality import _core
from cxrduality.materials import decompose
from cxrduality.projector import DetectorGeometry, detector_rays, trace_labels
from cxrduality.volume import Lesion, default_chest_spec, generate_phantom


def best_time(fn, repeat):
    times, result = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dims", type=int, default=128, help="voxels per side")
    p.add_argument("--detector", type=int, default=256, help="pixels per side")
    p.add_argument("--mode", choices=("cone", "parallel"), default="cone")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()

    spec = default_chest_spec((args.dims,) * 3, (1.0,) * 3, [Lesion((-24.0, 0.0, 5.0), 8.0)], with_bed=True)
    volume, _, _ = generate_phantom(spec, 0)
    labels = decompose(volume).labels()
    det = DetectorGeometry(args.detector, args.detector, 160.0 / args.detector, mode=args.mode)
    starts, dirs, tmax = detector_rays(volume, det)
    n = len(starts)

    print(f"volume {args.dims}^3, detector {args.detector}^2 ({n} rays), {args.mode}, threads={args.threads}")
    print(f"default backend at import: {_core.BACKEND}")
    results = {}
    for name, kernel in sorted(_core.KERNELS.items()):
        secs, out = best_time(
            lambda: trace_labels(labels, 3, volume, starts, dirs, tmax, threads=args.threads, kernel=kernel),
            args.repeat,
        )
        results[name] = (secs, out)
        print(f"  {name:7s} {secs:8.3f} s  {n / secs:12.0f} rays/s")

    if len(results) == 2:
        (tc, oc), (tp, op) = results["cython"], results["python"]
        print(f"  speed-up cython/python: {tp / tc:.1f}x")
        print(f"  max |difference|: {np.max(np.abs(oc - op)):.3e} mm")
    else:
        print("  compiled kernel not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
