"""Compiled-vs-numpy timing for the mixture epsilon kernel.

Runs the same workloads through the compiled extension (when installed) and
the numpy reference, checks they agree, and reports per-call times plus the
speedup.  A second section times a full deterministic sampling run under the
closed-form backend on both paths.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from stagediff import HAVE_EXT, build_schedule, mixture_eps, mixture_eps_numpy
from stagediff.denoiser import AnalyticBackend, GaussianMixtureWorld, LatentCode
from stagediff.sampler import sample


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernel(repeats: int) -> None:
    print(f"compiled extension loaded: {HAVE_EXT}")
    print(f"{'B':>6} {'K':>4} {'D':>6} {'numpy':>10} {'dispatch':>10} {'speedup':>8}  parity")
    rng = np.random.default_rng(0)
    for B, K, D in [(1, 2, 4), (16, 4, 64), (256, 8, 256), (1024, 16, 1024)]:
        z = rng.standard_normal((B, D))
        means = rng.standard_normal((K, D))
        log_w = np.log(np.full(K, 1.0 / K))
        args = (z, means, log_w, 0.25, 0.37)
        diff = float(np.abs(mixture_eps(*args) - mixture_eps_numpy(*args)).max())
        t_np = _best_of(lambda: mixture_eps_numpy(*args), repeats)
        t_disp = _best_of(lambda: mixture_eps(*args), repeats)
        print(
            f"{B:>6} {K:>4} {D:>6} {t_np * 1e3:>9.3f}m {t_disp * 1e3:>9.3f}m "
            f"{t_np / t_disp:>7.2f}x  {diff:.2e}"
        )


def bench_sampling(repeats: int) -> None:
    T = 200
    world = GaussianMixtureWorld(
        means=np.random.default_rng(1).standard_normal((8, 64)),
        weights=np.full(8, 0.125),
        variance=0.25,
        shape=(1, 8, 8),
    )
    sched = build_schedule(T, "linear-beta", eta=0.0)
    z_T = LatentCode(np.random.default_rng(2).standard_normal((1, 8, 8)), T)

    class _NumpyBackend:
        def predict(self, latent, t, cond=None):
            flat = latent.data.reshape(1, world.D)
            out = mixture_eps_numpy(flat, world.means, np.log(world.weights), world.variance, sched.alpha(t))
            return out.reshape(world.shape)

    run_disp = lambda: sample(AnalyticBackend(world, sched), sched, lambda t: None, z_T, 0, t_boost=0)
    run_np = lambda: sample(_NumpyBackend(), sched, lambda t: None, z_T, 0, t_boost=0)
    gap = float(np.abs(run_disp().final.data - run_np().final.data).max())
    t_disp = _best_of(run_disp, repeats)
    t_np = _best_of(run_np, repeats)
    print(f"\n{T}-step closed-form sampling run (K=8, D=64):")
    print(f"  numpy    {t_np * 1e3:8.1f} ms")
    print(f"  dispatch {t_disp * 1e3:8.1f} ms  ({t_np / t_disp:.2f}x, final-latent gap {gap:.2e})")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5, help="best-of repeats per timing")
    args = ap.parse_args()
    bench_kernel(args.repeats)
    bench_sampling(args.repeats)


if __name__ == "__main__":
    main()
