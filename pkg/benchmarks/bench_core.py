"""Time the compiled core against the pure-Python fallback on the default experiment.

    python benchmarks/bench_core.py [--repeat N]
"""

import argparse
import timeit

from ccnn import _backend
from ccnn.config import default_config
from ccnn.training import Model, grad_unrolled_reverse


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    cfg = default_config()
    scene = cfg.scenes()[0]
    params = cfg.initial_kernel()
    print(f"grid n={cfg.scene.n}, kernel B={cfg.kernel.B} M={cfg.kernel.M}, "
          f"T_w={cfg.kernel.T_w}, dt={cfg.scene.dt}")
    print(f"{'backend':<8} {'forward [ms]':>13} {'fwd+rev [ms]':>13}")
    timings = {}
    for name in ("cython", "python"):
        try:
            _backend.get(name)
        except ImportError:
            print(f"{name:<8} unavailable")
            continue
        model = Model(cfg.solver_config(), cfg.model().f, cfg.model().drive, backend=name)
        fwd = min(timeit.repeat(lambda: model.forward(params, scene), number=1, repeat=args.repeat))
        rev = min(timeit.repeat(lambda: grad_unrolled_reverse(params, scene, model), number=1,
                                repeat=args.repeat))
        timings[name] = (fwd, rev)
        print(f"{name:<8} {fwd * 1e3:13.2f} {rev * 1e3:13.2f}")
    if len(timings) == 2:
        (cf, cr), (pf, pr) = timings["cython"], timings["python"]
        print(f"speed-up: forward {pf / cf:.1f}x, forward+reverse {pr / cr:.1f}x")


if __name__ == "__main__":
    main()
