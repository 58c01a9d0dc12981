"""Time the compiled segment kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 50] [--train]

``--train`` also times a short training run under each backend, each in a
fresh interpreter so ``SCENEGEN_PURE_PYTHON`` takes effect at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from scenegen.nn import _pykernels

try:
    from scenegen.nn import _ckernels
except ImportError:
    _ckernels = None

SIZES = [(8, 24), (64, 400), (1024, 8192)]

_TRAIN_SNIPPET = """
import time
from scenegen import model as M
from scenegen.graph import scenario_from_annotations
from scenegen.ingest import SynthConfig, generate_synthetic
from scenegen.nn.kernels import BACKEND
cfg = M.ModelConfig(epochs=3)
graphs = [scenario_from_annotations(f) for f in generate_synthetic(SynthConfig(n_scenarios=64, rng_seed=0))]
samples = [M.make_sample(g, cfg) for g in graphs]
t0 = time.perf_counter()
M.train(cfg, samples)
print(BACKEND, time.perf_counter() - t0)
"""


def _cases(n, m, rng):
    seg = rng.integers(0, n, m).astype(np.int64)
    return {
        "segment_sum": (rng.normal(size=(m, 16)), seg, n),
        "segment_max": (rng.normal(size=m), seg, n),
        "segment_softmax": (rng.normal(size=m), seg, n),
        "segment_softmax_backward": (rng.random(m), rng.normal(size=m), seg, n),
    }


def bench_kernels(repeat: int) -> list[tuple]:
    rng = np.random.default_rng(0)
    rows = []
    for n, m in SIZES:
        for name, args in _cases(n, m, rng).items():
            py = min(timeit.repeat(lambda: getattr(_pykernels, name)(*args), number=10, repeat=repeat)) / 10
            cy = None
            if _ckernels is not None:
                cy = min(timeit.repeat(lambda: getattr(_ckernels, name)(*args), number=10, repeat=repeat)) / 10
            rows.append((name, n, m, py, cy))
    return rows


def bench_training() -> list[str]:
    out = []
    for pure in ("1", "0"):
        env = dict(os.environ, SCENEGEN_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", _TRAIN_SNIPPET], env=env, capture_output=True, text=True,
                             check=True)
        backend, secs = res.stdout.split()
        out.append(f"train 64 scenarios x 3 epochs [{backend}]: {float(secs):.2f}s")
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--train", action="store_true")
    args = ap.parse_args(argv)

    print(f"{'kernel':<26}{'nodes':>7}{'edges':>7}{'numpy us':>11}{'cython us':>11}{'speedup':>9}")
    for name, n, m, py, cy in bench_kernels(args.repeat):
        cy_s = f"{cy * 1e6:11.1f}" if cy is not None else f"{'n/a':>11}"
        sp = f"{py / cy:9.1f}" if cy else f"{'n/a':>9}"
        print(f"{name:<26}{n:>7}{m:>7}{py * 1e6:11.1f}{cy_s}{sp}")
    if args.train:
        for line in bench_training():
            print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
