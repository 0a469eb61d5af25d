"""Time the circular im2col/col2im kernels and one training step per backend.

    python benchmarks/bench_kernels.py [--repeat N]

The compiled and pure-numpy kernels are imported side by side; the training
step is timed in a subprocess per backend so each one selects its kernels
at import as it would in normal use.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from nlprecode import _kernels_py

try:
    from nlprecode import _kernels as _compiled
except ImportError:
    _compiled = None

STEP_SNIPPET = """
import time, numpy as np
from nlprecode import ccnn, kernels, trainer as tr
from nlprecode.pa import table_poly
H = (np.random.default_rng(0).standard_normal((256, 16, 2, 2)) @ [1, 1j]).astype(np.complex64)
params = ccnn.init_params(ccnn.NetworkConfig(n_filters=64), np.random.default_rng(1), np.float32)
t = tr.Trainer(params, table_poly(-3.0), 0.16, 16.0, 5e-3)
t.step(H)
best = min(timed(t, H) for _ in range({repeat}))
print(kernels.BACKEND, best)
"""


def _timed_step(repeat):
    prelude = "def timed(t, H):\n    import time\n    a = time.perf_counter(); t.step(H); return time.perf_counter() - a\n"
    code = prelude + STEP_SNIPPET.format(repeat=repeat)
    results = {}
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("NLPRECODE_PURE_PYTHON", None)
        if pure:
            env["NLPRECODE_PURE_PYTHON"] = "1"
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        results[backend] = float(seconds)
    return results


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    x = np.random.default_rng(0).standard_normal((256, 16, 2, 64)).astype(np.float32)
    impls = {"python": _kernels_py}
    if _compiled is not None:
        impls["cython"] = _compiled
    print(f"kernels on activations {x.shape}, 9x3 taps (best of {args.repeat}, ms)")
    for name, mod in impls.items():
        cols = mod.im2col(x, 9, 3)
        t_i = min(timeit.repeat(lambda: mod.im2col(x, 9, 3), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: mod.col2im(cols), number=1, repeat=args.repeat))
        print(f"  {name:7s} im2col {1e3 * t_i:8.2f}   col2im {1e3 * t_c:8.2f}")
    print("training step, M=16 K=2 batch 256, 64 filters (best, s)")
    for backend, seconds in _timed_step(args.repeat).items():
        print(f"  {backend:7s} {seconds:.3f}")


if __name__ == "__main__":
    main()
