"""Time the hot kernels under both backends.

Run as ``python benchmarks/bench_kernels.py``.  Each backend is measured in
a fresh interpreter because the choice is fixed at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def measure(repeat):
    from madnet import _kernels
    from madnet import functional as F
    from madnet.fft import fft2, ifft2
    from madnet.losses import LossConfig, total_loss
    from madnet.model import ModelConfig, build_model, make_pyramid
    from madnet.tensor import Tensor

    rng = np.random.default_rng(0)
    img = Tensor(rng.standard_normal((4, 16, 64, 64)).astype(np.float32))
    odd = Tensor(rng.standard_normal((4, 16, 60, 45)).astype(np.float32))
    dw = Tensor(rng.standard_normal((16, 1, 3, 3)).astype(np.float32))
    model = build_model(ModelConfig(), seed=0)
    x = rng.random((1, 3, 64, 64)).astype(np.float32)
    noisy, clean = make_pyramid(Tensor(x), 4), make_pyramid(Tensor(x), 4)

    def step():
        total_loss(model.forward(noisy).restored, clean, LossConfig()).backward()
        model.zero_grad()

    cases = {
        "fft2+ifft2 64x64": lambda: ifft2(fft2(img)),
        "fft2+ifft2 60x45": lambda: ifft2(fft2(odd)),
        "depthwise 3x3 64x64": lambda: F.conv2d(img, dw, None, 1, 1, 16),
        "model fwd+bwd 64x64": step,
    }
    out = {"backend": _kernels.BACKEND}
    for name, fn in cases.items():
        fn()  # warm-up, includes any jit compile
        out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return

    results = []
    for flag in ("0", "1"):
        env = dict(os.environ, MADNET_NUMBA=flag)
        cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat)]
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(res.stdout.strip().splitlines()[-1]))

    names = [k for k in results[0] if k != "backend"]
    print(f"{'kernel':<22}" + "".join(f"{r['backend']:>12}" for r in results) + f"{'speedup':>10}")
    for name in names:
        a, b = results[0][name], results[1][name]
        print(f"{name:<22}{a * 1e3:>10.2f}ms{b * 1e3:>10.2f}ms{a / b:>9.2f}x")


if __name__ == "__main__":
    main()
