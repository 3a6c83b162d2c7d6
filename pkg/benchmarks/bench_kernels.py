"""Compare the compiled and pure-Python kernel backends.

Times a full forward/backward pass (``AnomalyModel.loss_and_grad``) over a
batch for each variant, then checks the two backends agree. Usage::

    python benchmarks/bench_kernels.py [--batch 32] [--length 40] [--p 8] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from irregad import kernels
from irregad.data import SynthConfig, synth_generate
from irregad.model import AnomalyModel
from irregad.recurrent_encoder import VARIANTS
from irregad.trainer import Hyperparameters, build_model


def make_model(variant: str, batch, p: int) -> AnomalyModel:
    hp = Hyperparameters(variant=variant, p=p, tau=10, seed=0)
    return build_model(hp, batch[0].dim, batch, np.random.default_rng(0))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--p", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    cfg = SynthConfig(n_sequences=args.batch, length_min=args.length, length_max=args.length)
    batch = list(synth_generate(cfg, np.random.default_rng(0)))
    backends = kernels.available()
    print(f"batch={args.batch} length={args.length} p={args.p} backends={backends}")
    print(f"{'variant':8s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}{'max |diff|':>12s}")
    for variant in VARIANTS:
        model = make_model(variant, batch, args.p)
        times, grads = {}, {}
        for name in backends:
            kernels.use_backend(name)
            grads[name] = model.loss_and_grad(batch)[1]
            times[name] = min(timeit.repeat(lambda: model.loss_and_grad(batch), number=1, repeat=args.repeat))
        row = f"{variant:8s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) == 2:
            diff = max(float(np.max(np.abs(grads["compiled"][k] - grads["python"][k]))) for k in grads["python"])
            row += f"{times['python'] / times['compiled']:9.1f}x{diff:12.1e}"
        print(row)


if __name__ == "__main__":
    main()
