"""Compare the compiled and numpy kernel backends.

Times each fused kernel on activation-sized buffers, then a full teacher
training step and a full distillation step under both backends.

    python3 benchmarks/bench_kernels.py [--repeat 50] [--json out.json]
"""

import argparse
import json
import timeit

import numpy as np

from lcmlora import kernels
from lcmlora.data import generate
from lcmlora.lcd import DistillConfig, DistillState, LatentDataset, diffusion_loss, lcd_train_step
from lcmlora.model import Arch, Denoiser
from lcmlora.optim import AdamState, adam_step
from lcmlora.schedule import make_schedule
from lcmlora.tensor import Tensor, grad_backward


def kernel_cases(n):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n).astype(np.float32)
    g = rng.standard_normal(n).astype(np.float32)
    p, m, v = x.copy(), np.zeros(n, np.float32), np.zeros(n, np.float32)
    return {
        "silu_forward": lambda: kernels.silu_forward(x),
        "silu_backward": lambda: kernels.silu_backward(x, g),
        "huber_forward": lambda: kernels.huber_forward(x, 0.1),
        "huber_backward": lambda: kernels.huber_backward(x, 0.1, 1.0 / n),
        "adam_update": lambda: kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
        "ema_update": lambda: kernels.ema_update(p, g, 0.95),
    }


def step_cases():
    schedule = make_schedule()
    arch = Arch()
    x, labels = generate("mixture2d", 2048, 8, 0)["train"]
    data = LatentDataset(x, labels)
    teacher = Denoiser.create(arch, seed=0)
    params = {k: Tensor(v.copy(), requires_grad=True) for k, v in teacher.params.items()}
    adam = AdamState.for_params(params)
    rng = np.random.default_rng(0)

    def teacher_step():
        z0, lab = data.batch(rng, 256)
        loss = diffusion_loss(arch, params, schedule, z0, lab, rng, 0.1)
        grad_backward(loss, params)
        adam_step(params, adam)

    cfg = DistillConfig()
    state = DistillState.start(teacher, cfg, 0)

    def distill_step():
        lcd_train_step(teacher, schedule, state, data.batch(rng, cfg.batch), cfg, rng)

    return {"teacher_step": teacher_step, "distill_step": distill_step}


def best_of(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--size", type=int, default=256 * 128)
    ap.add_argument("--json")
    args = ap.parse_args()
    backends = sorted(kernels.available_backends())
    results = {}
    for name in backends:
        kernels.set_backend(name)
        res = {k: best_of(f, args.repeat) for k, f in kernel_cases(args.size).items()}
        res.update({k: best_of(f, max(3, args.repeat // 5)) for k, f in step_cases().items()})
        results[name] = res
    kernels.set_backend(backends[0] if "cython" not in backends else "cython")

    cols = list(results[backends[0]])
    print(f"{'case':<16}" + "".join(f"{b + ' (us)':>16}" for b in backends)
          + ("   speedup" if len(backends) == 2 else ""))
    for c in cols:
        row = f"{c:<16}" + "".join(f"{results[b][c] * 1e6:>16.1f}" for b in backends)
        if len(backends) == 2:
            row += f"   {results['python'][c] / results['cython'][c]:7.2f}x"
        print(row)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
