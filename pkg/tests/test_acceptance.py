"""Acceptance criteria 1-11, each reporting its measured values."""

import os
import time

import numpy as np
import pytest

from lcmlora.checkpoint import decode_tensors, encode_tensors, load_checkpoint, save_checkpoint
from lcmlora.cli import run_command
from lcmlora.errors import CheckpointError
from lcmlora.lcd import ema_update
from lcmlora.lora import LoraDelta, capped_ranks, lora_forward, lora_init, lora_merge
from lcmlora.metrics import frechet_distance
from lcmlora.model import Arch, Denoiser, cfg_compose, network
from lcmlora.oracle import GaussianOracle
from lcmlora.schedule import make_schedule
from lcmlora.solvers import SolverSpec, solve_trajectory
from lcmlora.tensor import Tensor, finite_diff_errors, mse_loss

from conftest import TINY_CONFIG, comparable_outputs, read_json


def random_delta(base, rank, seed, tag="other"):
    d = lora_init(base, capped_ranks(base, rank), seed, tag=tag)
    r = np.random.default_rng(seed + 99)
    return LoraDelta({k: ((0.1 * r.standard_normal(b.shape)).astype(np.float32), a)
                      for k, (b, a) in d.factors.items()}, 1.0, tag)


def test_criterion_01_schedule_soundness(criterion):
    start = time.perf_counter()
    worst, monotone = 0.0, True
    for kind in ("cosine", "linear"):
        sch = make_schedule(kind, N=64)
        a, s = sch.alpha(sch.grid), sch.sigma(sch.grid)
        worst = max(worst, float(np.max(np.abs(a**2 + s**2 - 1))))
        monotone &= bool(np.all(np.diff(sch.grid) > 0) and np.all(np.diff(a) < 0) and np.all(np.diff(s) > 0))
    dt = time.perf_counter() - start
    criterion(1, "schedule soundness", worst <= 1e-6 and monotone and dt < 1,
              f"max VP error {worst:.2e}, monotone {monotone}, {dt:.3f}s")


def test_criterion_02_autodiff(criterion):
    start = time.perf_counter()
    medians = []
    for seed in range(10):
        r = np.random.default_rng(seed)
        arch = Arch(hidden=int(r.integers(4, 9)), depth=int(r.integers(1, 3)), time_features=4, omega_features=4)
        model = Denoiser.create(arch, seed=seed)
        params = {k: Tensor(v + 0.3 * r.standard_normal(v.shape)) for k, v in model.params.items()}
        z, t = r.standard_normal((5, 2)), r.uniform(0.01, 1.0, 5)
        labels, omega, y = r.integers(0, 9, 5), r.uniform(0, 8, 5), Tensor(r.standard_normal((5, 2)))
        errs = finite_diff_errors(lambda ps: mse_loss(network(arch, ps, Tensor(z), t, labels, omega), y),
                                  params, h=1e-5)
        medians.append(float(np.median(errs)))
    dt = time.perf_counter() - start
    worst = max(medians)
    criterion(2, "autodiff correctness", worst <= 1e-4 and dt < 5,
              f"worst per-network median rel. error {worst:.2e} over 10 networks, {dt:.2f}s")


def test_criterion_03_merge_adapter_equivalence(criterion):
    start = time.perf_counter()
    r = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        d, k = (int(v) for v in r.integers(1, 40, 2))
        rank = int(r.integers(1, min(d, k) + 1))
        w0, b, a = r.standard_normal((d, k)), r.standard_normal((d, rank)), r.standard_normal((rank, k))
        lam = float(r.uniform(-2, 2))
        x = r.standard_normal((8, k))
        fact = lora_forward(w0, b, a, x, lam)
        dense = x @ (w0 + lam * b @ a).T
        worst = max(worst, float(np.abs(fact - dense).max() / max(np.abs(dense).max(), 1e-12)))
    # the same property at model level, all adapted layers at once
    base = Denoiser.create(Arch(hidden=24, depth=2), seed=0)
    sty, acc = random_delta(base, 4, 1, "style"), random_delta(base, 8, 2, "acceleration")
    z = r.standard_normal((32, 2)).astype(np.float32)
    labels = np.arange(32) % 9
    merged = lora_merge(base, [(sty, 0.8), (acc, 1.0)]).eps(z, 0.4, labels, 3.0)
    path = base.eps(z, 0.4, labels, 3.0, adapters=[sty.as_adapter(0.8), acc.as_adapter(1.0)])
    model_err = float(np.abs(merged - path).max() / np.abs(path).max())
    dt = time.perf_counter() - start
    criterion(3, "merge/adapter equivalence", worst <= 1e-5 and model_err <= 1e-5 and dt < 5,
              f"100 triples worst rel. {worst:.2e}, model-level rel. {model_err:.2e}, {dt:.2f}s")


def test_criterion_04_task_arithmetic(criterion):
    start = time.perf_counter()
    base = Denoiser.create(Arch(hidden=24, depth=2), seed=0)
    ta, tb, tc = (random_delta(base, 4, s) for s in (1, 2, 3))
    back = lora_merge(lora_merge(base, [(ta, 1.0)]), [(ta, -1.0)])
    cancel = max(float(np.abs(back.params[k] - v).max()) for k, v in base.params.items())
    p1 = lora_merge(base, [(ta, 0.8), (tb, 1.0), (tc, -0.3)])
    p2 = lora_merge(base, [(tc, -0.3), (ta, 0.8), (tb, 1.0)])
    perm = max(float(np.abs(p1.params[k] - p2.params[k]).max()) for k in base.params)
    joint = lora_merge(base, [(ta, 1), (tb, 1), (tc, -1)])
    seq = lora_merge(lora_merge(lora_merge(base, [ta]), [tb]), [(tc, -1)])
    abc = max(float(np.abs(joint.params[k] - seq.params[k]).max()) for k in base.params)
    dt = time.perf_counter() - start
    criterion(4, "task arithmetic", max(cancel, perm, abc) <= 1e-7 and dt < 5,
              f"cancel {cancel:.1e}, permutation {perm:.1e}, A+B-C {abc:.1e}, {dt:.2f}s")


def test_criterion_05_solver_orders(criterion):
    start = time.perf_counter()
    sch = make_schedule()
    orc = GaussianOracle([0.5, -0.3], np.diag([1.0, 0.25]), sch)
    z_T = np.random.default_rng(0).standard_normal((256, 2))
    exact = orc.closed_form_flow(z_T, sch.T, sch.eps_t)

    def err(kind, steps):
        got = solve_trajectory(orc.eps_star, SolverSpec(kind, steps), z_T, None, sch).endpoint
        return float(np.linalg.norm(got - exact) / np.linalg.norm(exact))

    steps = [8, 16, 32, 64]
    orders, at256 = {}, {}
    for kind in ("ddim", "dpm1", "dpm2", "dpmpp2"):
        orders[kind] = float(-np.polyfit(np.log(steps), np.log([err(kind, n) for n in steps]), 1)[0])
        at256[kind] = err(kind, 256)
    dt = time.perf_counter() - start
    ok_orders = orders["ddim"] >= 0.9 and orders["dpm1"] >= 0.9 and orders["dpm2"] >= 1.7
    ok_256 = all(v <= 1e-3 for v in at256.values())
    detail = ", ".join(f"{k}: order {orders[k]:.2f}, err@256 {at256[k]:.2e}" for k in orders)
    criterion(5, "solver orders", ok_orders and ok_256 and dt < 30, f"{detail}, {dt:.1f}s")


def test_criterion_06_guidance_identities(criterion):
    r = np.random.default_rng(6)
    c, u = r.standard_normal((64, 2)).astype(np.float32), r.standard_normal((64, 2)).astype(np.float32)
    zero = np.array_equal(cfg_compose(c, u, 0.0), c)
    invariant = all(np.array_equal(cfg_compose(c, c, w), c) for w in (0.5, 1.0, 8.0, 100.0))
    criterion(6, "guidance identities", zero and invariant, f"omega=0 bit-equal {zero}, equal branches {invariant}")


def test_criterion_07_ema_identities(criterion):
    r = np.random.default_rng(7)
    theta = {"w": r.standard_normal((5, 5)).astype(np.float32)}
    copy_ok = np.array_equal(ema_update({"w": np.zeros((5, 5), np.float32)}, theta, 0.0)["w"], theta["w"])
    scalar = float(ema_update({"s": np.ones(1)}, {"s": np.zeros(1)}, 0.95)["s"][0])
    criterion(7, "EMA identities", copy_ok and abs(scalar - 0.95) <= 1e-9,
              f"mu=0 copies {copy_ok}, scalar case {scalar!r}")


def test_criterion_08_frechet(criterion):
    start = time.perf_counter()
    r = np.random.default_rng(8)
    n, m = 50_000, np.array([1.0, -0.5, 0.25])
    shift = frechet_distance(r.standard_normal((n, 3)), r.standard_normal((n, 3)) + m)
    shift_err = abs(shift - np.linalg.norm(m)) / np.linalg.norm(m)
    s1, s2, d = 0.5, 1.5, 3
    var = frechet_distance(s1 * r.standard_normal((n, d)), s2 * r.standard_normal((n, d))) ** 2
    var_err = abs(var - d * (s1 - s2) ** 2) / (d * (s1 - s2) ** 2)
    a = r.standard_normal((5000, 3))
    self_fd = frechet_distance(a, a)
    dt = time.perf_counter() - start
    criterion(8, "Frechet metric", shift_err <= 0.02 and var_err <= 0.02 and self_fd <= 1e-6 and dt < 10,
              f"mean-shift rel. err {shift_err:.2%}, variance rel. err {var_err:.2%}, FD(a,a) {self_fd:.1e}")


def test_criterion_09_end_to_end_distillation(criterion, default_pipeline):
    rows = {(r["solver"], r["steps"]): r for r in read_json(default_pipeline, "bench", "report.json")["reports"][0]["rows"]}
    cons, ddim = rows[("consistency", 4)], rows[("ddim", 32)]
    fd_ratio = cons["fd"] / ddim["fd"]
    speed = ddim["wall_time"] / cons["wall_time"]
    criterion(9, "end-to-end distillation", fd_ratio <= 1.5 and speed >= 4 * 0.8,
              f"consistency@4 FD {cons['fd']:.4f} vs ddim@32 FD {ddim['fd']:.4f} (ratio {fd_ratio:.2f}); "
              f"time {cons['wall_time']:.3f}s vs {ddim['wall_time']:.3f}s (speed-up {speed:.1f}x)")


def test_criterion_10_combination(criterion, default_pipeline):
    def fd(name):
        return read_json(default_pipeline, "bench", f"style_{name}.json")["reports"][0]["rows"][0]["fd"]

    teacher, combined, student = fd("style_teacher"), fd("combined"), fd("base_student")
    criterion(10, "style + acceleration combination", combined <= 2 * teacher and combined < student,
              f"combined@4 FD {combined:.4f}, style teacher ddim@32 FD {teacher:.4f}, base student FD {student:.4f}")


def test_criterion_11_persistence(criterion, tmp_path, tiny_config):
    r = np.random.default_rng(11)
    params = {f"t{i}": r.standard_normal(tuple(r.integers(1, 6, i % 3 + 1))).astype(np.float32) for i in range(12)}
    save_checkpoint(tmp_path / "c.lclb", params, metadata={"note": "x"})
    back, _, meta = load_checkpoint(tmp_path / "c.lclb")
    exact = all(back[k].tobytes() == v.tobytes() and back[k].shape == v.shape for k, v in params.items())
    buf = encode_tensors(params, {"note": "x"})
    corrupt_ok = True
    for blob in [buf[:n] for n in range(0, len(buf), 7)] + [b"NOPE" + buf[4:], buf + b"\0"]:
        try:
            decode_tensors(blob)
            corrupt_ok = False
        except CheckpointError:
            pass
        except Exception:  # anything else is a crash
            corrupt_ok = False
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    codes = (run_command(["pipeline", "--config", tiny_config, "--out", a]),
             run_command(["pipeline", "--config", tiny_config, "--out", b]))
    ca, cb = comparable_outputs(a), comparable_outputs(b)
    differing = sorted(k for k in set(ca) | set(cb) if ca.get(k) != cb.get(k))
    criterion(11, "persistence", exact and corrupt_ok and codes == (0, 0) and not differing,
              f"bit-exact {exact}, corruptions rejected {corrupt_ok}, reproducible files "
              f"{len(ca) - len(differing)}/{len(ca)}" + (f" (differ: {differing})" if differing else ""))


def test_default_pipeline_exit_code(default_pipeline):
    assert os.path.exists(os.path.join(default_pipeline, "summary.md"))
