"""Latent consistency distillation with LoRA adapters, at toy scale."""

__version__ = "0.1.0"

from .bench import BenchReport, bench_sampler, emit_report  # noqa: E402
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from .codec import Codec, fit_codec  # noqa: E402
from .config import ExperimentConfig  # noqa: E402
from .lcd import (DistillConfig, StyleConfig, TeacherConfig, consistency_loss, distill_run,  # noqa: E402
                  ema_update, lcd_train_step, style_finetune_run, train_teacher)
from .lora import LoraDelta, combine, count_params, lora_forward, lora_init, lora_merge  # noqa: E402
from .metrics import frechet_distance, sliced_wasserstein  # noqa: E402
from .model import Arch, Denoiser, cfg_compose, pf_ode_rhs  # noqa: E402
from .oracle import GaussianOracle, analytic_gaussian_oracle  # noqa: E402
from .schedule import NoiseSchedule, forward_noise, make_schedule  # noqa: E402
from .solvers import SolverSpec, consistency_sample, solve_trajectory  # noqa: E402
from .tensor import Tensor, finite_diff_check, grad_backward  # noqa: E402

__all__ = [
    "Arch", "BenchReport", "Codec", "Denoiser", "DistillConfig", "ExperimentConfig", "GaussianOracle",
    "LoraDelta", "NoiseSchedule", "SolverSpec", "StyleConfig", "TeacherConfig", "Tensor",
    "analytic_gaussian_oracle", "bench_sampler", "cfg_compose", "combine", "consistency_loss",
    "consistency_sample", "count_params", "distill_run", "ema_update", "emit_report", "finite_diff_check",
    "fit_codec", "forward_noise", "frechet_distance", "grad_backward", "load_checkpoint", "lcd_train_step",
    "lora_forward", "lora_init", "lora_merge", "make_schedule", "pf_ode_rhs", "save_checkpoint",
    "sliced_wasserstein", "solve_trajectory", "style_finetune_run", "train_teacher",
]
