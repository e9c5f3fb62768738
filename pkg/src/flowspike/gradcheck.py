"""Finite-difference verification of the hand-rolled BPTT gradients.

Two checks, mirroring what can be checked exactly:

* smooth mode: the network is differentiable end to end, so every analytic
  gradient coordinate must match central finite differences of the loss.
* spiking mode, readout path: hidden spikes do not move when readout
  parameters are perturbed, so the readout weight and leak gradients are
  exact there too (the hidden-side surrogate is unverifiable by FD since
  the forward map is piecewise constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import snn
from .snn import Gradients, LifParams, ReadoutParams, SnnModel


@dataclass
class Instance:
    model: SnnModel
    x: np.ndarray  # (T, n_inputs) drive
    label: int
    lambda_reg: float


def random_instance(
    seed: int,
    *,
    steps: int = 10,
    n_inputs: int = 5,
    n_hidden: int = 4,
    n_outputs: int = 3,
    mode: str = snn.MODE_SMOOTH,
    slope: float = 5.0,
    lambda_reg: float = 0.01,
) -> Instance:
    """A small dense problem with healthy drive so potentials straddle the
    threshold and no gradient coordinate is structurally zero."""
    rng = np.random.default_rng(seed)
    w_h = rng.normal(0.0, 1.0 / np.sqrt(n_inputs), (n_hidden, n_inputs))
    w_r = rng.normal(0.0, 1.0 / np.sqrt(n_hidden), (n_outputs, n_hidden))
    model = SnnModel(
        hidden=LifParams(w_h, np.array(rng.normal(0.5, 0.8))),
        readout=ReadoutParams(w_r, np.array(rng.normal(0.5, 0.8))),
        surrogate_slope=slope,
        mode=mode,
    )
    x = rng.uniform(0.3, 3.0, (steps, n_inputs))
    label = int(rng.integers(n_outputs))
    return Instance(model, x, label, lambda_reg)


def _loss_of(instance: Instance) -> float:
    trace = snn.forward(instance.model, instance.x.T)
    return snn.loss(trace, instance.label, instance.lambda_reg)


def _fd_gradient(instance: Instance, array: np.ndarray, eps: float) -> np.ndarray:
    """Central finite differences of the loss along every coordinate of
    `array` (one of the model's parameter arrays, perturbed in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = _loss_of(instance)
        flat[i] = orig - eps
        down = _loss_of(instance)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case coordinatewise |a - n| / max(|a|, |n|); coordinates where
    both sides are essentially zero count as exact."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    tiny = scale < 1e-12
    rel = np.where(tiny, 0.0, err / np.where(tiny, 1.0, scale))
    return float(rel.max()) if rel.size else 0.0


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _analytic(instance: Instance) -> Gradients:
    return snn.backward(
        instance.model, instance.x.T, instance.label, instance.lambda_reg
    )


def check_smooth(seed: int, eps: float = 1e-4, tolerance: float = 1e-4) -> CheckResult:
    """All four gradients against FD in smooth mode."""
    inst = random_instance(seed, mode=snn.MODE_SMOOTH)
    grads = _analytic(inst)
    params = snn.model_params(inst.model)
    worst = 0.0
    for name in snn.PARAM_FIELDS:
        numeric = _fd_gradient(inst, params[name], eps)
        worst = max(worst, relative_error(snn.grad_dict(grads)[name], numeric))
    return CheckResult(f"smooth-all-params[seed={seed}]", worst, tolerance)


def check_spiking_readout(
    seed: int, eps: float = 1e-4, tolerance: float = 1e-6
) -> CheckResult:
    """Readout weight and leak gradients against FD in spiking mode."""
    inst = random_instance(seed, mode=snn.MODE_SPIKING)
    grads = _analytic(inst)
    params = snn.model_params(inst.model)
    worst = 0.0
    for name in ("readout_w", "readout_beta_raw"):
        numeric = _fd_gradient(inst, params[name], eps)
        worst = max(worst, relative_error(snn.grad_dict(grads)[name], numeric))
    return CheckResult(f"spiking-readout[seed={seed}]", worst, tolerance)


def run_gradcheck(n_instances: int = 20, base_seed: int = 1000) -> list[CheckResult]:
    """The full pass/fail battery used by the CLI and the acceptance suite."""
    results = []
    for i in range(n_instances):
        results.append(check_smooth(base_seed + i))
        results.append(check_spiking_readout(base_seed + i))
    return results
