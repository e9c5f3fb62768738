"""Two-layer leaky integrate-and-fire network with hand-rolled
backpropagation through time.

Dynamics (discrete time, per layer):

    V[n+1]     = beta * (V[n] - Reset[n]) + (1 - beta) * W @ x[n]
    S[n+1]     = step(V[n+1] - threshold)          (hidden layer only)
    Reset[n+1] = threshold * S[n+1]                (soft reset by subtraction)

with V[0] = Reset[0] = 0.  The readout layer is the same integrator with an
infinite threshold: it never spikes and never resets.  The class scores are
the time-means of the readout potentials.

Two modes share one code path:

* ``spiking``: the forward pass uses the Heaviside step (spike iff
  V >= threshold); the backward pass substitutes the derivative of a scaled
  sigmoid for the step's (surrogate gradient).
* ``smooth``: the step is replaced by sigmoid(slope * (V - threshold)) in
  the forward pass as well, which makes the backward pass the exact
  analytic gradient - that is what the finite-difference checks exercise.

The leak beta of each layer is trainable through an unconstrained scalar
``beta_raw`` with beta = sigmoid(beta_raw), so beta stays in (0, 1) no
matter what the optimizer does.  Gradients flow through the reset path
(no detaching anywhere in the unrolled graph).
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FlowHistogram

THRESHOLD = 1.0
DEFAULT_SLOPE = 10.0
# beta for a 600 ms membrane time constant sampled every 200 ms
DEFAULT_BETA_INIT = math.exp(-0.2 / 0.6)

MODE_SPIKING = "spiking"
MODE_SMOOTH = "smooth"


class ShapeMismatch(ValueError):
    pass


class InvalidLabel(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"logit needs p in (0,1), got {p}")
    return math.log(p / (1.0 - p))


def _raw(value: float) -> np.ndarray:
    return np.array(float(value), dtype=np.float64)


@dataclass
class LifParams:
    weights: np.ndarray  # (n_out, n_in)
    beta_raw: np.ndarray  # 0-d float64, beta = sigmoid(beta_raw)
    threshold: float = THRESHOLD

    @property
    def beta(self) -> float:
        return float(sigmoid(self.beta_raw))


@dataclass
class ReadoutParams:
    weights: np.ndarray  # (n_out, n_in)
    beta_raw: np.ndarray

    @property
    def beta(self) -> float:
        return float(sigmoid(self.beta_raw))


@dataclass
class SnnModel:
    hidden: LifParams
    readout: ReadoutParams
    surrogate_slope: float = DEFAULT_SLOPE
    mode: str = MODE_SPIKING

    def __post_init__(self):
        if self.mode not in (MODE_SPIKING, MODE_SMOOTH):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.readout.weights.shape[1] != self.hidden.weights.shape[0]:
            raise ShapeMismatch(
                f"readout expects {self.readout.weights.shape[1]} inputs, "
                f"hidden layer provides {self.hidden.weights.shape[0]}"
            )

    @property
    def n_inputs(self) -> int:
        return self.hidden.weights.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.hidden.weights.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.readout.weights.shape[0]

    @classmethod
    def initialize(
        cls,
        n_inputs: int,
        n_hidden: int,
        n_outputs: int,
        rng: np.random.Generator,
        *,
        beta_init: float = DEFAULT_BETA_INIT,
        weight_gain: float = 1.0,
        surrogate_slope: float = DEFAULT_SLOPE,
        mode: str = MODE_SPIKING,
    ) -> "SnnModel":
        raw = logit(beta_init)
        w_h = rng.normal(0.0, weight_gain / math.sqrt(n_inputs), (n_hidden, n_inputs))
        w_r = rng.normal(0.0, weight_gain / math.sqrt(n_hidden), (n_outputs, n_hidden))
        return cls(
            hidden=LifParams(w_h, _raw(raw)),
            readout=ReadoutParams(w_r, _raw(raw)),
            surrogate_slope=surrogate_slope,
            mode=mode,
        )

    def clone(self) -> "SnnModel":
        return copy.deepcopy(self)


@dataclass
class ForwardTrace:
    hidden_potentials: np.ndarray  # (T, n_hidden)
    hidden_spikes: np.ndarray  # (T, n_hidden); {0,1} in spiking mode
    readout_potentials: np.ndarray  # (T, n_outputs)
    logits: np.ndarray  # (n_outputs,) time-mean of readout potentials


@dataclass
class Gradients:
    hidden_w: np.ndarray
    hidden_beta_raw: np.ndarray  # 0-d
    readout_w: np.ndarray
    readout_beta_raw: np.ndarray  # 0-d


PARAM_FIELDS = ("hidden_w", "hidden_beta_raw", "readout_w", "readout_beta_raw")


def model_params(model: SnnModel) -> dict[str, np.ndarray]:
    """Flat trainable-parameter view; arrays are shared with the model."""
    return {
        "hidden_w": model.hidden.weights,
        "hidden_beta_raw": model.hidden.beta_raw,
        "readout_w": model.readout.weights,
        "readout_beta_raw": model.readout.beta_raw,
    }


def grad_dict(grads: Gradients) -> dict[str, np.ndarray]:
    return {
        "hidden_w": grads.hidden_w,
        "hidden_beta_raw": grads.hidden_beta_raw,
        "readout_w": grads.readout_w,
        "readout_beta_raw": grads.readout_beta_raw,
    }


def _lif_forward_batch(x, weights, beta, threshold, slope, smooth):
    """Batched LIF layer.  x: (B, T, n_in) -> potentials, spikes, drive
    each (B, T, n_out); drive is the raw synaptic current W @ x[n]."""
    batch, steps, n_in = x.shape
    if n_in != weights.shape[1]:
        raise ShapeMismatch(f"input width {n_in} != weight columns {weights.shape[1]}")
    n_out = weights.shape[0]
    drive = x.reshape(batch * steps, n_in) @ weights.T
    drive = drive.reshape(batch, steps, n_out)
    potentials = np.empty((batch, steps, n_out))
    spikes = np.empty((batch, steps, n_out))
    v = np.zeros((batch, n_out))
    reset = np.zeros((batch, n_out))
    for n in range(steps):
        v = beta * (v - reset) + (1.0 - beta) * drive[:, n]
        if smooth:
            s = sigmoid(slope * (v - threshold))
        else:
            s = (v >= threshold).astype(np.float64)
        reset = threshold * s
        potentials[:, n] = v
        spikes[:, n] = s
    return potentials, spikes, drive


def _readout_forward_batch(spikes, weights, beta):
    """Batched non-spiking integrator.  spikes: (B, T, n_in) -> potentials
    (B, T, n_out) plus the raw drive."""
    batch, steps, n_in = spikes.shape
    if n_in != weights.shape[1]:
        raise ShapeMismatch(f"input width {n_in} != weight columns {weights.shape[1]}")
    n_out = weights.shape[0]
    drive = spikes.reshape(batch * steps, n_in) @ weights.T
    drive = drive.reshape(batch, steps, n_out)
    potentials = np.empty((batch, steps, n_out))
    u = np.zeros((batch, n_out))
    for n in range(steps):
        u = beta * u + (1.0 - beta) * drive[:, n]
        potentials[:, n] = u
    return potentials, drive


def lif_forward(
    inputs: np.ndarray,
    params: LifParams,
    slope: float = DEFAULT_SLOPE,
    mode: str = MODE_SPIKING,
) -> tuple[np.ndarray, np.ndarray]:
    """Run one LIF layer over a (T, n_in) input sequence.

    Returns (potentials, spikes), each (T, n_out); entry n holds the state
    after consuming input row n.  Spikes are Heaviside(V - threshold) in
    spiking mode and sigmoid(slope*(V - threshold)) in smooth mode.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ShapeMismatch(f"expected (T, n_in) input, got shape {inputs.shape}")
    pot, spk, _ = _lif_forward_batch(
        inputs[None], params.weights, params.beta, params.threshold, slope,
        smooth=(mode == MODE_SMOOTH),
    )
    return pot[0], spk[0]


def readout_forward(spikes: np.ndarray, params: ReadoutParams) -> np.ndarray:
    """Run the never-spiking readout integrator over (T, n_in) spikes."""
    spikes = np.asarray(spikes, dtype=np.float64)
    if spikes.ndim != 2:
        raise ShapeMismatch(f"expected (T, n_in) input, got shape {spikes.shape}")
    pot, _ = _readout_forward_batch(spikes[None], params.weights, params.beta)
    return pot[0]


def _input_from_counts(counts: np.ndarray, log1p: bool) -> np.ndarray:
    """Histogram grid (rows=size, cols=time) -> (T, n_inputs) drive where
    time column n feeds step n."""
    x = np.asarray(counts, dtype=np.float64).T
    return np.log1p(x) if log1p else x


def forward(
    model: SnnModel,
    hist: FlowHistogram | np.ndarray,
    *,
    log1p: bool = False,
    force_beta_zero: bool = False,
) -> ForwardTrace:
    """Full network pass over one histogram.

    ``force_beta_zero`` runs the stateless ablation: both leaks are treated
    as 0 for this pass while the stored parameters stay untouched.
    """
    counts = hist.counts if isinstance(hist, FlowHistogram) else hist
    if counts.shape[0] != model.n_inputs:
        raise ShapeMismatch(
            f"histogram has {counts.shape[0]} size rows, model expects {model.n_inputs}"
        )
    x = _input_from_counts(counts, log1p)
    beta_h = 0.0 if force_beta_zero else model.hidden.beta
    beta_r = 0.0 if force_beta_zero else model.readout.beta
    smooth = model.mode == MODE_SMOOTH
    pot_h, spk_h, _ = _lif_forward_batch(
        x[None], model.hidden.weights, beta_h, model.hidden.threshold,
        model.surrogate_slope, smooth,
    )
    pot_r, _ = _readout_forward_batch(spk_h, model.readout.weights, beta_r)
    return ForwardTrace(
        hidden_potentials=pot_h[0],
        hidden_spikes=spk_h[0],
        readout_potentials=pot_r[0],
        logits=pot_r[0].mean(axis=0),
    )


def predict(trace: ForwardTrace) -> int:
    """Winning class = highest mean readout potential; ties go to the
    lowest index."""
    return int(np.argmax(trace.logits))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss(trace: ForwardTrace, label: int, lambda_reg: float = 0.0) -> float:
    """Cross entropy of softmax(logits) plus lambda_reg times the total
    hidden spike count of this sample."""
    n_classes = trace.logits.shape[0]
    if not isinstance(label, (int, np.integer)) or not 0 <= label < n_classes:
        raise InvalidLabel(f"label must be in [0, {n_classes}), got {label!r}")
    ce = -_log_softmax(trace.logits)[label]
    return float(ce + lambda_reg * trace.hidden_spikes.sum())


def _batch_forward(model, x, beta_h, beta_r):
    smooth = model.mode == MODE_SMOOTH
    pot_h, spk_h, drive_h = _lif_forward_batch(
        x, model.hidden.weights, beta_h, model.hidden.threshold,
        model.surrogate_slope, smooth,
    )
    pot_r, drive_r = _readout_forward_batch(spk_h, model.readout.weights, beta_r)
    logits = pot_r.mean(axis=1)
    return pot_h, spk_h, drive_h, pot_r, drive_r, logits


def batch_loss_and_grads(
    model: SnnModel,
    x: np.ndarray,
    labels: np.ndarray,
    lambda_reg: float,
) -> tuple[float, Gradients, dict]:
    """Mean loss over a batch and its exact reverse-mode gradients.

    x is (B, T, n_inputs), already preprocessed.  The objective is
    mean(cross entropy) + lambda_reg * mean(per-sample hidden spike count);
    the backward sweep runs over the full unrolled graph, reset path
    included, with the sigmoid-derivative surrogate standing in for the
    step function in spiking mode.
    """
    batch, steps, _ = x.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeMismatch(f"labels shape {labels.shape} != ({batch},)")
    n_classes = model.n_outputs
    if labels.min() < 0 or labels.max() >= n_classes:
        raise InvalidLabel("batch labels out of range")

    beta_h, beta_r = model.hidden.beta, model.readout.beta
    thr = model.hidden.threshold
    slope = model.surrogate_slope
    pot_h, spk_h, drive_h, pot_r, drive_r, logits = _batch_forward(
        model, x, beta_h, beta_r
    )

    log_probs = _log_softmax(logits)
    ce = -log_probs[np.arange(batch), labels]
    spike_totals = spk_h.reshape(batch, -1).sum(axis=1)
    total_loss = float(ce.mean() + lambda_reg * spike_totals.mean())

    # dL/dlogits for the batch-mean objective
    dlogits = np.exp(log_probs)
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch

    # readout reverse sweep: dU[n] = dlogits/T + beta_r * dU[n+1]
    du = np.empty_like(pot_r)
    per_step = dlogits / steps
    carry = np.zeros((batch, n_classes))
    for n in range(steps - 1, -1, -1):
        carry = per_step + beta_r * carry
        du[:, n] = carry

    u_prev = np.concatenate(
        [np.zeros((batch, 1, n_classes)), pot_r[:, :-1]], axis=1
    )
    d_beta_r = float(np.sum(du * (u_prev - drive_r)))
    du_scaled = (1.0 - beta_r) * du
    d_w_r = (
        du_scaled.reshape(batch * steps, n_classes).T
        @ spk_h.reshape(batch * steps, model.n_hidden)
    )
    ds_ext = du_scaled.reshape(batch * steps, n_classes) @ model.readout.weights
    ds_ext = ds_ext.reshape(batch, steps, model.n_hidden)
    ds_ext += lambda_reg / batch  # spike-count regularizer

    # hidden reverse sweep with the surrogate derivative
    dv_all = np.empty_like(pot_h)
    dv_carry = np.zeros((batch, model.n_hidden))
    d_beta_h = 0.0
    for n in range(steps - 1, -1, -1):
        sg = sigmoid(slope * (pot_h[:, n] - thr))
        surrogate = slope * sg * (1.0 - sg)
        ds = ds_ext[:, n] - beta_h * thr * dv_carry
        dv = ds * surrogate + beta_h * dv_carry
        v_prev = pot_h[:, n - 1] if n > 0 else 0.0
        s_prev = spk_h[:, n - 1] if n > 0 else 0.0
        d_beta_h += float(np.sum(dv * (v_prev - thr * s_prev - drive_h[:, n])))
        dv_all[:, n] = dv
        dv_carry = dv

    d_w_h = (1.0 - beta_h) * (
        dv_all.reshape(batch * steps, model.n_hidden).T
        @ x.reshape(batch * steps, model.n_inputs)
    )

    # chain the leak gradients through beta = sigmoid(beta_raw)
    grads = Gradients(
        hidden_w=d_w_h,
        hidden_beta_raw=np.array(d_beta_h * beta_h * (1.0 - beta_h)),
        readout_w=d_w_r,
        readout_beta_raw=np.array(d_beta_r * beta_r * (1.0 - beta_r)),
    )
    aux = {
        "ce_mean": float(ce.mean()),
        "spikes_mean": float(spike_totals.mean()),
    }
    return total_loss, grads, aux


def backward(
    model: SnnModel,
    hist: FlowHistogram | np.ndarray,
    label: int,
    lambda_reg: float = 0.0,
    *,
    log1p: bool = False,
) -> Gradients:
    """Per-sample gradients of loss(forward(model, hist), label, lambda_reg)."""
    counts = hist.counts if isinstance(hist, FlowHistogram) else hist
    if counts.shape[0] != model.n_inputs:
        raise ShapeMismatch(
            f"histogram has {counts.shape[0]} size rows, model expects {model.n_inputs}"
        )
    n_classes = model.n_outputs
    if not isinstance(label, (int, np.integer)) or not 0 <= label < n_classes:
        raise InvalidLabel(f"label must be in [0, {n_classes}), got {label!r}")
    x = _input_from_counts(counts, log1p)[None]
    _, grads, _ = batch_loss_and_grads(model, x, np.array([label]), lambda_reg)
    return grads


_CKPT_HEADER = struct.Struct("<4sIIIdB")
CKPT_MAGIC = b"SNN1"
_MODE_CODES = {MODE_SPIKING: 0, MODE_SMOOTH: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def save_model(model: SnnModel, path: str | Path) -> None:
    """Checkpoint: "SNN1" header (dims, slope, mode) + row-major little-endian
    f64 hidden weights, readout weights, and the two beta_raw scalars."""
    blob = _CKPT_HEADER.pack(
        CKPT_MAGIC,
        model.n_inputs,
        model.n_hidden,
        model.n_outputs,
        model.surrogate_slope,
        _MODE_CODES[model.mode],
    )
    blob += model.hidden.weights.astype("<f8").tobytes()
    blob += model.readout.weights.astype("<f8").tobytes()
    blob += np.asarray(model.hidden.beta_raw, dtype="<f8").tobytes()
    blob += np.asarray(model.readout.beta_raw, dtype="<f8").tobytes()
    Path(path).write_bytes(blob)


def load_model(path: str | Path) -> SnnModel:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise CheckpointError("checkpoint shorter than header")
    magic, n_in, n_hid, n_out, slope, mode_code = _CKPT_HEADER.unpack(
        data[: _CKPT_HEADER.size]
    )
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if mode_code not in _MODE_NAMES:
        raise CheckpointError(f"unknown mode code {mode_code}")
    expected = _CKPT_HEADER.size + 8 * (n_hid * n_in + n_out * n_hid + 2)
    if len(data) != expected:
        raise CheckpointError(f"checkpoint is {len(data)} bytes, expected {expected}")
    offset = _CKPT_HEADER.size
    w_h = np.frombuffer(data, "<f8", n_hid * n_in, offset).reshape(n_hid, n_in).copy()
    offset += 8 * n_hid * n_in
    w_r = np.frombuffer(data, "<f8", n_out * n_hid, offset).reshape(n_out, n_hid).copy()
    offset += 8 * n_out * n_hid
    raw_h = np.frombuffer(data, "<f8", 1, offset)[0]
    raw_r = np.frombuffer(data, "<f8", 1, offset + 8)[0]
    return SnnModel(
        hidden=LifParams(w_h, _raw(raw_h)),
        readout=ReadoutParams(w_r, _raw(raw_r)),
        surrogate_slope=slope,
        mode=_MODE_NAMES[mode_code],
    )
