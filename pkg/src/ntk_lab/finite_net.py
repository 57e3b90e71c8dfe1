"""Finite-width fully connected networks in the tangent-kernel parametrization.

Layers compute pre[l+1] = W[l] @ act[l] / sqrt(n_l) + beta * b[l] with all
parameters drawn iid N(0, 1); the output is the last preactivation (no
nonlinearity on top). The 1/sqrt(width) factors put the network in the
regime where the empirical tangent kernel

    Theta_{kk'}(x, x') = sum_p  d f_k(x)/d theta_p * d f_k'(x')/d theta_p

concentrates around an explicit limit as widths grow. The kernel is never
assembled from the P-dimensional Jacobian: summing over one layer's weights
factorizes into (activation inner product / n_l + beta^2) times the inner
product of back-propagated sensitivities, so a forward pass plus one backward
pass per output coordinate is all it takes, at O(sum n_l) memory per sample.

Training follows plain gradient flow discretized by explicit Euler: the
parameter velocity is the dataset average of the per-sample gradients paired
with a training direction (for least squares, target minus current output).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import blas as _blas
from threadpoolctl import threadpool_limits

from .limit_kernel import EmpiricalMeasure, KernelGram
from .nonlinearity import Nonlinearity
from .numerics import RngStream


class DivergenceError(RuntimeError):
    """Training produced non-finite parameters."""

    def __init__(self, step: int):
        super().__init__(f"non-finite parameters after step {step}")
        self.step = step


@dataclass(frozen=True)
class Architecture:
    widths: tuple  # (n_0, ..., n_L)
    beta: float
    nonlinearity: Nonlinearity

    def __post_init__(self):
        w = tuple(int(v) for v in self.widths)
        object.__setattr__(self, "widths", w)
        if len(w) < 2:
            raise ValueError("need at least input and output layers")
        if any(v < 1 for v in w):
            raise ValueError("all widths must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def param_count(self) -> int:
        return sum((n + 1) * m for n, m in zip(self.widths[:-1], self.widths[1:]))


@dataclass
class NetworkParams:
    """Connection matrices W[l] of shape (n_{l+1}, n_l) and bias vectors b[l]."""

    arch: Architecture
    weights: list
    biases: list
    init_stream: Optional[RngStream] = None

    def __post_init__(self):
        for l, (n, m) in enumerate(zip(self.arch.widths[:-1], self.arch.widths[1:])):
            if self.weights[l].shape != (m, n):
                raise ValueError(f"W[{l}] has shape {self.weights[l].shape}, want ({m}, {n})")
            if self.biases[l].shape != (m,):
                raise ValueError(f"b[{l}] has shape {self.biases[l].shape}, want ({m},)")

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.init_stream)


def init(arch: Architecture, rng: RngStream, dtype=np.float64) -> NetworkParams:
    """All parameters iid standard normal, deterministically from the stream."""
    gen = rng.generator()
    weights, biases = [], []
    for n, m in zip(arch.widths[:-1], arch.widths[1:]):
        weights.append(gen.standard_normal((m, n), dtype=dtype))
        biases.append(gen.standard_normal(m, dtype=dtype))
    return NetworkParams(arch, weights, biases, init_stream=rng)


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer preactivations and activations for one batch; the network
    output is the last preactivation."""

    inputs: np.ndarray  # (M, n_0)
    preacts: tuple  # l = 1..L, each (M, n_l)
    acts: tuple  # l = 0..L-1, each (M, n_l); acts[0] is the input batch

    @property
    def output(self) -> np.ndarray:
        return self.preacts[-1]


def forward(params: NetworkParams, batch: np.ndarray) -> ForwardTrace:
    arch = params.arch
    x = np.asarray(batch, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != arch.n_in:
        raise ValueError(f"batch must be M x {arch.n_in}, got shape {x.shape}")
    nl = arch.nonlinearity
    acts = [x]
    preacts = []
    h = x
    for l in range(arch.depth):
        # python-float scale: a numpy scalar would promote f32 layers to f64
        scale = 1.0 / math.sqrt(arch.widths[l])
        z = scale * (h @ params.weights[l].T) + arch.beta * params.biases[l]
        preacts.append(z)
        if l < arch.depth - 1:
            h = nl.fn(z)
            acts.append(h)
    return ForwardTrace(inputs=x, preacts=tuple(preacts), acts=tuple(acts))


@dataclass(frozen=True)
class SensitivityTrace:
    """Back-propagated directions d[l] of shape (M, n_l) for l = 1..L; d[L]
    is the output cotangent, and below the top
    d[l] = sigma'(pre[l]) * (W[l]/sqrt(n_l))^T d[l+1]."""

    directions: tuple  # index l-1 holds d[l]


@dataclass(frozen=True)
class ParamGradient:
    """Dataset-averaged gradient paired with a cotangent: for each layer,
    grad_W[l] = mean_i d[l+1](x_i) outer act[l](x_i) / sqrt(n_l) and
    grad_b[l] = beta * mean_i d[l+1](x_i)."""

    weight_grads: tuple
    bias_grads: tuple


def _sensitivities(params: NetworkParams, trace: ForwardTrace, cot: np.ndarray) -> list:
    arch = params.arch
    nl = arch.nonlinearity
    directions = [None] * arch.depth
    directions[arch.depth - 1] = cot
    for l in range(arch.depth - 1, 0, -1):
        scale = 1.0 / math.sqrt(arch.widths[l])
        # (W^T d^T)^T hits the faster GEMM path than d @ W for wide layers
        directions[l - 1] = nl.dfn(trace.preacts[l - 1]) * (
            scale * (params.weights[l].T @ directions[l].T).T
        )
    return directions


def _check_trace(params: NetworkParams, trace: ForwardTrace, cot: np.ndarray):
    arch = params.arch
    m = trace.inputs.shape[0]
    if cot.shape != (m, arch.n_out):
        raise ValueError(f"cotangent must be {(m, arch.n_out)}, got {cot.shape}")
    if len(trace.preacts) != arch.depth or trace.preacts[-1].shape[1] != arch.n_out:
        raise ValueError("trace does not match the architecture")
    for l in range(arch.depth - 1):
        if trace.acts[l + 1].shape[1] != arch.widths[l + 1]:
            raise ValueError("trace does not match the architecture")


def backward(params: NetworkParams, trace: ForwardTrace, cotangent: np.ndarray):
    """Sensitivities plus the parameter gradient for the given output cotangent.

    Returns (SensitivityTrace, ParamGradient); the gradient averages over the
    batch with uniform weight 1/M, matching the empirical-measure pairing.
    """
    arch = params.arch
    m = trace.inputs.shape[0]
    cot = np.asarray(cotangent, dtype=params.dtype)
    _check_trace(params, trace, cot)
    directions = _sensitivities(params, trace, cot)

    weight_grads, bias_grads = [], []
    for l in range(arch.depth):
        scale = 1.0 / math.sqrt(arch.widths[l])
        weight_grads.append(scale / m * (directions[l].T @ trace.acts[l]))
        bias_grads.append(arch.beta / m * directions[l].sum(axis=0))
    return (
        SensitivityTrace(directions=tuple(directions)),
        ParamGradient(weight_grads=tuple(weight_grads), bias_grads=tuple(bias_grads)),
    )


def _accumulate_scaled_outer(w: np.ndarray, acts: np.ndarray, d_next: np.ndarray,
                             alpha: float):
    """w += alpha * d_next^T @ acts without materializing the product.

    Dispatches one gemm with beta=1 writing into w's transposed (Fortran)
    view; the naive expression would allocate the full gradient and then
    stream w twice more, which dominates training time for wide layers.
    """
    if acts.dtype != w.dtype:
        acts = acts.astype(w.dtype)
    if d_next.dtype != w.dtype:
        d_next = d_next.astype(w.dtype)
    gemm = None
    if w.dtype == np.float32:
        gemm = _blas.sgemm
    elif w.dtype == np.float64:
        gemm = _blas.dgemm
    wt = w.T
    if gemm is None or not wt.flags.f_contiguous:
        w += alpha * (d_next.T @ acts)
        return
    res = gemm(alpha=alpha, a=acts, b=d_next, beta=1.0, c=wt, trans_a=1,
               overwrite_c=1)
    if not np.shares_memory(res, w):  # pragma: no cover - layout fallback
        w += alpha * (d_next.T @ acts)


def network_function(params: NetworkParams, measure: EmpiricalMeasure) -> np.ndarray:
    """f evaluated on the dataset, as an (N, n_out) float64 table."""
    return np.asarray(forward(params, measure.points).output, dtype=np.float64)


def empirical_ntk(params: NetworkParams, measure: EmpiricalMeasure,
                  time: Optional[float] = None) -> KernelGram:
    """Empirical tangent-kernel Gram over the dataset via the layerwise
    factorization; Gram index (point i, output k) -> i * n_out + k."""
    arch = params.arch
    n = measure.count
    k_out = arch.n_out
    with threadpool_limits(limits=1, user_api="blas"):
        trace = forward(params, measure.points)

        # sensitivities per output coordinate: (k_out, N, n_l)
        per_output = []
        eye = np.eye(k_out, dtype=params.dtype)
        for k in range(k_out):
            cot = np.broadcast_to(eye[k], (n, k_out)).copy()
            sens, _ = backward(params, trace, cot)
            per_output.append(sens.directions)

    gram = np.zeros((n * k_out, n * k_out))
    for l in range(arch.depth):
        a = np.asarray(trace.acts[l], dtype=np.float64)
        feat = a @ a.T / arch.widths[l] + arch.beta**2  # (N, N)
        d = np.stack([np.asarray(per_output[k][l], dtype=np.float64) for k in range(k_out)])
        sens_gram = np.einsum("kia,lja->ikjl", d, d, optimize=True)
        gram += (feat[:, None, :, None] * sens_gram).reshape(n * k_out, n * k_out)
    gram = 0.5 * (gram + gram.T)

    block = gram
    scalar = k_out == 1
    return KernelGram(
        measure=measure,
        n_out=k_out,
        kind="theta_empirical",
        level=arch.depth,
        block=block,
        scalar_topology=scalar,
        beta=arch.beta,
        nonlinearity=arch.nonlinearity.name,
        widths=arch.widths,
        time=time,
    )


def ntk_drift(params_t0: NetworkParams, params_t1: NetworkParams,
              measure: EmpiricalMeasure) -> float:
    """Relative Frobenius distance between the two empirical tangent Grams."""
    if params_t0.arch.widths != params_t1.arch.widths:
        raise ValueError("architectures differ")
    g0 = empirical_ntk(params_t0, measure).block
    g1 = empirical_ntk(params_t1, measure).block
    denom = np.linalg.norm(g0)
    return float(np.linalg.norm(g1 - g0) / denom) if denom > 0 else 0.0


@dataclass(frozen=True)
class TrainingDirection:
    """Maps (time, current outputs on the dataset) to the direction paired
    with the parameter gradients. Least squares uses target - current, which
    descends the quadratic cost."""

    provider: Callable[[float, np.ndarray], np.ndarray]
    kind: str = "custom"
    target: Optional[np.ndarray] = None

    @staticmethod
    def least_squares(target: np.ndarray) -> "TrainingDirection":
        tgt = np.asarray(target, dtype=np.float64)
        return TrainingDirection(provider=lambda t, f: tgt - f, kind="least_squares",
                                 target=tgt)

    @staticmethod
    def zero() -> "TrainingDirection":
        return TrainingDirection(provider=lambda t, f: np.zeros_like(f), kind="custom")


@dataclass
class TrainRecord:
    step: int
    time: float
    loss: float  # 0.5 * |f - target|^2 under the empirical measure (nan if no target)
    direction_norm: float
    payload: dict = field(default_factory=dict)


@dataclass
class TrainTrajectory:
    records: list

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        import csv as _csv

        payload_keys = sorted({k for r in self.records for k in r.payload})
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["step", "t", "loss", "direction_norm"] + payload_keys)
            for r in self.records:
                w.writerow(
                    [r.step, repr(r.time), repr(r.loss), repr(r.direction_norm)]
                    + [repr(r.payload[k]) if k in r.payload else "" for k in payload_keys]
                )


def _pin_norm(values: np.ndarray) -> float:
    # tolerate diverging values: the caller's finite guard does the aborting
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sqrt(np.mean(np.sum(values * values, axis=1))))


def _all_finite(params: NetworkParams) -> bool:
    # cheap screen first: a non-finite entry always poisons the sum, and the
    # rare finite-overflow false alarm falls through to the exact check
    for a in params.weights + params.biases:
        if not math.isfinite(float(a.sum())) and not bool(np.isfinite(a).all()):
            return False
    return True


def train(
    params: NetworkParams,
    measure: EmpiricalMeasure,
    direction: TrainingDirection,
    step_size: float,
    steps: int,
    recorders: Sequence = (),
    record_every: int = 1,
) -> TrainTrajectory:
    """Explicit-Euler gradient flow: params += step_size * <grad f, d_t>.

    Mutates `params` in place (single-writer contract) and returns per-step
    records; `recorders` are callables (step, t, params, outputs) -> dict
    merged into the record payload every `record_every` steps.
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    records = []

    def snapshot(step: int):
        t = step * step_size
        trace = forward(params, measure.points)
        f = np.asarray(trace.output, dtype=np.float64)
        d = direction.provider(t, f)
        loss = np.nan
        if direction.target is not None:
            loss = 0.5 * _pin_norm(f - direction.target) ** 2
        payload = {}
        if step % record_every == 0 or step == steps:
            for rec in recorders:
                payload.update(rec(step, t, params, f))
        records.append(TrainRecord(step=step, time=t, loss=loss,
                                   direction_norm=_pin_norm(d), payload=payload))
        return trace, d

    arch = params.arch
    n = measure.count
    # the per-step GEMMs are skinny (batch-sized); BLAS thread sync costs more
    # than it buys at every width measured, so the loop runs single-threaded
    with threadpool_limits(limits=1, user_api="blas"):
        for step in range(steps):
            trace, d = snapshot(step)
            # overflow surfaces as the explicit divergence guard, not a warning
            with np.errstate(over="ignore", invalid="ignore"):
                cot = d.astype(params.dtype)
                _check_trace(params, trace, cot)
                directions = _sensitivities(params, trace, cot)
                for l in range(arch.depth):
                    scale = 1.0 / math.sqrt(arch.widths[l])
                    _accumulate_scaled_outer(params.weights[l], trace.acts[l],
                                             directions[l], step_size * scale / n)
                    params.biases[l] += (step_size * arch.beta / n) * directions[l].sum(axis=0)
                if not _all_finite(params):
                    raise DivergenceError(step)
    snapshot(steps)
    return TrainTrajectory(records=records)


def save_checkpoint(params: NetworkParams, path_prefix: str):
    """Flat binary parameter dump plus a JSON sidecar describing the layout."""
    flat = np.concatenate(
        [w.ravel() for w in params.weights] + [b.ravel() for b in params.biases]
    )
    flat.tofile(f"{path_prefix}.bin")
    sidecar = {
        "widths": list(params.arch.widths),
        "beta": params.arch.beta,
        "nonlinearity": params.arch.nonlinearity.name,
        "dtype": str(flat.dtype),
        "order": ["weights", "biases"],
        "shapes": {
            "weights": [list(w.shape) for w in params.weights],
            "biases": [list(b.shape) for b in params.biases],
        },
        "seed": None if params.init_stream is None else
        {"seed": params.init_stream.seed, "stream": params.init_stream.stream},
    }
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_checkpoint(path_prefix: str,
                    nl_lookup: Optional[Callable[[str], Nonlinearity]] = None) -> NetworkParams:
    if nl_lookup is None:
        from .nonlinearity import from_name as nl_lookup
    with open(f"{path_prefix}.json") as fh:
        sidecar = json.load(fh)
    arch = Architecture(tuple(sidecar["widths"]), sidecar["beta"],
                        nl_lookup(sidecar["nonlinearity"]))
    flat = np.fromfile(f"{path_prefix}.bin", dtype=np.dtype(sidecar["dtype"]))
    weights, biases = [], []
    pos = 0
    for shape in sidecar["shapes"]["weights"]:
        size = int(np.prod(shape))
        weights.append(flat[pos:pos + size].reshape(shape).copy())
        pos += size
    for shape in sidecar["shapes"]["biases"]:
        size = int(np.prod(shape))
        biases.append(flat[pos:pos + size].reshape(shape).copy())
        pos += size
    if pos != flat.size:
        raise ValueError("checkpoint payload length does not match the sidecar")
    stream = sidecar.get("seed")
    rng = None if stream is None else RngStream(stream["seed"], stream["stream"])
    return NetworkParams(arch, weights, biases, init_stream=rng)
