"""Kernel gradient descent in function space over a finite dataset.

A function is its table of values on the dataset. The kernel turns the
least-squares gradient into the linear map

    (Pi f)(x_j) = (1/N) sum_i K(x_j, x_i) f(x_i),

whose eigenpairs (orthonormal under the 1/N empirical inner product) are the
kernel principal components. Gradient flow on half the squared empirical
distance to a target then has the closed solution

    f_t = target + exp(-t Pi) (f_0 - target),

evaluated spectrally here, with eigenvalues below a relative threshold
treated as an exact null space (their modes persist for all time). The
t -> infinity limit with an invertible Gram is plain kernel interpolation;
for a Gaussian initial function it leaves a Gaussian error field whose
variance vanishes on the dataset and is computed in closed form off it.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .limit_kernel import EmpiricalMeasure, KernelGram
from .numerics import SymMatrix, power_iteration, solve_spd, sym_eig

NULL_SPACE_RELATIVE_THRESHOLD = 1e-12

# above this Gram dimension the top of the spectrum comes from power iteration
_DENSE_EIG_LIMIT = 256


class IntegratorError(RuntimeError):
    """Euler integration became unstable."""


@dataclass(frozen=True)
class FunctionOnData:
    """Values of a function restricted to the dataset, one row per point."""

    values: np.ndarray  # (N, n_out)
    measure: EmpiricalMeasure

    def __init__(self, values, measure):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != measure.count:
            raise ValueError(f"{v.shape[0]} rows of values for {measure.count} points")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "measure", measure)

    @property
    def n_out(self) -> int:
        return self.values.shape[1]

    def inner(self, other: "FunctionOnData") -> float:
        """Empirical inner product (1/N) sum_i f(x_i) . g(x_i)."""
        self._check_compatible(other)
        return float(np.sum(self.values * other.values) / self.measure.count)

    @property
    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def _check_compatible(self, other: "FunctionOnData"):
        if other.measure is not self.measure and not np.array_equal(
            other.measure.points, self.measure.points
        ):
            raise ValueError("functions live on different datasets")
        if other.values.shape != self.values.shape:
            raise ValueError("function shapes differ")

    def __add__(self, other):
        self._check_compatible(other)
        return FunctionOnData(self.values + other.values, self.measure)

    def __sub__(self, other):
        self._check_compatible(other)
        return FunctionOnData(self.values - other.values, self.measure)

    def __mul__(self, scalar):
        return FunctionOnData(self.values * float(scalar), self.measure)

    __rmul__ = __mul__


def zero_function(measure: EmpiricalMeasure, n_out: int = 1) -> FunctionOnData:
    return FunctionOnData(np.zeros((measure.count, n_out)), measure)


class PiOperator:
    """The kernel-times-average map; self-adjoint and PSD under the empirical
    inner product whenever the Gram is PSD."""

    def __init__(self, gram: KernelGram):
        self.gram = gram
        self.measure = gram.measure
        self.n_out = gram.n_out
        self._scalar = gram.scalar_topology
        self._mat = gram.block / self.measure.count

    @property
    def dim(self) -> int:
        return self.gram.dim

    def apply(self, f: FunctionOnData) -> FunctionOnData:
        if f.measure.count != self.measure.count or f.n_out != self.n_out:
            raise ValueError("function does not match the operator's dataset/output shape")
        if self._scalar:
            return FunctionOnData(self._mat @ f.values, self.measure)
        vec = f.values.reshape(-1)
        return FunctionOnData((self._mat @ vec).reshape(f.values.shape), self.measure)

    @cached_property
    def _eig(self):
        spec = sym_eig(SymMatrix(self._mat))
        return spec.eigenvalues, spec.eigenvectors

    @property
    def eigenvalues(self) -> np.ndarray:
        """Descending; for scalar-topology grams these are the per-output-copy
        eigenvalues (each carries multiplicity n_out in the full operator)."""
        return self._eig[0]

    def _decay_factors(self, t: float) -> np.ndarray:
        lam, _ = self._eig
        lam_max = max(float(lam[0]), 0.0)
        live = lam > NULL_SPACE_RELATIVE_THRESHOLD * lam_max
        return np.where(live, np.exp(-t * np.where(live, lam, 0.0)), 1.0), live

    def _to_modes(self, values: np.ndarray) -> np.ndarray:
        _, v = self._eig
        return v.T @ (values if self._scalar else values.reshape(-1, 1))

    def _from_modes(self, modes: np.ndarray, shape) -> np.ndarray:
        _, v = self._eig
        out = v @ modes
        return out if self._scalar else out.reshape(shape)


def pi_apply(op: PiOperator, f: FunctionOnData) -> FunctionOnData:
    return op.apply(f)


def kernel_gd_exact(op: PiOperator, f0: FunctionOnData, fstar: FunctionOnData,
                    times) -> list:
    """Spectral evaluation of f_t = fstar + exp(-t Pi)(f0 - fstar) at each t."""
    delta = f0 - fstar
    modes = op._to_modes(delta.values)
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=np.float64)):
        decay, _ = op._decay_factors(float(t))
        vals = op._from_modes(decay[:, None] * modes, delta.values.shape)
        out.append(fstar + FunctionOnData(vals, op.measure))
    return out


def kernel_gd_exact_at(op: PiOperator, f0: FunctionOnData, fstar: FunctionOnData,
                       t: float) -> FunctionOnData:
    return kernel_gd_exact(op, f0, fstar, [t])[0]


def mode_norms(op: PiOperator, f: FunctionOnData) -> np.ndarray:
    """Empirical norm of the projection of f on each eigenmode (descending)."""
    modes = op._to_modes(f.values)
    return np.sqrt(np.sum(modes * modes, axis=1) / op.measure.count)


def kernel_gd_exact_at_queries(
    op: PiOperator,
    f0: FunctionOnData,
    fstar: FunctionOnData,
    t: float,
    theta_cross: np.ndarray,
    f0_at_queries: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Extend the exact trajectory off the dataset through the kernel:
    f_t(q) = f0(q) + kappa(q)^T V diag((1 - e^{-t lam})/lam) V^T (fstar - f0) / N,
    with the null-space rate (1 - e^{-t lam})/lam -> t. Scalar-topology only."""
    if not op._scalar:
        raise ValueError("query extension expects a scalar-topology gram")
    lam, _ = op._eig
    lam_max = max(float(lam[0]), 0.0)
    live = lam > NULL_SPACE_RELATIVE_THRESHOLD * lam_max
    rates = np.where(live, -np.expm1(-t * lam) / np.where(live, lam, 1.0), t)
    modes = op._to_modes((fstar - f0).values)
    coeff = op._from_modes(rates[:, None] * modes, None) / op.measure.count
    base = 0.0 if f0_at_queries is None else np.asarray(f0_at_queries, dtype=np.float64)
    return base + theta_cross @ coeff


def trajectory_to_csv(path, times, losses, g_norms=None, h_norms=None,
                      mode_norms=None):
    """Write a function-space trajectory: columns (t, loss), optionally the
    along/orthogonal component norms and per-mode norms (one column each)."""
    times = np.asarray(times, dtype=np.float64)
    header = ["t", "loss"]
    columns = [times, np.asarray(losses, dtype=np.float64)]
    if g_norms is not None:
        header += ["g_norm", "h_norm"]
        columns += [np.asarray(g_norms, dtype=np.float64),
                    np.asarray(h_norms, dtype=np.float64)]
    if mode_norms is not None:
        mode_norms = np.asarray(mode_norms, dtype=np.float64)
        header += [f"mode_{i}" for i in range(mode_norms.shape[1])]
        columns += [mode_norms[:, i] for i in range(mode_norms.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


@dataclass
class EulerTrajectory:
    times: np.ndarray
    errors: np.ndarray  # |f - fstar| under the empirical norm, per step
    final: FunctionOnData

    @property
    def costs(self) -> np.ndarray:
        return 0.5 * self.errors**2

    def to_csv(self, path):
        trajectory_to_csv(path, self.times, self.costs)


def kernel_gd_euler(op: PiOperator, f0: FunctionOnData, fstar: FunctionOnData,
                    dt: float, steps: int) -> EulerTrajectory:
    """Explicit Euler for the same flow: f += dt * Pi (fstar - f)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lam_max = float(op.eigenvalues[0])
    if dt * lam_max >= 2.0:
        warnings.warn(
            f"dt * lambda_max = {dt * lam_max:.3g} >= 2: explicit Euler is unstable",
            RuntimeWarning,
        )
    f = FunctionOnData(f0.values.copy(), op.measure)
    errors = [(f - fstar).norm]
    growth = 0
    for k in range(steps):
        f = f + dt * op.apply(fstar - f)
        errors.append((f - fstar).norm)
        growth = growth + 1 if errors[-1] > errors[-2] else 0
        if growth >= 10:
            raise IntegratorError(
                f"error grew for {growth} consecutive steps (step {k + 1}, "
                f"|f - fstar| = {errors[-1]:.3e})"
            )
    return EulerTrajectory(
        times=dt * np.arange(steps + 1),
        errors=np.asarray(errors),
        final=f,
    )


@dataclass(frozen=True)
class RegressionLimit:
    """The t -> infinity limit of the flow with an invertible Gram.

    With a random mean-zero initial function the limit's mean is kernel
    interpolation of the targets; the fluctuation is the initial Gaussian
    conditioned to vanish on the dataset, whose variance is evaluated here
    in closed form. Passing a concrete f0 instead makes the limit
    deterministic: interpolation plus the f0 residual."""

    theta_gram: KernelGram
    sigma_gram: KernelGram
    coef_star: np.ndarray  # Gram^{-1} targets, (N, n_out)
    coef_zero: Optional[np.ndarray]  # Gram^{-1} f0 on data, when f0 is given
    jitter: float

    def mean_at(self, theta_cross: np.ndarray,
                f0_at_queries: Optional[np.ndarray] = None) -> np.ndarray:
        """Predictive mean at queries; rows of theta_cross pair queries with
        dataset points. With a concrete f0, its query values must be passed."""
        mean = theta_cross @ self.coef_star
        if self.coef_zero is not None:
            if f0_at_queries is None:
                raise ValueError("f0 was fixed at construction; pass f0_at_queries")
            mean = mean + np.asarray(f0_at_queries, dtype=np.float64) \
                - theta_cross @ self.coef_zero
        return mean

    def variance_at(self, theta_cross: np.ndarray, sigma_cross: np.ndarray,
                    sigma_query_diag: np.ndarray) -> np.ndarray:
        """Variance of the limit at queries (per output coordinate).

        var(q) = Sigma(q,q) - 2 w^T sigma(q) + w^T Sigma_data w with
        w = Gram^{-1} kappa(q); zero when f0 was fixed."""
        m = theta_cross.shape[0]
        if self.coef_zero is not None:
            return np.zeros(m)
        gram = SymMatrix(self.theta_gram.block)
        w = solve_spd(gram, theta_cross.T, self.jitter)  # (N, M)
        sig = self.sigma_gram.block
        term2 = 2.0 * np.einsum("nm,mn->m", w, sigma_cross)
        term3 = np.einsum("nm,nk,km->m", w, sig, w)
        var = np.asarray(sigma_query_diag, dtype=np.float64) - term2 + term3
        return np.maximum(var, 0.0)


def regression_limit(theta_gram: KernelGram, sigma_gram: KernelGram,
                     fstar: FunctionOnData, f0: Optional[FunctionOnData] = None,
                     jitter: float = 0.0) -> RegressionLimit:
    """Closed-form limit of kernel gradient descent on a least-squares cost.

    `f0=None` declares the mean-zero Gaussian initial ensemble (mean and
    variance of the limit are available); a concrete `f0` gives the
    deterministic limit for that single trajectory."""
    if not theta_gram.scalar_topology or not sigma_gram.scalar_topology:
        raise ValueError("regression limit expects scalar-topology grams")
    if theta_gram.measure.count != fstar.measure.count:
        raise ValueError("target does not live on the gram's dataset")
    gram = SymMatrix(theta_gram.block)
    coef_star = solve_spd(gram, fstar.values, jitter)
    coef_zero = None
    if f0 is not None:
        coef_zero = solve_spd(gram, f0.values, jitter)
    return RegressionLimit(theta_gram=theta_gram, sigma_gram=sigma_gram,
                           coef_star=coef_star, coef_zero=coef_zero, jitter=jitter)


def default_ridge_jitter(gram: KernelGram) -> float:
    """The documented vanishing-ridge guard: 1e-10 * trace / N."""
    return 1e-10 * float(np.trace(gram.block)) / gram.measure.count


@dataclass(frozen=True)
class KernelPcaResult:
    """Leading eigenpairs of Pi; components are orthonormal under the
    empirical inner product (non-centered PCA: no mean subtraction)."""

    eigenvalues: np.ndarray
    components: tuple  # FunctionOnData, descending eigenvalue order

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n = self.components[0].values.shape[0] if self.components else 0
            writer.writerow(["index", "eigenvalue"] + [f"value_{i}" for i in range(n)])
            for idx, (lam, comp) in enumerate(zip(self.eigenvalues, self.components)):
                writer.writerow([idx, repr(float(lam))]
                                + [repr(float(v)) for v in comp.values[:, 0]])


def kernel_pca(op: PiOperator, count: int) -> KernelPcaResult:
    """Top `count` kernel principal components of the dataset."""
    if not 1 <= count <= op.dim:
        raise ValueError(f"count must be in [1, {op.dim}]")
    if op._scalar and op.n_out != 1:
        raise ValueError("kernel PCA with multiple outputs expects a full gram")
    n = op.measure.count
    if op.dim > _DENSE_EIG_LIMIT:
        spec = power_iteration(SymMatrix(op._mat), count=count)
        lam, vecs = spec.eigenvalues, spec.eigenvectors
    else:
        lam, vecs = op._eig
        lam, vecs = lam[:count], vecs[:, :count]
    comps = tuple(
        FunctionOnData(np.sqrt(n) * vecs[:, i].reshape(n, -1), op.measure)
        for i in range(count)
    )
    return KernelPcaResult(eigenvalues=lam.copy(), components=comps)


def decompose_along(f_diff: FunctionOnData, component: FunctionOnData):
    """Split f_diff into its projection g on the component's span and the
    orthogonal remainder h; g + h reproduces f_diff exactly."""
    denom = component.inner(component)
    if denom <= 0.0:
        raise ValueError("cannot decompose along a zero component")
    g = (f_diff.inner(component) / denom) * component
    return g, f_diff - g
