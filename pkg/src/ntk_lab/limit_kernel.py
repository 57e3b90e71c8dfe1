"""Infinite-width kernels of fully connected networks over a finite dataset.

Two kernel families are computed by one layer recursion:

  * the activation (Gaussian-process) kernels: level 1 is the scaled inner
    product plus bias variance, and each further level is the Gaussian dual
    of the nonlinearity applied to the previous level, plus bias variance;
  * the limiting neural tangent kernel: level 1 equals the activation kernel,
    and each step multiplies the previous tangent kernel entrywise by the
    derivative dual and adds the current activation kernel.

Both kernels depend on the inputs only through the pairwise inner products,
and for multi-output networks the limit factorizes as a scalar kernel times
the identity on outputs, so everything is stored as N x N scalar blocks.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nonlinearity import Nonlinearity, dual_diag, dual_dot_diag, dual_dot_grid, dual_grid
from .numerics import SymMatrix, sym_eig

_DEFAULT_ORDER = 80


@dataclass(frozen=True)
class EmpiricalMeasure:
    """The finite dataset carrying uniform weight 1/N per point."""

    points: np.ndarray  # (N, n0)

    def __init__(self, points: np.ndarray):
        p = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if p.ndim != 2:
            raise ValueError(f"points must be an N x n0 matrix, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("dataset points must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def input_dim(self) -> int:
        return self.points.shape[1]

    @property
    def digest(self) -> str:
        """Platform-independent content hash of the point matrix."""
        payload = np.ascontiguousarray(self.points, dtype="<f8").tobytes()
        head = np.array(self.points.shape, dtype="<i8").tobytes()
        return hashlib.sha256(head + payload).hexdigest()


@dataclass(frozen=True)
class KernelGram:
    """An N*n_out square Gram of kernel evaluations over a dataset.

    Limiting kernels factor as a scalar kernel times the output identity, so
    they are stored as the N x N scalar block (`scalar_topology=True`); the
    empirical tangent kernel of a multi-output network is a genuine
    (N*n_out) x (N*n_out) matrix indexed by (point, output) -> i * n_out + k.
    """

    measure: EmpiricalMeasure
    n_out: int
    kind: str  # "sigma" | "theta_limit" | "theta_empirical"
    level: int  # recursion level (sigma) or network depth (theta)
    block: np.ndarray
    scalar_topology: bool = True
    beta: Optional[float] = None
    nonlinearity: Optional[str] = None
    widths: Optional[tuple] = None
    time: Optional[float] = None

    def __post_init__(self):
        n = self.measure.count
        want = n if self.scalar_topology else n * self.n_out
        if self.block.shape != (want, want):
            raise ValueError(f"gram block shape {self.block.shape} != ({want}, {want})")

    @property
    def dim(self) -> int:
        return self.measure.count * self.n_out

    def full_matrix(self) -> SymMatrix:
        """The dense (N*n_out) x (N*n_out) Gram, materializing the output identity."""
        if not self.scalar_topology or self.n_out == 1:
            return SymMatrix(self.block)
        return SymMatrix(np.kron(self.block, np.eye(self.n_out)))

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "level": self.level,
            "n_out": self.n_out,
            "beta": self.beta,
            "nonlinearity": self.nonlinearity,
            "widths": None if self.widths is None else list(self.widths),
            "time": self.time,
            "dataset_digest": self.measure.digest,
            "dataset_count": self.measure.count,
            "input_dim": self.measure.input_dim,
        }

    def to_csv(self, path):
        """Dense CSV dump, rows/columns indexed by dataset position."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index"] + [str(j) for j in range(self.block.shape[1])])
            for i, row in enumerate(self.block):
                writer.writerow([str(i)] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class KernelStack:
    """Per-level kernels of one recursion run: activation kernels for levels
    1..depth, derivative duals for levels 2..depth, tangent kernels for
    levels 1..depth (empty when only the activation part was requested)."""

    measure: EmpiricalMeasure
    depth: int
    beta: float
    nonlinearity: Nonlinearity
    sigmas: tuple
    sigma_dots: tuple
    thetas: tuple = field(default=())

    def sigma(self, level: int) -> np.ndarray:
        if not 1 <= level <= self.depth:
            raise ValueError(f"sigma level must be in [1, {self.depth}]")
        return self.sigmas[level - 1]

    def sigma_dot(self, level: int) -> np.ndarray:
        if not 2 <= level <= self.depth:
            raise ValueError(f"sigma_dot level must be in [2, {self.depth}]")
        return self.sigma_dots[level - 2]

    def theta(self, level: Optional[int] = None) -> np.ndarray:
        if not self.thetas:
            raise ValueError("stack was built without the tangent kernel")
        level = self.depth if level is None else level
        if not 1 <= level <= self.depth:
            raise ValueError(f"theta level must be in [1, {self.depth}]")
        return self.thetas[level - 1]

    def sigma_gram(self, level: Optional[int] = None, n_out: int = 1) -> KernelGram:
        level = self.depth if level is None else level
        return KernelGram(self.measure, n_out, "sigma", level, self.sigma(level),
                          beta=self.beta, nonlinearity=self.nonlinearity.name)

    def theta_gram(self, level: Optional[int] = None, n_out: int = 1) -> KernelGram:
        level = self.depth if level is None else level
        return KernelGram(self.measure, n_out, "theta_limit", level, self.theta(level),
                          beta=self.beta, nonlinearity=self.nonlinearity.name)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _run_recursion(points: np.ndarray, depth: int, beta: float, nl: Nonlinearity,
                   order: int, want_theta: bool):
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    n0 = points.shape[1]
    b2 = beta * beta
    sig = _symmetrize(points @ points.T / n0 + b2)
    sigmas = [sig]
    sigma_dots = []
    thetas = [sig] if want_theta else []
    for _ in range(2, depth + 1):
        d = np.diag(sigmas[-1]).copy()
        prev = sigmas[-1]
        nxt = _symmetrize(dual_grid(nl, d[:, None], d[None, :], prev, order=order) + b2)
        # Diagonal entries sit at correlation exactly 1; evaluating them via a
        # computed correlation would round 1 down and hit the arc-cosine
        # square-root singularity, so they get the one-dimensional path.
        np.fill_diagonal(nxt, dual_diag(nl, d, order=order) + b2)
        sigmas.append(nxt)
        if want_theta:
            sdot = _symmetrize(dual_dot_grid(nl, d[:, None], d[None, :], prev, order=order))
            np.fill_diagonal(sdot, dual_dot_diag(nl, d, order=order))
            sigma_dots.append(sdot)
            thetas.append(_symmetrize(thetas[-1] * sdot + nxt))
        else:
            sigma_dots.append(None)
    if not want_theta:
        sigma_dots = []
    return sigmas, sigma_dots, thetas


def sigma_stack(measure: EmpiricalMeasure, depth: int, beta: float, nl: Nonlinearity,
                order: int = _DEFAULT_ORDER) -> KernelStack:
    """Activation kernels for levels 1..depth over the dataset."""
    sigmas, _, _ = _run_recursion(measure.points, depth, beta, nl, order, want_theta=False)
    return KernelStack(measure, depth, float(beta), nl,
                       sigmas=tuple(sigmas), sigma_dots=(), thetas=())


def ntk_stack(measure: EmpiricalMeasure, depth: int, beta: float, nl: Nonlinearity,
              order: int = _DEFAULT_ORDER) -> KernelStack:
    """Activation and limiting tangent kernels for levels 1..depth."""
    sigmas, sigma_dots, thetas = _run_recursion(
        measure.points, depth, beta, nl, order, want_theta=True
    )
    return KernelStack(measure, depth, float(beta), nl,
                       sigmas=tuple(sigmas), sigma_dots=tuple(sigma_dots), thetas=tuple(thetas))


@dataclass(frozen=True)
class CrossKernels:
    """Kernel evaluations between M query points and the N dataset points,
    per recursion level, plus the kernel diagonal at the queries."""

    sigma: tuple  # level 1..depth, each (M, N)
    theta: tuple
    sigma_query_diag: tuple  # each (M,)
    theta_query_diag: tuple


def cross_kernel(measure: EmpiricalMeasure, depth: int, beta: float, nl: Nonlinearity,
                 queries: np.ndarray, order: int = _DEFAULT_ORDER) -> CrossKernels:
    """Run the recursion on queries and dataset jointly and slice out the
    query-vs-dataset blocks. Query rows index the first axis."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != measure.input_dim:
        raise ValueError(f"queries must be M x {measure.input_dim}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("queries must be finite")
    m = q.shape[0]
    joint = np.vstack([q, measure.points])
    sigmas, _, thetas = _run_recursion(joint, depth, beta, nl, order, want_theta=True)
    return CrossKernels(
        sigma=tuple(s[:m, m:].copy() for s in sigmas),
        theta=tuple(t[:m, m:].copy() for t in thetas),
        sigma_query_diag=tuple(np.diag(s)[:m].copy() for s in sigmas),
        theta_query_diag=tuple(np.diag(t)[:m].copy() for t in thetas),
    )


def min_eigenvalue(gram: KernelGram) -> float:
    """Smallest eigenvalue of the Gram; for scalar-topology grams the output
    identity factor never changes the spectrum's extremes."""
    spectrum = sym_eig(SymMatrix(gram.block))
    return float(spectrum.eigenvalues[-1])
