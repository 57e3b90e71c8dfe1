"""Scalar nonlinearities and their Gaussian duals.

The central object is the *dual* of a nonlinearity sigma: for a centered
bivariate Gaussian (X, Y) with covariance [[vx, c], [c, vy]],

    dual(sigma, cov)     = E[sigma(X) sigma(Y)]
    dual_dot(sigma, cov) = E[sigma'(X) sigma'(Y)]

These expectations drive the layer recursions of the infinite-width kernels.
ReLU gets the arc-cosine closed forms; everything else is integrated
numerically. Plain tensor-product Gauss-Hermite is spectrally accurate only
for smooth integrands, so nonlinearities declare their kink locations and the
quadrature splits each axis there (iterated Gauss-Legendre per smooth piece,
with the Gaussian weight folded in). The closed forms are validated against
this quadrature path by the test suite.

Hermite machinery: expanding mu(x) = sigma(scale * x) in unit-norm
probabilists' Hermite polynomials h_i gives mu = sum a_i h_i, and the dual of
mu at correlation rho is sum a_i^2 rho^i. Re-expanding that series through
the sphere-to-correlation change of variables yields the truncated
positive-definiteness certificate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special
from scipy.stats import binom

from .numerics import gauss_hermite

# Integration limit in standard deviations; the normal mass beyond is ~5e-39,
# and the Hermite-function envelope exp(-x^2/4) is ~2e-19 * poly there.
_TAIL = 13.0

_CORRELATION_CLAMP = 1e-12

_DEFAULT_ORDER = 80


class PdVerdict(enum.Enum):
    CERTIFIED_PD_TRUNCATED = "certified_pd_truncated"
    NOT_PD_POLYNOMIAL = "not_pd_polynomial"
    INCONCLUSIVE = "inconclusive"


class Nonlinearity:
    """A scalar map, its derivative, and the metadata the kernels need.

    `kinks` lists the points where the map or its derivative is non-smooth;
    the quadrature path splits its integrals there. The derivative map is
    checked against central finite differences on a probe grid at
    construction (probes stay >= 1e-3 away from kinks).
    """

    def __init__(
        self,
        kind: str,
        fn: Callable[[np.ndarray], np.ndarray],
        dfn: Callable[[np.ndarray], np.ndarray],
        lipschitz_bound: float,
        kinks: Sequence[float] = (),
        coeffs: Optional[Sequence[float]] = None,
        name: Optional[str] = None,
    ):
        self.kind = kind
        self.fn = fn
        self.dfn = dfn
        self.lipschitz_bound = float(lipschitz_bound)
        self.kinks = tuple(sorted(float(k) for k in kinks))
        self.coeffs = None if coeffs is None else tuple(float(c) for c in coeffs)
        self.name = name or kind
        if self.lipschitz_bound <= 0:
            raise ValueError("lipschitz_bound must be positive")
        self._check_derivative()

    @property
    def is_smooth(self) -> bool:
        return not self.kinks

    def _check_derivative(self):
        grid = np.linspace(-3.0, 3.0, 61)
        if self.kinks:
            keep = np.min(np.abs(grid[:, None] - np.array(self.kinks)[None, :]), axis=1) >= 1e-3
            grid = grid[keep]
        h = 1e-5
        fd = (self.fn(grid + h) - self.fn(grid - h)) / (2 * h)
        err = np.max(np.abs(fd - self.dfn(grid)))
        if err > 1e-6:
            raise ValueError(f"derivative map disagrees with finite differences ({err:.2e})")

    def __repr__(self):
        return f"Nonlinearity({self.name!r})"


def apply(nl: Nonlinearity, x) -> np.ndarray:
    """sigma applied entrywise."""
    return nl.fn(np.asarray(x, dtype=np.float64))


def apply_dot(nl: Nonlinearity, x) -> np.ndarray:
    """sigma' applied entrywise."""
    return nl.dfn(np.asarray(x, dtype=np.float64))


_CACHE: dict = {}


def _relu_dot(x):
    x = np.asarray(x)
    # keep the caller's float dtype: promoting f32 activations to f64 would
    # silently double the memory traffic of wide-network backprop
    dt = x.dtype if x.dtype.kind == "f" else np.float64
    return (x > 0).astype(dt)


def relu() -> Nonlinearity:
    """max(0, x); the derivative at the kink is taken to be 0."""
    if "relu" not in _CACHE:
        _CACHE["relu"] = Nonlinearity(
            kind="relu",
            fn=lambda x: np.maximum(x, 0.0),
            dfn=_relu_dot,
            lipschitz_bound=1.0,
            kinks=(0.0,),
        )
    return _CACHE["relu"]


def erf() -> Nonlinearity:
    if "erf" not in _CACHE:
        _CACHE["erf"] = Nonlinearity(
            kind="erf",
            fn=special.erf,
            dfn=lambda x: 2.0 / math.sqrt(math.pi) * np.exp(-np.square(x)),
            lipschitz_bound=2.0 / math.sqrt(math.pi),
        )
    return _CACHE["erf"]


def tanh() -> Nonlinearity:
    if "tanh" not in _CACHE:
        _CACHE["tanh"] = Nonlinearity(
            kind="tanh",
            fn=np.tanh,
            dfn=lambda x: 1.0 - np.square(np.tanh(x)),
            lipschitz_bound=1.0,
        )
    return _CACHE["tanh"]


def polynomial(coeffs: Sequence[float]) -> Nonlinearity:
    """sum_k coeffs[k] * x^k."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("polynomial needs a nonempty 1-d coefficient list")
    dc = np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1)
    lip = abs(c[1]) if c.size <= 2 else math.inf
    return Nonlinearity(
        kind="polynomial",
        fn=lambda x: np.polynomial.polynomial.polyval(x, c),
        dfn=lambda x: np.polynomial.polynomial.polyval(x, dc),
        lipschitz_bound=max(lip, np.finfo(float).tiny),
        coeffs=c,
        name="poly:" + ",".join(repr(float(v)) for v in c),
    )


def custom(
    fn: Callable,
    dfn: Callable,
    lipschitz_bound: float,
    kinks: Sequence[float] = (),
    name: str = "custom",
) -> Nonlinearity:
    return Nonlinearity("custom", fn, dfn, lipschitz_bound, kinks=kinks, name=name)


def from_name(name: str) -> Nonlinearity:
    """Parse the CLI spelling: "relu" | "erf" | "tanh" | "poly:c0,c1,..."."""
    name = name.strip()
    if name == "relu":
        return relu()
    if name == "erf":
        return erf()
    if name == "tanh":
        return tanh()
    if name.startswith("poly:"):
        try:
            coeffs = [float(tok) for tok in name[len("poly:"):].split(",")]
        except ValueError as exc:
            raise ValueError(f"bad polynomial coefficients in {name!r}") from exc
        return polynomial(coeffs)
    raise ValueError(f"unknown nonlinearity {name!r}")


# ---------------------------------------------------------------------------
# Quadrature against the standard normal density.
# ---------------------------------------------------------------------------


def _normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def _legendre(order: int):
    t, w = np.polynomial.legendre.leggauss(order)
    return t, w


def _split_rule_1d(breaks: np.ndarray, order: int):
    """Nodes/weights for E[f(X)], X ~ N(0,1), with [-TAIL, TAIL] split at `breaks`.

    Weights include the normal density, so the expectation is sum(w * f(x)).
    """
    t, w = _legendre(order)
    pts = np.concatenate(([-_TAIL], np.sort(breaks), [_TAIL]))
    pts = np.clip(pts, -_TAIL, _TAIL)
    nodes, weights = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        if b - a < 1e-14:
            continue
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        x = half * t + mid
        nodes.append(x)
        weights.append(half * w * _normal_pdf(x))
    return np.concatenate(nodes), np.concatenate(weights)


def gauss_expectation(fn: Callable, kinks: Sequence[float] = (), order: int = _DEFAULT_ORDER) -> float:
    """E[fn(X)] for X ~ N(0,1), splitting the axis at the declared kinks."""
    x, w = _split_rule_1d(np.asarray(kinks, dtype=np.float64), order)
    return float(w @ fn(x))


def _dual_pair_quadrature(fx, fy, kinks_x, kinks_y, sx, sy, rho, order) -> float:
    """E[fx(sx*U) fy(sy*(rho*U + s*V))] for independent standard normals U, V.

    Iterated rule: the inner (V) integral is split at the kink locations of
    fy, which for fixed U sit at v = (k/sy - rho*u)/s; the outer (U) integral
    is split at the kinks of fx and additionally where the inner kink path
    crosses v = 0 (there the inner integral loses smoothness in u fastest).
    """
    s2 = max(1.0 - rho * rho, 0.0)
    s = math.sqrt(s2)
    if s < 1e-13:
        sign = 1.0 if rho >= 0 else -1.0
        breaks = [k / sx for k in kinks_x] + [k / (sign * sy) for k in kinks_y]
        u, wu = _split_rule_1d(np.asarray(breaks), order)
        return float(wu @ (fx(sx * u) * fy(sign * sy * u)))

    outer_breaks = [k / sx for k in kinks_x]
    if abs(rho) > 1e-8:
        outer_breaks += [k / (sy * rho) for k in kinks_y]
    u, wu = _split_rule_1d(np.asarray(outer_breaks), order)

    if not kinks_y:
        v, wv = _split_rule_1d(np.zeros(0), order)
        inner = (fy(sy * (rho * u[:, None] + s * v[None, :])) @ wv)
    else:
        t, w = _legendre(order)
        vstar = (np.array(kinks_y)[None, :] / sy - rho * u[:, None]) / s  # (U, m)
        pts = np.concatenate(
            [np.full((u.size, 1), -_TAIL), np.sort(np.clip(vstar, -_TAIL, _TAIL), axis=1),
             np.full((u.size, 1), _TAIL)],
            axis=1,
        )  # (U, m+2)
        inner = np.zeros_like(u)
        for j in range(pts.shape[1] - 1):
            a, b = pts[:, j], pts[:, j + 1]
            half, mid = 0.5 * (b - a), 0.5 * (a + b)
            v = half[:, None] * t[None, :] + mid[:, None]  # (U, order)
            wt = half[:, None] * w[None, :] * _normal_pdf(v)
            inner += np.sum(wt * fy(sy * (rho * u[:, None] + s * v)), axis=1)
    return float(wu @ (fx(sx * u) * inner))


def _dual_grid_smooth(fx, fy, sx, sy, rho, order) -> np.ndarray:
    """Vectorized tensor Gauss-Hermite for smooth integrands; inputs are flat arrays."""
    rule = gauss_hermite(order)
    u, w = rule.nodes, rule.weights
    s = np.sqrt(np.clip(1.0 - rho * rho, 0.0, 1.0))
    out = np.empty_like(rho)
    chunk = max(1, int(2**24 // (u.size * u.size)))
    for lo in range(0, rho.size, chunk):
        hi = min(lo + chunk, rho.size)
        a = fx(sx[lo:hi, None] * u[None, :])  # (p, n)
        arg = sy[lo:hi, None, None] * (
            rho[lo:hi, None, None] * u[None, :, None] + s[lo:hi, None, None] * u[None, None, :]
        )
        out[lo:hi] = np.einsum("pi,i,pij,j->p", a, w, fy(arg), w, optimize=True)
    return out


def _relu_dual_closed(sx_sy: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Arc-cosine closed form: E[relu(X) relu(Y)] for correlation rho,
    scaled by sqrt(var_x * var_y)."""
    r = np.clip(rho, -1.0, 1.0)
    return sx_sy * (np.sqrt(1.0 - r * r) + (math.pi - np.arccos(r)) * r) / (2.0 * math.pi)


def _relu_dual_dot_closed(rho: np.ndarray) -> np.ndarray:
    """E[1{X>0} 1{Y>0}] = (pi - arccos(rho)) / (2 pi); variance-free."""
    r = np.clip(rho, -1.0, 1.0)
    return (math.pi - np.arccos(r)) / (2.0 * math.pi)


def _standardize_grid(var_x, var_y, cov):
    vx = np.asarray(var_x, dtype=np.float64)
    vy = np.asarray(var_y, dtype=np.float64)
    c = np.asarray(cov, dtype=np.float64)
    vx, vy, c = np.broadcast_arrays(vx, vy, c)
    if np.any(vx < 0) or np.any(vy < 0):
        raise ValueError("variances must be nonnegative")
    return vx, vy, c


def _grid_eval(nl_fx, nl_fy, kinks_x, kinks_y, smooth, closed, var_x, var_y, cov, order):
    """Shared driver for dual_grid / dual_dot_grid."""
    vx, vy, c = _standardize_grid(var_x, var_y, cov)
    shape = vx.shape
    vx, vy, c = vx.ravel(), vy.ravel(), c.ravel()
    out = np.zeros(vx.shape, dtype=np.float64)

    degenerate = (vx == 0) | (vy == 0)
    live = ~degenerate
    if np.any(degenerate) and nl_fx is not None:
        # Continuity limit: X (or Y) is a.s. 0, so the expectation carries a
        # factor fx(0); only the fx(0) == 0 case has a well-defined limit 0.
        if abs(float(nl_fx(np.zeros(1))[0])) > 0:
            raise ValueError("zero variance with sigma(0) != 0 has no continuous limit")
    sx = np.sqrt(vx[live])
    sy = np.sqrt(vy[live])
    rho = np.zeros(sx.shape)
    np.divide(c[live], sx * sy, out=rho, where=(sx * sy) > 0)
    rho = np.clip(rho, -1.0, 1.0)

    if closed is not None:
        out[live] = closed(sx, sy, rho)
    elif smooth:
        out[live] = _dual_grid_smooth(nl_fx, nl_fy, sx, sy, rho, order)
    else:
        vals = np.empty(rho.size)
        for i in range(rho.size):
            vals[i] = _dual_pair_quadrature(
                nl_fx, nl_fy, kinks_x, kinks_y, float(sx[i]), float(sy[i]), float(rho[i]), order
            )
        out[live] = vals
    return out.reshape(shape)


def dual_grid(nl: Nonlinearity, var_x, var_y, cov, order: int = _DEFAULT_ORDER,
              force_quadrature: bool = False) -> np.ndarray:
    """E[sigma(X) sigma(Y)] evaluated elementwise over broadcast arrays of
    (var_x, var_y, cov). Correlations are clamped to [-1, 1] (recursion
    round-off routinely lands at 1 + 1e-16 on the diagonal)."""
    closed = None
    if nl.kind == "relu" and not force_quadrature:
        closed = lambda sx, sy, rho: _relu_dual_closed(sx * sy, rho)
    return _grid_eval(nl.fn, nl.fn, nl.kinks, nl.kinks, nl.is_smooth, closed,
                      var_x, var_y, cov, order)


def dual_dot_grid(nl: Nonlinearity, var_x, var_y, cov, order: int = _DEFAULT_ORDER,
                  force_quadrature: bool = False) -> np.ndarray:
    """E[sigma'(X) sigma'(Y)] evaluated elementwise; see dual_grid."""
    closed = None
    if nl.kind == "relu" and not force_quadrature:
        closed = lambda sx, sy, rho: _relu_dual_dot_closed(rho)
    # sigma' of relu is a step function: discontinuous at 0 but smooth on each
    # side, which is exactly what the kink-splitting quadrature handles.
    smooth = nl.is_smooth
    return _grid_eval(nl.dfn, nl.dfn, nl.kinks, nl.kinks, smooth, closed,
                      var_x, var_y, cov, order)


def dual_diag(nl: Nonlinearity, var, order: int = _DEFAULT_ORDER,
              force_quadrature: bool = False) -> np.ndarray:
    """E[sigma(X)^2] for X ~ N(0, var), elementwise over `var`.

    This is the full-correlation case of the dual. Kernel recursions use it
    for Gram diagonals, where forming a correlation first would round 1 down
    to 1 - eps and hit the square-root singularity of the arc-cosine form.
    """
    v = np.asarray(var, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("variances must be nonnegative")
    if nl.kind == "relu" and not force_quadrature:
        return v / 2.0
    return _second_moment_1d(nl.fn, nl.kinks, v, order)


def dual_dot_diag(nl: Nonlinearity, var, order: int = _DEFAULT_ORDER,
                  force_quadrature: bool = False) -> np.ndarray:
    """E[sigma'(X)^2] for X ~ N(0, var), elementwise over `var`."""
    v = np.asarray(var, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("variances must be nonnegative")
    if nl.kind == "relu" and not force_quadrature:
        return np.where(v > 0, 0.5, 0.0)
    return _second_moment_1d(nl.dfn, nl.kinks, v, order)


def _second_moment_1d(fn, kinks, var, order) -> np.ndarray:
    v = np.atleast_1d(np.asarray(var, dtype=np.float64))
    out = np.zeros(v.shape)
    live = v > 0
    if np.any(~live) and abs(float(fn(np.zeros(1))[0])) > 0:
        raise ValueError("zero variance with sigma(0) != 0 has no continuous limit")
    s = np.sqrt(v[live])
    if not kinks or all(k == 0.0 for k in kinks):
        # break positions do not depend on the scale: one shared rule
        x, w = _split_rule_1d(np.asarray(kinks, dtype=np.float64), order)
        vals = np.square(fn(s[:, None] * x[None, :])) @ w
    else:
        vals = np.empty(s.size)
        for i, si in enumerate(s):
            x, w = _split_rule_1d(np.asarray(kinks) / si, order)
            vals[i] = float(w @ np.square(fn(si * x)))
    out[live] = vals
    return out.reshape(np.shape(var)) if np.ndim(var) else out[0]


def _validate_cov(cov) -> tuple[float, float, float]:
    m = np.asarray(cov, dtype=np.float64)
    if m.shape != (2, 2):
        raise ValueError(f"cov must be 2x2, got shape {m.shape}")
    if abs(m[0, 1] - m[1, 0]) > 1e-12 * max(1.0, abs(m[0, 1])):
        raise ValueError("cov must be symmetric")
    vx, vy, c = float(m[0, 0]), float(m[1, 1]), float(0.5 * (m[0, 1] + m[1, 0]))
    if vx < 0 or vy < 0:
        raise ValueError("cov diagonal must be nonnegative")
    denom = math.sqrt(vx * vy)
    if denom > 0 and abs(c) > denom * (1.0 + _CORRELATION_CLAMP):
        raise ValueError(f"cov is not PSD: |corr| = {abs(c) / denom:.17g} > 1")
    if denom == 0 and c != 0:
        raise ValueError("cov is not PSD: nonzero covariance with zero variance")
    return vx, vy, c


def dual(nl: Nonlinearity, cov, order: int = _DEFAULT_ORDER,
         force_quadrature: bool = False) -> float:
    """E[sigma(X) sigma(Y)], (X, Y) ~ N(0, cov), for a 2x2 PSD cov."""
    vx, vy, c = _validate_cov(cov)
    return float(dual_grid(nl, vx, vy, c, order=order, force_quadrature=force_quadrature))


def dual_dot(nl: Nonlinearity, cov, order: int = _DEFAULT_ORDER,
             force_quadrature: bool = False) -> float:
    """E[sigma'(X) sigma'(Y)], (X, Y) ~ N(0, cov), for a 2x2 PSD cov."""
    vx, vy, c = _validate_cov(cov)
    return float(dual_dot_grid(nl, vx, vy, c, order=order, force_quadrature=force_quadrature))


@dataclass(frozen=True)
class DualActivation:
    """The scalar dual of a nonlinearity at fixed marginal variances,
    exposed as a function of the correlation."""

    source: Nonlinearity
    variance_x: float
    variance_y: float
    method: str = "closed_form"  # "closed_form" | "quadrature"
    order: int = _DEFAULT_ORDER

    def __post_init__(self):
        if self.variance_x <= 0 or self.variance_y <= 0:
            raise ValueError("variances must be positive")
        if self.method not in ("closed_form", "quadrature"):
            raise ValueError(f"unknown evaluation method {self.method!r}")
        if self.method == "closed_form" and self.source.kind != "relu":
            raise ValueError(f"no closed form available for {self.source.name!r}")

    def __call__(self, rho: float) -> float:
        c = rho * math.sqrt(self.variance_x * self.variance_y)
        cov = [[self.variance_x, c], [c, self.variance_y]]
        return dual(self.source, cov, order=self.order,
                    force_quadrature=self.method == "quadrature")


# ---------------------------------------------------------------------------
# Hermite expansions and the positive-definiteness certificate.
# ---------------------------------------------------------------------------


def normalized_hermite(x: np.ndarray, order: int) -> np.ndarray:
    """Rows 0..order of the probabilists' Hermite polynomials normalized to
    unit L2(N(0,1)) norm, evaluated at x; shape (order + 1, len(x)).

    Three-term recurrence in the normalized basis:
    h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1).
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((order + 1, x.size))
    out[0] = 1.0
    if order >= 1:
        out[1] = x
    for k in range(1, order):
        out[k + 1] = (x * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


@dataclass(frozen=True)
class HermiteExpansion:
    """mu(x) = sigma(scale * x) expanded as sum_i coefficients[i] * h_i(x)."""

    coefficients: np.ndarray
    order: int
    scale: float
    l2_residual: float  # quadrature-weighted L2 norm of the truncation remainder


_EXPAND_NODES = 200


def hermite_expand(nl: Nonlinearity, scale: float, order: int) -> HermiteExpansion:
    """Expansion coefficients a_i = E[mu(X) h_i(X)] with mu(x) = sigma(scale*x)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not 0 <= order <= 2 * _EXPAND_NODES - 1:
        raise ValueError(f"expansion order must be in [0, {2 * _EXPAND_NODES - 1}]")
    breaks = np.asarray([k / scale for k in nl.kinks])
    x, w = _split_rule_1d(breaks, _EXPAND_NODES)
    mu = nl.fn(scale * x)
    h = normalized_hermite(x, order)
    coeffs = h @ (w * mu)
    total = float(w @ (mu * mu))
    residual = math.sqrt(max(total - float(coeffs @ coeffs), 0.0))
    coeffs.flags.writeable = False
    return HermiteExpansion(coefficients=coeffs, order=order, scale=float(scale),
                            l2_residual=residual)


def dual_from_expansion(he: HermiteExpansion, rho: float) -> float:
    """Truncated dual of the expanded map: sum_i a_i^2 rho^i."""
    r = float(rho)
    if abs(r) > 1.0 + _CORRELATION_CLAMP:
        raise ValueError(f"correlation must lie in [-1, 1], got {r}")
    r = min(1.0, max(-1.0, r))
    a2 = np.square(he.coefficients)
    return float(np.polynomial.polynomial.polyval(r, a2))


@dataclass(frozen=True)
class PdCertificate:
    """Truncated check of the strict-positivity pattern that makes a zonal
    kernel positive-definite on every sphere."""

    even_nonzero_count: int
    odd_nonzero_count: int
    threshold: float
    verdict: PdVerdict
    power_coefficients: np.ndarray  # the expansion of the level-2 kernel in x.x'


def pd_certificate(nl: Nonlinearity, n0: int, beta: float, order: int = 40,
                   threshold: float = 1e-12) -> PdCertificate:
    """Certify (up to truncation) positive-definiteness of the depth-2 kernels
    on the unit sphere in n0 dimensions.

    The level-2 activation kernel restricted to the sphere is a function of
    t = x.x' alone: nu(t) = beta^2 + sum_i a_i^2 u(t)^i with
    u(t) = (n0 beta^2 + t)/(n0 beta^2 + 1) and a_i the Hermite coefficients
    of mu(x) = sigma(x sqrt(1/n0 + beta^2)). Writing nu as a power series in
    t, positive-definiteness on every sphere is equivalent to infinitely many
    even and infinitely many odd coefficients being strictly positive; the
    truncated surrogate demands at least 3 of each above `threshold`.

    The re-expansion is cancellation-free: the t^n coefficient of u(t)^i is
    the binomial pmf at n with i trials and success probability 1/(1 + n0 beta^2).
    """
    if order < 8:
        raise ValueError("certificate order must be at least 8")
    if n0 < 1:
        raise ValueError("n0 must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    scale = math.sqrt(1.0 / n0 + beta * beta)
    he = hermite_expand(nl, scale, order)
    a2 = np.square(he.coefficients)

    c = n0 * beta * beta
    p = 1.0 / (1.0 + c)
    ns = np.arange(order + 1)
    b = np.zeros(order + 1)
    for i in range(order + 1):
        if a2[i] == 0.0:
            continue
        b += a2[i] * binom.pmf(ns, i, p)
    b[0] += beta * beta

    even_count = int(np.sum(b[0::2] > threshold))
    odd_count = int(np.sum(b[1::2] > threshold))

    if nl.kind == "polynomial":
        verdict = PdVerdict.NOT_PD_POLYNOMIAL
    elif even_count >= 3 and odd_count >= 3:
        verdict = PdVerdict.CERTIFIED_PD_TRUNCATED
    else:
        verdict = PdVerdict.INCONCLUSIVE

    b.flags.writeable = False
    return PdCertificate(
        even_nonzero_count=even_count,
        odd_nonzero_count=odd_count,
        threshold=float(threshold),
        verdict=verdict,
        power_coefficients=b,
    )
