"""Sampling kernels and their exponential-reproduction coefficients.

All kernels are compactly supported on an interval starting at 0.  Shifting
a kernel only changes the reproduction coefficients c_{m,0}; the moments
computed from them are unaffected, so no location correction is needed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ReproductionError(ValueError):
    """Raised when a kernel cannot reproduce the requested exponentials."""


# ---------------------------------------------------------------------------
# kernel variants


@dataclass(frozen=True)
class Kernel:
    """Base class.  Subclasses implement ``_eval`` on points inside the support."""

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def is_real(self) -> bool:
        return True

    def _eval(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        lo, hi = self.support
        inside = (t >= lo) & (t < hi)
        out = np.zeros(t.shape, dtype=np.float64 if self.is_real else np.complex128)
        if np.any(inside):
            vals = self._eval(t[inside])
            out[inside] = vals.real if self.is_real else vals
        return out


@dataclass(frozen=True)
class EMOMS(Kernel):
    """Maximum-order minimum-support exponential kernel of order P.

    Reproduces e^{j w_m t} for w_m = -P pi/(P+1) + 2 pi m/(P+1), m = 0..P.
    On its support [0, P+1) it is the Dirichlet kernel centred at floor(P/2),
    normalized to a unit peak.
    """

    P: int

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("eMOMS order P must be >= 1")

    @property
    def support(self):
        return (0.0, float(self.P + 1))

    @property
    def omega0(self) -> float:
        return -self.P * math.pi / (self.P + 1)

    @property
    def lam(self) -> float:
        return 2 * math.pi / (self.P + 1)

    def _eval(self, t):
        return eval_emoms(self.P, t)


@dataclass(frozen=True)
class ESpline(Kernel):
    """Exponential spline: convolution of the atoms e^{alpha_m t} 1[0,1)(t)."""

    alphas: tuple

    @property
    def support(self):
        return (0.0, float(len(self.alphas)))

    @property
    def is_real(self) -> bool:
        a = np.sort_complex(np.asarray(self.alphas, dtype=complex))
        return bool(np.allclose(a, np.sort_complex(np.conj(a)), atol=1e-12))

    def _eval(self, t):
        return eval_espline(self.alphas, t)

    @classmethod
    def from_frequencies(cls, omega0: float, lam: float, P: int) -> "ESpline":
        return cls(tuple(1j * (omega0 + lam * m) for m in range(P + 1)))


@dataclass(frozen=True)
class PiecewiseLinear(Kernel):
    """Sum of ramps d_i max(0, t - i delta), truncated to [0, I delta)."""

    d: tuple
    delta: float

    @property
    def support(self):
        return (0.0, len(self.d) * self.delta)

    def _eval(self, t):
        return eval_piecewise(np.asarray(self.d), self.delta, t)

    @property
    def coefficients(self) -> np.ndarray:
        return np.asarray(self.d, dtype=np.float64)


@dataclass(frozen=True)
class Tabulated(Kernel):
    """Linear interpolation of samples phi(start + i*step)."""

    values: tuple
    step: float
    start: float = 0.0

    @property
    def support(self):
        return (self.start, self.start + (len(self.values) - 1) * self.step)

    def _eval(self, t):
        grid = self.start + self.step * np.arange(len(self.values))
        return np.interp(t, grid, np.asarray(self.values))

    def to_csv(self, path) -> None:
        grid = self.start + self.step * np.arange(len(self.values))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "phi"])
            for t, v in zip(grid, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "Tabulated":
        rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        t, v = rows[:, 0], rows[:, 1]
        steps = np.diff(t)
        if len(t) < 2 or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("tabulated kernel needs a uniform grid of at least two points")
        return cls(tuple(v), float(steps[0]), float(t[0]))


def tabulate(kernel: Kernel, step: float) -> Tabulated:
    lo, hi = kernel.support
    n = int(round((hi - lo) / step))
    grid = lo + step * np.arange(n + 1)
    return Tabulated(tuple(np.real(kernel(grid))), step, lo)


# ---------------------------------------------------------------------------
# evaluation routines


def eval_emoms(P: int, t) -> np.ndarray:
    """Dirichlet form sin(pi x) / ((P+1) sin(pi x/(P+1))), x = t - floor(P/2); no support mask."""
    x = np.asarray(t, dtype=np.float64) - (P // 2)
    n = P + 1
    den = n * np.sin(np.pi * x / n)
    near = np.abs(den) < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.sin(np.pi * x) / np.where(near, 1.0, den)
    # removable singularity at x = 0 (mod P+1)
    return np.where(near, np.cos(np.pi * x) / np.cos(np.pi * x / n), val)


def _impulse_basis(alphas: np.ndarray):
    """Coefficients of g(t) = L^{-1}[1 / prod(s - alpha_m)] in the basis t^j e^{r t}."""
    roots: list[complex] = []
    mult: list[int] = []
    for a in alphas:
        for i, r in enumerate(roots):
            if abs(a - r) < 1e-12:
                mult[i] += 1
                break
        else:
            roots.append(complex(a))
            mult.append(1)
    order = len(alphas)
    basis = [(r, j) for r, p in zip(roots, mult) for j in range(p)]
    # derivative k at 0 of t^j e^{rt} is k!/(k-j)! r^{k-j} for k >= j
    W = np.zeros((order, order), dtype=complex)
    for col, (r, j) in enumerate(basis):
        for k in range(j, order):
            W[k, col] = math.factorial(k) / math.factorial(k - j) * r ** (k - j)
    rhs = np.zeros(order, dtype=complex)
    rhs[-1] = 1.0
    coef = np.linalg.solve(W, rhs)
    return basis, coef


def eval_espline(alphas, t) -> np.ndarray:
    """Exponential spline of order len(alphas), exact on its support [0, len(alphas)].

    The spline is sum_k q_k g(t - k), where g is the causal impulse response of
    1/prod(s - alpha_m) and q are the coefficients of prod(1 - e^{alpha_m} z).
    """
    alphas = np.asarray(alphas, dtype=complex).ravel()
    if alphas.size == 0:
        raise ValueError("E-spline needs at least one frequency")
    t = np.asarray(t, dtype=np.float64)
    basis, coef = _impulse_basis(alphas)
    q = np.array([1.0 + 0j])
    for a in alphas:
        q = np.convolve(q, [1.0, -np.exp(a)])
    out = np.zeros(t.shape, dtype=complex)
    for k, qk in enumerate(q):
        u = t - k
        pos = u >= 0
        if not np.any(pos):
            continue
        up = np.where(pos, u, 0.0)
        g = np.zeros(t.shape, dtype=complex)
        for (r, j), c in zip(basis, coef):
            g += c * up ** j * np.exp(r * up)
        out += np.where(pos, qk * g, 0.0)
    out[(t < 0) | (t >= alphas.size)] = 0.0
    return out


def eval_piecewise(d, delta: float, t, support: float | None = None) -> np.ndarray:
    """sum_i d_i max(0, t - i*delta), optionally zeroed for t >= support."""
    d = np.asarray(d, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    knots = delta * np.arange(d.size)
    # cumulative-slope form: on [i delta, (i+1) delta) the value is t*D_i - E_i
    j = np.clip(np.ceil(t / delta).astype(np.int64) - 1, -1, d.size - 1)
    D = np.concatenate([[0.0], np.cumsum(d)])
    E = np.concatenate([[0.0], np.cumsum(d * knots)])
    out = t * D[j + 1] - E[j + 1]
    if support is not None:
        out = np.where(t < support, out, 0.0)
    return out


def piecewise_from_kernel(kernel: Kernel, delta: float, support: float | None = None) -> PiecewiseLinear:
    """Ramp coefficients whose sum interpolates the kernel at the nodes i*delta.

    d_i is the slope of segment i minus the slopes already accumulated by the
    earlier ramps, so the first coefficient is the first segment's slope.
    """
    lo, hi = kernel.support
    if support is None:
        support = hi
    if lo != 0.0:
        raise ValueError("piecewise approximation expects a kernel supported from 0")
    n = support / delta
    count = int(round(n))
    if abs(n - count) > 1e-9:
        raise ValueError(f"step {delta} does not divide support length {support}")
    nodes = delta * np.arange(count + 1)
    vals = np.real(kernel(nodes))
    slopes = np.diff(vals) / delta
    d = np.diff(np.concatenate([[0.0], slopes]))
    return PiecewiseLinear(tuple(d), float(delta))


# ---------------------------------------------------------------------------
# exponential reproduction


@dataclass(frozen=True)
class ExpReproCoeffs:
    c: np.ndarray = field(repr=False)
    omega0: float
    lam: float
    residual: float

    @property
    def omegas(self) -> np.ndarray:
        return self.omega0 + self.lam * np.arange(self.c.shape[0])

    @property
    def P(self) -> int:
        return self.c.shape[0] - 1

    @property
    def N(self) -> int:
        return self.c.shape[1]


def exp_repro_coeffs(kernel: Kernel, P: int, omega0: float, lam: float, N: int,
                     grid_points: int = 2048, tol: float = 1e-8) -> ExpReproCoeffs:
    """Fit c_{m,0} by least squares on [0, 1) and extend with c_{m,n} = c_{m,0} e^{j w_m n}."""
    lo, hi = kernel.support
    t = np.arange(grid_points) / grid_points
    shifts = np.arange(math.floor(t[0] - hi), math.ceil(1.0 - lo) + 1)
    # Phi[g, n] = phi(t_g - n)
    Phi = kernel(t[:, None] - shifts[None, :])
    omegas = omega0 + lam * np.arange(P + 1)
    c = np.empty((P + 1, N), dtype=complex)
    worst = 0.0
    for m, w in enumerate(omegas):
        r = Phi @ np.exp(1j * w * shifts)
        target = np.exp(1j * w * t)
        denom = np.vdot(r, r).real
        if denom == 0.0:
            raise ReproductionError(f"kernel shifts vanish on the fitting grid (m={m})")
        c0 = np.vdot(r, target) / denom
        worst = max(worst, float(np.max(np.abs(c0 * r - target))))
        c[m] = c0 * np.exp(1j * w * np.arange(N))
    if worst > tol:
        raise ReproductionError(f"exponential reproduction residual {worst:.3e} exceeds {tol:.1e}")
    return ExpReproCoeffs(c, float(omega0), float(lam), worst)


def emoms_coeffs(P: int, N: int) -> ExpReproCoeffs:
    k = EMOMS(P)
    return exp_repro_coeffs(k, P, k.omega0, k.lam, N)
