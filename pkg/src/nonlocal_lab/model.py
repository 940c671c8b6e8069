"""Model data: kernel coefficients, the nonlinearity, forcing exponents.

Class membership of kernel coefficients and nonlinearities is certified by
deterministic low-discrepancy sampling; the sampling lattice is part of
every report so a verdict can be reproduced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, InadmissibleExponents, NonFiniteValue

KINDS = ("constant", "separable-product", "translation-invariant", "tabulated", "callback")


@dataclass(frozen=True)
class ModelParams:
    n: int
    s: float
    lam: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.n}")
        if not (0 < self.s < 1):
            raise ConfigurationError(f"s must lie in (0, 1), got {self.s}")
        if not self.lam >= 1:
            raise ConfigurationError(f"lambda must be >= 1, got {self.lam}")


@dataclass(frozen=True)
class KernelCoefficient:
    """A symmetric coefficient ``A(x, y, t)``.

    ``evaluator`` is vectorised: ``x`` and ``y`` are arrays of shape
    ``(..., n)`` and the result has shape ``(...)``.
    """

    kind: str
    evaluator: Callable
    claimed_class: str = "L0"
    time_dependent: bool = False
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown kernel kind {self.kind!r}")
        if self.claimed_class not in ("L0", "L1"):
            raise ConfigurationError(f"claimed class must be L0 or L1, got {self.claimed_class!r}")

    def __call__(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
            return np.full(shape, float(self.params["value"]))
        return np.asarray(self.evaluator(x, y, t), dtype=float)

    @property
    def is_constant(self):
        return self.kind == "constant"


def constant_kernel(value=1.0):
    return KernelCoefficient("constant", None, "L1", name="constant", params={"value": float(value)})


def translation_invariant_kernel(a, time_dependent=False, name="translation-invariant"):
    """``A(x, y, t) = a(x - y, t)``; ``a`` must be even in its first argument."""
    return KernelCoefficient(
        "translation-invariant", lambda x, y, t: a(x - y, t), "L1", time_dependent, name
    )


def separable_product_kernel(k1, k2, claimed_class="L0", time_dependent=False, name="product"):
    return KernelCoefficient(
        "separable-product", lambda x, y, t: k1(x, y, t) * k2(x, y, t), claimed_class, time_dependent, name
    )


def callback_kernel(fn, claimed_class="L0", time_dependent=False, name="callback"):
    return KernelCoefficient("callback", fn, claimed_class, time_dependent, name)


def tabulated_kernel(table, lower, width, default=1.0, name="tabulated"):
    """Piecewise-constant symmetric coefficient on a 1-D cell partition.

    The first spatial coordinate of ``x`` and ``y`` selects the cell;
    outside the partition the coefficient equals ``default``.
    """
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise ConfigurationError("table must be square")
    table = 0.5 * (table + table.T)
    m = table.shape[0]

    def evaluate(x, y, t):
        ix = np.floor((x[..., 0] - lower) / width).astype(int)
        iy = np.floor((y[..., 0] - lower) / width).astype(int)
        inside = (ix >= 0) & (ix < m) & (iy >= 0) & (iy < m)
        out = np.full(np.broadcast_shapes(ix.shape, iy.shape), float(default))
        ixb, iyb = np.broadcast_arrays(ix, iy)
        out[inside] = table[ixb[inside], iyb[inside]]
        return out

    return KernelCoefficient("tabulated", evaluate, "L0", False, name, {"cells": m})


def rough_symmetric_table(m, seed):
    """Symmetric table with i.i.d. entries uniform in [-1, 1]."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1.0, 1.0, size=(m, m))
    return np.triu(t) + np.triu(t, 1).T


def perturbed_kernel(base, delta, noise_table, lower, width):
    """``base + delta * noise`` with a tabulated symmetric noise in [-1, 1]."""
    noise = tabulated_kernel(noise_table, lower, width, default=0.0)

    def evaluate(x, y, t):
        return base(x, y, t) + delta * noise(x, y, t)

    return KernelCoefficient(
        "callback", evaluate, "L0", base.time_dependent, f"{base.name}+{delta:g}*noise", {"delta": delta}
    )


def _first(x):
    return x[..., 0]


def kernel_preset(name, **params):
    """Named kernels for scenario configs.

    ``constant``; ``product`` (continuous factor near the diagonal times a
    rough translation-invariant factor); ``jump`` (continuous part plus a rough
    part switched on for ``|x - y| >= eps``); ``holder`` (Lipschitz in all
    variables); ``rough`` (piecewise-constant symmetric table).
    """
    if name == "constant":
        return constant_kernel(params.get("value", 1.0))
    if name == "product":
        amp = params.get("amplitude", 0.2)
        freq = params.get("frequency", 7.0)

        def k21(x, y, t):
            return 1.0 + amp * np.cos(_first(x) + _first(y))

        def k22(x, y, t):
            z = np.linalg.norm(x - y, axis=-1)
            return 1.0 + amp * np.where(np.floor(freq * z) % 2 == 0, 1.0, -1.0)

        return separable_product_kernel(k21, k22, name="product")
    if name == "jump":
        eps = params.get("eps", 0.5)
        amp = params.get("amplitude", 0.25)
        seed = int(params.get("seed", 0))
        lower = params.get("lower", -4.0)
        cells = int(params.get("cells", 32))
        width = params.get("width", 0.25)
        rough = tabulated_kernel(0.5 + amp * rough_symmetric_table(cells, seed), lower, width, default=0.5)

        def evaluate(x, y, t):
            z = np.linalg.norm(x - y, axis=-1)
            cont = 0.5 + amp * np.cos(_first(x)) * np.cos(_first(y))
            return cont + np.where(z >= eps, rough(x, y, t), 0.5)

        return callback_kernel(evaluate, name="jump")
    if name == "holder":
        amp = params.get("amplitude", 0.25)

        def evaluate(x, y, t):
            return 1.0 + amp * 0.5 * (np.sin(_first(x)) + np.sin(_first(y))) * np.cos(t)

        return callback_kernel(evaluate, time_dependent=True, name="holder")
    if name == "rough":
        amp = params.get("amplitude", 0.3)
        seed = int(params.get("seed", 0))
        lower = params.get("lower", -4.0)
        cells = int(params.get("cells", 64))
        width = params.get("width", 0.125)
        return tabulated_kernel(1.0 + amp * rough_symmetric_table(cells, seed), lower, width, name="rough")
    raise ConfigurationError(f"unknown kernel preset {name!r}")


@dataclass(frozen=True)
class KernelReport:
    symmetry_defect: float
    a_min: float
    a_max: float
    in_L0: bool
    l1_defect: float | None
    in_L1: bool | None
    passed: bool
    sample_budget: int
    lattice: str


def _halton(dim, count, seed):
    # unscrambled Halton: deterministic, seed only skips a prefix
    sampler = qmc.Halton(d=dim, scramble=False)
    if seed:
        sampler.fast_forward(int(seed))
    return sampler.random(count)


def _check_finite(values, what, samples):
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.flatnonzero(bad.ravel())[0])
        raise NonFiniteValue(f"{what} returned a non-finite value at sample {i}", sample=samples[i], index=i)


def validate_kernel(A, params, sample_budget, domain=None, times=(0.0, 1.0), seed=0, tol=1e-12):
    """Sampled certificate of membership in the ellipticity class.

    ``domain`` is a sequence of per-axis ``(lo, hi)`` bounds for both
    arguments (default ``[-1, 1]^n``).
    """
    if sample_budget < 1:
        raise ConfigurationError("sample_budget must be >= 1")
    n = params.n
    if domain is None:
        domain = [(-1.0, 1.0)] * n
    lo = np.array([d[0] for d in domain], dtype=float)
    hi = np.array([d[1] for d in domain], dtype=float)
    pts = _halton(2 * n + 1, sample_budget, seed)
    x = lo + (hi - lo) * pts[:, :n]
    y = lo + (hi - lo) * pts[:, n : 2 * n]
    t = times[0] + (times[1] - times[0]) * pts[:, 2 * n]
    samples = np.concatenate([x, y, t[:, None]], axis=1)
    if A.time_dependent:
        axy = np.array([A(x[k], y[k], t[k]) for k in range(sample_budget)])
        ayx = np.array([A(y[k], x[k], t[k]) for k in range(sample_budget)])
    else:
        axy = A(x, y, times[0])
        ayx = A(y, x, times[0])
    _check_finite(axy, "kernel", samples)
    _check_finite(ayx, "kernel", samples)
    both = np.concatenate([axy, ayx])
    sym = float(np.max(np.abs(axy - ayx)))
    a_min, a_max = float(both.min()), float(both.max())
    lam = params.lam
    in_l0 = sym <= tol and a_min >= 1.0 / lam - tol and a_max <= lam + tol
    l1_defect = in_l1 = None
    if A.claimed_class == "L1":
        shifts = (pts[:, ::-1][:, :n] - 0.5) * 0.5 * (hi - lo)
        xs, ys = x + shifts, y + shifts
        inside = np.all((xs >= lo) & (xs <= hi) & (ys >= lo) & (ys <= hi), axis=1)
        if A.time_dependent:
            shifted = np.array([A(xs[k], ys[k], t[k]) for k in range(sample_budget)])
        else:
            shifted = A(xs, ys, times[0])
        _check_finite(shifted, "kernel", samples)
        diff = np.abs(shifted - axy)[inside]
        l1_defect = float(diff.max()) if diff.size else 0.0
        in_l1 = l1_defect <= tol
    passed = in_l0 and (in_l1 is None or in_l1)
    lattice = f"halton(d={2 * n + 1}, skip={seed}) on {list(map(tuple, domain))} x {tuple(times)}"
    return KernelReport(sym, a_min, a_max, in_l0, l1_defect, in_l1, passed, sample_budget, lattice)


@dataclass(frozen=True)
class Nonlinearity:
    phi: Callable
    lam: float = 1.0
    name: str = ""
    is_identity: bool = False

    def __call__(self, xi):
        if self.is_identity:
            return np.asarray(xi, dtype=float)
        return np.asarray(self.phi(np.asarray(xi, dtype=float)), dtype=float)

    def secant(self, xi, eps=1e-7):
        """``Phi(xi) / xi`` with a central difference at ``xi = 0``."""
        xi = np.asarray(xi, dtype=float)
        if self.is_identity:
            return np.ones_like(xi)
        small = np.abs(xi) < eps
        safe = np.where(small, 1.0, xi)
        out = self(safe) / safe
        if np.any(small):
            d0 = (self(np.array(eps)) - self(np.array(-eps))) / (2 * eps)
            out = np.where(small, d0, out)
        return out


def identity_nonlinearity(lam=1.0):
    return Nonlinearity(lambda t: t, lam, "identity", is_identity=True)


def sine_nonlinearity(amplitude=0.5, lam=2.0):
    return Nonlinearity(lambda t: t + amplitude * np.sin(t), lam, f"sine({amplitude:g})")


def nonlinearity_preset(name, **params):
    if name == "identity":
        return identity_nonlinearity(params.get("lam", 1.0))
    if name in ("sine", "sine-perturbed"):
        return sine_nonlinearity(params.get("amplitude", 0.5), params.get("lam", 2.0))
    raise ConfigurationError(f"unknown nonlinearity preset {name!r}")


@dataclass(frozen=True)
class NonlinearityReport:
    phi_at_zero: float
    min_monotone_quotient: float
    max_lipschitz_quotient: float
    passed: bool
    sample_budget: int
    interval: tuple


def validate_nonlinearity(phi, lam, sample_budget, interval=(-10.0, 10.0), seed=0, tol=1e-12):
    if sample_budget < 1:
        raise ConfigurationError("sample_budget must be >= 1")
    pts = _halton(2, sample_budget + 1, seed)[1:]
    a = interval[0] + (interval[1] - interval[0]) * pts
    xi, xi2 = a[:, 0], a[:, 1]
    keep = np.abs(xi - xi2) > 1e-9
    xi, xi2 = xi[keep], xi2[keep]
    p1, p2 = phi(xi), phi(xi2)
    _check_finite(p1, "nonlinearity", xi)
    _check_finite(p2, "nonlinearity", xi2)
    p0 = float(phi(np.array([0.0]))[0])
    if not math.isfinite(p0):
        raise NonFiniteValue("nonlinearity is not finite at 0", sample=0.0)
    quot = (p1 - p2) / (xi - xi2)
    q_min = float(quot.min())
    q_max = float(np.abs(quot).max())
    passed = abs(p0) <= tol and q_min >= 1.0 / lam - tol and q_max <= lam + tol
    return NonlinearityReport(p0, q_min, q_max, passed, sample_budget, tuple(interval))


def conjugate(p):
    """Hölder conjugate on the extended reals."""
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def _inv(p):
    return 0.0 if math.isinf(p) else 1.0 / p


def scaling_index(q, r, params):
    """``n / (2 q s) + 1 / r``."""
    return params.n / (2 * params.s) * _inv(q) + _inv(r)


def existence_admissible(q, r, params):
    return scaling_index(q, r, params) <= 1 + params.n / (4 * params.s)


def boundedness_admissible(q, r, params):
    return scaling_index(q, r, params) < 1


@dataclass(frozen=True)
class DerivedExponents:
    kappa: float
    gamma: float
    q_hat: float
    r_hat: float
    q_conj: float
    r_conj: float
    holder_cap: float
    scaling_index: float
    identity_residual: float


def derive_exponents(q, r, params):
    """kappa, gamma = 2 n kappa, (q_hat, r_hat) and the Hölder cap for (q, r)."""
    if not (q >= 1 and r >= 1):
        raise InadmissibleExponents(f"need q, r >= 1, got q={q}, r={r}", "q, r >= 1")
    n, s = params.n, params.s
    idx = scaling_index(q, r, params)
    if not idx < 1:
        raise InadmissibleExponents(
            f"n/(2qs) + 1/r = {idx:.6g} is not < 1 (boundedness condition)", "n/(2qs) + 1/r < 1"
        )
    kappa = 2 * s / n * (1.0 - idx)
    qc, rc = conjugate(q), conjugate(r)
    q_hat = 2 * (1 + kappa) * qc
    r_hat = 2 * (1 + kappa) * rc
    resid = n / (2 * s) * _inv(q_hat) + _inv(r_hat) - n / (4 * s)
    cap = min(2 * s - (n * _inv(q) + 2 * s * _inv(r)), 1.0)
    return DerivedExponents(kappa, 2 * n * kappa, q_hat, r_hat, qc, rc, cap, idx, resid)


@dataclass(frozen=True)
class ForcingSpec:
    """Forcing term with its integrability exponents.

    ``f`` is ``None`` (zero), a float (constant), a callable
    ``f(points, t) -> values`` or a :class:`~nonlocal_lab.field.Field`.
    """

    f: object = None
    q: float = math.inf
    r: float = math.inf

    def __post_init__(self):
        if not (self.q >= 1 and self.r >= 1):
            raise ConfigurationError(f"need q, r >= 1, got q={self.q}, r={self.r}")

    def derived(self, params):
        return derive_exponents(self.q, self.r, params)

    def existence_admissible(self, params):
        return existence_admissible(self.q, self.r, params)

    def boundedness_admissible(self, params):
        return boundedness_admissible(self.q, self.r, params)

    def sample(self, points, t):
        """Values of f at ``points`` (shape ``(N, n)``) and time ``t``."""
        points = np.asarray(points, dtype=float)
        if self.f is None:
            return np.zeros(points.shape[0])
        if isinstance(self.f, (int, float)):
            return np.full(points.shape[0], float(self.f))
        if hasattr(self.f, "values_at_time"):
            return self.f.values_at_time(t).ravel()
        return np.asarray(self.f(points, t), dtype=float).reshape(points.shape[0])

    def scaled(self, factor):
        f = self.f
        if f is None:
            return self
        if isinstance(f, (int, float)):
            return ForcingSpec(factor * f, self.q, self.r)
        if hasattr(f, "values_at_time"):
            return ForcingSpec(f.scaled(factor), self.q, self.r)
        return ForcingSpec(lambda p, t: factor * f(p, t), self.q, self.r)
