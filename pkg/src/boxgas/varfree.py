"""Variational quantities: relative entropy, free gas, bounds, product ansatz and
the Euler-Lagrange fixed point restricted to Poisson product fields.

Every expectation over a stationary field is taken under the Poisson product
field ``P^m`` with intensities ``m``; records produced here carry
``approximation = "poisson-restricted"`` to say so.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import ConvergenceError, PreconditionError
from .model import IntensitySequence, ModelSpec, interaction_field, is_infinite, self_interactions

APPROXIMATION_TAG = "poisson-restricted"
BRACKET = 64.0
MAX_BISECT = 400


@dataclass(frozen=True, eq=False)
class MassSequence:
    """Finite-support micro masses ``m_1..m_K``."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise PreconditionError("masses must be finite and >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, K: int) -> "MassSequence":
        return cls(np.zeros(K))

    @property
    def K(self) -> int:
        return len(self.values)

    @property
    def rho_mi(self) -> float:
        return math.fsum(np.arange(1, self.K + 1) * self.values)

    def __getitem__(self, k: int) -> float:
        return float(self.values[k - 1]) if 1 <= k <= self.K else 0.0

    def to_list(self) -> list[float]:
        return [float(x) for x in self.values]


@dataclass(frozen=True)
class MacroDistribution:
    """Overlap distribution ``psi`` of the macroscopic marks."""

    weights: Mapping[int, float]

    def __post_init__(self):
        w = {int(a): float(p) for a, p in dict(self.weights).items() if p != 0}
        if not w or any(a < 0 for a in w) or any(p < 0 for p in w.values()):
            raise PreconditionError("psi needs nonnegative weights on a >= 0")
        if abs(math.fsum(w.values()) - 1.0) > 1e-12:
            raise PreconditionError("psi weights must sum to 1")
        object.__setattr__(self, "weights", dict(sorted(w.items())))

    @classmethod
    def delta(cls, a: int = 0) -> "MacroDistribution":
        return cls({a: 1.0})

    @property
    def rho_ma(self) -> float:
        return math.fsum(a * p for a, p in self.weights.items())

    def log_env(self, ks: np.ndarray, vb: float, sign: float = -1.0) -> np.ndarray:
        """``log sum_a psi(a) exp(sign 2 vbar a k)`` for each ``k``."""
        a = np.array(list(self.weights), dtype=float)
        p = np.array(list(self.weights.values()))
        return logsumexp(sign * 2.0 * vb * np.outer(ks, a), b=p, axis=1)


def _masses(m) -> np.ndarray:
    return m.values if isinstance(m, MassSequence) else MassSequence(m).values


# ---------------------------------------------------------------------------
# entropy and free gas


def relative_entropy(m, q: IntensitySequence) -> float:
    """``H(m|q) = sum_k (q_k - m_k + m_k log(m_k/q_k))`` with the exact q-tail beyond the support."""
    vals = _masses(m)
    K = len(vals)
    qs = q.array(K)
    if np.any((qs == 0) & (vals > 0)):
        return math.inf
    terms = qs - vals + xlogy(vals, vals) - xlogy(vals, qs)
    return math.fsum(terms) + q.tail_sum(K)


@dataclass
class FreeGasSolution:
    rho: float
    alpha: float
    saturated: bool
    m: MassSequence
    chi: float
    chi0: float
    rho_c: float
    tail_mass: float

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "alpha": self.alpha if math.isfinite(self.alpha) else None,
            "saturated": self.saturated,
            "chi": self.chi,
            "chi_at_zero": self.chi0,
            "rho_c": None if is_infinite(self.rho_c) else self.rho_c,
            "tail_mass": self.tail_mass,
            "m": self.m.to_list(),
        }


def _first_moment(q: IntensitySequence, alpha: float) -> float:
    val = q.exp_moment(alpha, 1)
    return math.inf if is_infinite(val) else float(val)


def _truncate(q: IntensitySequence, alpha: float, total: float, tol: float, kmax: int) -> tuple[np.ndarray, float]:
    """Masses ``q_k e^{alpha k}`` up to the first K whose discarded first moment is below tol."""
    vals, acc = [], []
    for k in range(1, kmax + 1):
        mk = q.value(k) * math.exp(alpha * k) if alpha > -math.inf else 0.0
        vals.append(mk)
        acc.append(k * mk)
        tail = total - math.fsum(acc)
        if tail <= tol * max(total, 1.0):
            break
    return np.array(vals), max(total - math.fsum(acc), 0.0)


def free_gas_chi(rho: float, q: IntensitySequence, tol: float = 1e-12, kmax: int = 100_000) -> FreeGasSolution:
    """Non-interacting free energy ``chi^(v=0)(rho)`` and its multiplier ``alpha``."""
    if rho < 0 or not math.isfinite(rho):
        raise PreconditionError("rho must be finite and >= 0")
    chi0 = q.total()
    rho_c = q.first_moment()
    rc = math.inf if is_infinite(rho_c) else float(rho_c)
    if rho == 0:
        return FreeGasSolution(0.0, -math.inf, False, MassSequence.zeros(0), chi0, chi0, rho_c, 0.0)
    if rho >= rc:
        vals, tail = _truncate(q, 0.0, rc, tol, kmax)
        return FreeGasSolution(rho, 0.0, rho > rc, MassSequence(vals), 0.0, chi0, rho_c, tail)

    lo = -BRACKET
    while _first_moment(q, lo) > rho:
        lo *= 2.0
        if lo < -1e6:
            raise ConvergenceError("could not bracket alpha from below")
    hi = 0.0
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _first_moment(q, mid) > rho:
            hi = mid
        else:
            lo = mid
    alpha = lo if abs(_first_moment(q, lo) - rho) <= abs(_first_moment(q, hi) - rho) else hi
    got = _first_moment(q, alpha)
    if abs(got - rho) > max(tol, 1e-12) * rho * 1e3:
        raise ConvergenceError(f"density constraint reached only to {abs(got - rho) / rho:.3e} relative")
    chi = (chi0 - float(q.exp_moment(alpha, 0))) + alpha * rho
    vals, tail = _truncate(q, alpha, got, tol, kmax)
    return FreeGasSolution(rho, alpha, False, MassSequence(vals), max(chi, 0.0), chi0, rho_c, tail)


def chi_bounds(rho: float, spec: ModelSpec, tol: float = 1e-12) -> tuple[float, float, bool]:
    """``(chi0 + vbar rho^2, chi0 + vbar(rho^2 + rho), 2 v(0) >= vbar)``."""
    chi = free_gas_chi(rho, spec.intensity, tol).chi
    vb = spec.vbar
    v0 = spec.potential((0,) * spec.dimension)
    return chi + vb * rho * rho, chi + vb * (rho * rho + rho), 2.0 * v0 >= vb


# ---------------------------------------------------------------------------
# product ansatz


def product_ansatz_phi(m, a: int, spec: ModelSpec) -> float:
    """Upper bound ``H(m|q) + vbar rho^2 + sum m_k t_k + 2 vbar a rho + vbar a^2`` on ``phi(m, delta_a)``."""
    vals = _masses(m)
    rho = math.fsum(np.arange(1, len(vals) + 1) * vals)
    vb = spec.vbar
    energy = math.fsum(vals * self_interactions(len(vals), spec)) if len(vals) else 0.0
    return relative_entropy(vals, spec.intensity) + vb * rho * rho + energy + 2.0 * vb * a * rho + vb * a * a


def _solve_multiplier(base: np.ndarray, target: float) -> float:
    """``alpha`` with ``sum_k k exp(base_k + alpha k) = target`` (bisection in log space)."""
    ks = np.arange(1, len(base) + 1, dtype=float)
    logk = np.log(ks) + base
    log_target = math.log(target)

    def g(alpha):
        return logsumexp(logk + alpha * ks) - log_target

    lo, hi = -BRACKET, 0.0
    while g(lo) > 0:
        lo *= 2.0
    while g(hi) < 0:
        hi = 2.0 * hi + 1.0
        if hi > 1e6:
            raise ConvergenceError("could not bracket the multiplier from above")
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return lo if abs(g(lo)) <= abs(g(hi)) else hi


@dataclass
class ProductAnsatzMin:
    rho: float
    m: MassSequence
    value: float
    beta: float
    slope: float


def product_ansatz_min(rho: float, spec: ModelSpec, K: int = 60, a: int = 0) -> ProductAnsatzMin:
    """Minimise ``product_ansatz_phi(., a)`` over ``m`` supported on ``1..K`` at density ``rho``.

    The minimiser is ``m_k = q_k exp(beta k - t_k)``; ``slope`` is the
    derivative of the minimum in ``rho``.
    """
    if rho < 0:
        raise PreconditionError("rho must be >= 0")
    if K < 1:
        raise PreconditionError("K must be >= 1")
    vb = spec.vbar
    if rho == 0:
        m = MassSequence.zeros(K)
        return ProductAnsatzMin(0.0, m, product_ansatz_phi(m, a, spec), -math.inf, -math.inf)
    base = np.log(spec.intensity.array(K)) - self_interactions(K, spec)
    beta = _solve_multiplier(base, rho)
    m = MassSequence(np.exp(base + beta * np.arange(1, K + 1)))
    return ProductAnsatzMin(rho, m, product_ansatz_phi(m, a, spec), beta, beta + 2.0 * vb * (rho + a))


# ---------------------------------------------------------------------------
# Poisson Laplace functionals


@lru_cache(maxsize=64)
def _laplace_matrix(spec: ModelSpec, K: int, sign: float) -> np.ndarray:
    """``S[k, l] = sum_x (exp(sign T_{0,x}(G_k, G_l)) - 1)`` for ``k, l <= K``."""
    S = np.zeros((K, K))
    for k in range(1, K + 1):
        for l in range(k, K + 1):
            _, vals = interaction_field(k, l, spec)
            S[k - 1, l - 1] = S[l - 1, k - 1] = math.fsum(np.expm1(sign * vals))
    S.setflags(write=False)
    return S


def _check_sign(sign):
    if sign not in (2, -2, 2.0, -2.0):
        raise PreconditionError("sign must be +2 or -2")
    return float(sign)


def log_poisson_exp_phi(m, k: int, spec: ModelSpec, sign: float) -> float:
    """``log E[exp(sign Phi^(k))]`` under the Poisson product field with intensities ``m``."""
    sign = _check_sign(sign)
    vals = _masses(m)
    if k < 1:
        raise PreconditionError("k must be >= 1")
    terms = []
    for l, ml in enumerate(vals, start=1):
        if ml:
            _, tv = interaction_field(k, l, spec)
            terms.append(ml * math.fsum(np.expm1(sign * tv)))
    return math.fsum(terms)


def poisson_exp_phi(m, k: int, spec: ModelSpec, sign: float) -> float:
    """``E[exp(sign Phi^(k))]`` under ``P^m``; use the log form when this would overflow."""
    log_val = log_poisson_exp_phi(m, k, spec, sign)
    if log_val > 700.0:
        raise OverflowError(f"exp of {log_val:.1f} overflows; call log_poisson_exp_phi instead")
    return math.exp(log_val)


# ---------------------------------------------------------------------------
# Euler-Lagrange fixed point


@dataclass
class ELSolution:
    rho: float
    m: MassSequence
    alpha: float
    residual: float
    iterations: int
    history: list[float] = field(default_factory=list)
    damping: float = 0.5
    tail_mass: float = 0.0
    approximation: str = APPROXIMATION_TAG

    def __iter__(self):
        return iter((self.m, self.alpha, self.residual))

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "alpha": self.alpha if math.isfinite(self.alpha) else None,
            "m": self.m.to_list(),
            "residual": self.residual,
            "iterations": self.iterations,
            "tail_mass": self.tail_mass if math.isfinite(self.tail_mass) else None,
            "approximation_tag": self.approximation,
        }


def _el_tail(q: IntensitySequence, alpha: float, K: int) -> float:
    """Discarded mass ``sum_{k>K} k q_k e^{alpha k}`` (infinite when alpha >= 0 and the series diverges)."""
    if alpha == -math.inf:
        return 0.0
    if alpha > 0:
        return math.inf
    total = q.exp_moment(alpha, 1)
    if is_infinite(total):
        return math.inf
    head = math.fsum(k * q.value(k) * math.exp(alpha * k) for k in range(1, K + 1))
    return max(float(total) - head, 0.0)


def el_fixed_point(
    rho: float,
    psi: MacroDistribution,
    K: int,
    spec: ModelSpec,
    tol: float = 1e-10,
    damping: float = 0.5,
    max_iter: int = 10_000,
) -> ELSolution:
    """Damped iteration of ``m_k = q_k e^{alpha k - t_k} sum_a psi(a) e^{-2 vbar a k} E_m[e^{-2 Phi^(k)}]``.

    ``alpha`` is re-solved every step so that ``sum k m_k = rho - rho_ma``. The
    update is ``m <- damping m + (1 - damping) RHS``; after three consecutive
    residual increases the damping moves halfway towards 1.
    """
    if not 0.0 <= damping < 1.0:
        raise PreconditionError("damping must be in [0, 1)")
    if K < 1:
        raise PreconditionError("K must be >= 1")
    rho_mi = rho - psi.rho_ma
    if rho_mi < -1e-15:
        raise PreconditionError(f"rho_mi = rho - rho_ma = {rho_mi} < 0")
    if rho_mi <= 0:
        return ELSolution(rho, MassSequence.zeros(K), -math.inf, 0.0, 0, [], damping)

    ks = np.arange(1, K + 1, dtype=float)
    fixed = np.log(spec.intensity.array(K)) - self_interactions(K, spec) + psi.log_env(ks, spec.vbar)
    S = None if spec.potential.is_zero else _laplace_matrix(spec, K, -2.0)

    def rhs(m):
        base = fixed if S is None else fixed + S @ m
        alpha = _solve_multiplier(base, rho_mi)
        return np.exp(base + alpha * ks), alpha

    m, _ = rhs(np.zeros(K))
    history: list[float] = []
    rises = 0
    for it in range(1, max_iter + 1):
        new, alpha = rhs(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            res = float(np.max(np.abs(m - new) / m))
        history.append(res)
        if res < tol:
            return ELSolution(rho, MassSequence(m), alpha, res, it, history, damping, _el_tail(spec.intensity, alpha, K))
        rises = rises + 1 if len(history) > 1 and res > history[-2] else 0
        if rises >= 3:
            damping = 0.5 * (1.0 + damping)
            rises = 0
        m = damping * m + (1.0 - damping) * new
    raise ConvergenceError(f"EL iteration did not reach residual {tol} in {max_iter} steps", history=history)


def el_functional(m, psi: MacroDistribution, spec: ModelSpec) -> float:
    """Potential whose stationary points at fixed density are the EL fixed points.

    ``F(m) = H(m|q) + sum_k m_k (t_k - log env_k) - 1/2 sum_{k,l} m_k m_l S_kl`` with
    ``S_kl = sum_x (e^{-2 T_{0,x}(G_k,G_l)} - 1)`` and ``env_k = sum_a psi(a) e^{-2 vbar a k}``.
    """
    vals = _masses(m)
    K = len(vals)
    ks = np.arange(1, K + 1, dtype=float)
    lin = self_interactions(K, spec) - psi.log_env(ks, spec.vbar)
    quad = 0.0 if spec.potential.is_zero else 0.5 * float(vals @ _laplace_matrix(spec, K, -2.0) @ vals)
    return relative_entropy(vals, spec.intensity) + math.fsum(vals * lin) - quad


@dataclass
class AltDerivative:
    k: int
    alternative: float
    primary: float

    @property
    def discrepancy(self) -> float:
        return self.alternative - self.primary


def alt_derivative_poisson(m, psi: MacroDistribution, k: int, spec: ModelSpec) -> AltDerivative:
    """Both derivative formulas of the micro free energy at mark ``k`` under ``P^m``.

    primary:     log(m_k/q_k) + t_k - log sum_a psi(a) e^{-2 vbar a k} E[e^{-2 Phi^(k)}]
    alternative: log(m_k/q_k) + t_k + log sum_a psi(a) e^{+2 vbar a k} E[e^{+2 Phi^(k)}]
    (the second uses ``E[N_0 e^{2 Phi^(k)}] = m_k e^{2 t_k} E[e^{2 Phi^(k)}]``).
    """
    vals = _masses(m)
    mk = vals[k - 1] if 1 <= k <= len(vals) else 0.0
    if mk <= 0:
        raise PreconditionError(f"m_{k} must be > 0")
    tk = float(self_interactions(k, spec)[-1])
    head = math.log(mk / spec.q(k)) + tk
    kk = np.array([float(k)])
    primary = head - (float(psi.log_env(kk, spec.vbar, -1.0)[0]) + log_poisson_exp_phi(vals, k, spec, -2))
    alternative = head + float(psi.log_env(kk, spec.vbar, +1.0)[0]) + log_poisson_exp_phi(vals, k, spec, +2)
    return AltDerivative(k, alternative, primary)


def free_energy_record(rho: float, spec: ModelSpec, K: int = 60, psi: MacroDistribution | None = None,
                       tol: float = 1e-10, el: bool = True) -> dict:
    """Everything the free-energy command reports at one density."""
    fg = free_gas_chi(rho, spec.intensity)
    lower, upper, valid = chi_bounds(rho, spec)
    pam = product_ansatz_min(rho, spec, K)
    out = {
        "rho": rho,
        "chi_free": fg.chi,
        "alpha": fg.alpha if math.isfinite(fg.alpha) else None,
        "saturated": fg.saturated,
        "bounds": {"lower": lower, "upper": upper, "lower_valid": valid},
        "product_ansatz_min": {"value": pam.value, "beta": pam.beta if math.isfinite(pam.beta) else None,
                               "slope": pam.slope if math.isfinite(pam.slope) else None},
        "approximation_tag": APPROXIMATION_TAG,
    }
    if el:
        out["el_solution"] = el_fixed_point(rho, psi or MacroDistribution.delta(0), K, spec, tol).to_json()
    return out


def second_differences(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v[2:] - 2.0 * v[1:-1] + v[:-2]
