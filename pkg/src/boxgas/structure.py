"""Phase-transition structure above a finite critical density.

Input is a convex free-energy curve ``chi`` on ``[0, rho_c]`` together with
``vbar``. From it we build the tangency density ``rho_t``, the convex extension
``chi_bar`` to all densities, the (non-optimal) saturation polygon ``chi_sat``
and the micro/macro split of the density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConsistencyError, PreconditionError

DERIV_STEP = 1e-5
CSV_SCHEMA = "boxgas.structure/1"


class FreeEnergyCurve:
    """``chi`` and ``chi'`` on ``[0, rho_max]``, from callbacks or from samples.

    Sampled curves are interpolated linearly (which keeps convex data convex)
    and differentiated by central differences of step ``1e-5``, one-sided at
    the ends of the domain.
    """

    def __init__(self, chi: Callable[[float], float], dchi: Callable[[float], float] | None, rho_max: float, name: str = ""):
        if rho_max <= 0:
            raise PreconditionError("rho_max must be > 0")
        self._chi = chi
        self._dchi = dchi
        self.rho_max = float(rho_max)
        self.name = name

    @classmethod
    def from_callables(cls, chi, dchi, rho_max: float, name: str = "") -> "FreeEnergyCurve":
        return cls(chi, dchi, rho_max, name)

    @classmethod
    def from_samples(cls, rhos: Sequence[float], chis: Sequence[float], name: str = "samples") -> "FreeEnergyCurve":
        r = np.asarray(rhos, dtype=float)
        c = np.asarray(chis, dtype=float)
        if r.ndim != 1 or r.shape != c.shape or len(r) < 3:
            raise PreconditionError("need at least three (rho, chi) samples")
        if np.any(np.diff(r) <= 0):
            raise PreconditionError("sample densities must be strictly increasing")
        if r[0] > 0:
            raise PreconditionError("samples must start at rho = 0")
        if not np.all(np.isfinite(c)):
            raise PreconditionError("sampled chi must be finite")
        curve = cls(lambda x: float(np.interp(x, r, c)), None, float(r[-1]), name)
        curve.samples = (r, c)
        return curve

    @classmethod
    def from_csv(cls, path) -> "FreeEnergyCurve":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(line for line in fh if not line.startswith("#")):
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    continue  # header
        return cls.from_samples(*zip(*rows), name=str(path))

    def _check(self, rho: float):
        if rho < -1e-12 or rho > self.rho_max + 1e-12:
            raise PreconditionError(f"rho = {rho} outside the curve domain [0, {self.rho_max}]")

    def chi(self, rho: float) -> float:
        self._check(rho)
        return float(self._chi(min(max(rho, 0.0), self.rho_max)))

    __call__ = chi

    def dchi(self, rho: float) -> float:
        self._check(rho)
        rho = min(max(rho, 0.0), self.rho_max)
        if self._dchi is not None:
            return float(self._dchi(rho))
        h = DERIV_STEP
        if rho - h < 0:
            return (self._chi(rho + h) - self._chi(rho)) / h
        if rho + h > self.rho_max:
            return (self._chi(rho) - self._chi(rho - h)) / h
        return (self._chi(rho + h) - self._chi(rho - h)) / (2 * h)

    def convexity_defect(self, step: float = 0.01) -> float:
        """Most negative second difference on a grid of the domain (0 when convex)."""
        grid = np.linspace(0.0, self.rho_max, max(int(round(self.rho_max / step)), 2) + 1)
        vals = np.array([self.chi(x) for x in grid])
        return min(0.0, float(np.min(vals[2:] - 2 * vals[1:-1] + vals[:-2])))


def named_curve(name: str, rho_max: float = 2.0) -> FreeEnergyCurve:
    """Synthetic inputs: ``quadratic`` (rho^2), ``synthetic`` (rho^2 + e^-rho), ``linear:<beta>`` (rho^2 + beta rho)."""
    if name == "quadratic":
        return FreeEnergyCurve(lambda x: x * x, lambda x: 2 * x, rho_max, name)
    if name == "synthetic":
        return FreeEnergyCurve(lambda x: x * x + math.exp(-x), lambda x: 2 * x - math.exp(-x), rho_max, name)
    if name.startswith("linear:"):
        beta = float(name.split(":", 1)[1])
        return FreeEnergyCurve(lambda x: x * x + beta * x, lambda x: 2 * x + beta, rho_max, name)
    raise PreconditionError(f"unknown named curve {name!r}")


# ---------------------------------------------------------------------------
# rho_t


def g_function(curve: FreeEnergyCurve, rho: float, rho_c: float, vbar: float) -> float:
    """``chi(rho-1) + (2 rho - 1) vbar + (rho_c - rho)(chi'(rho-1) + 2 vbar)``."""
    lin = rho_c - rho
    slope = curve.dchi(rho - 1.0) + 2.0 * vbar
    tail = 0.0 if lin == 0 else lin * slope
    return curve.chi(rho - 1.0) + (2.0 * rho - 1.0) * vbar + tail


def consistency_record(curve: FreeEnergyCurve, rho_c: float, vbar: float) -> dict:
    """The derivative window and the end-point checks behind ``rho_t``; nothing is raised here."""
    d = curve.dchi(rho_c)
    left = max(rho_c, 1.0)
    chi_c = curve.chi(rho_c)
    g_left = g_function(curve, left, rho_c, vbar)
    g_right = g_function(curve, rho_c + 1.0, rho_c, vbar)
    return {
        "dchi_rho_c": d,
        "window_lower": (2 * rho_c - 1) * vbar,
        "window_upper": (2 * rho_c + 1) * vbar,
        "window_ok": (2 * rho_c - 1) * vbar < d <= (2 * rho_c + 1) * vbar,
        "g_left": g_left,
        "g_right": g_right,
        "chi_rho_c": chi_c,
        "ends_ok": g_left >= chi_c >= g_right,
    }


def _require_consistent(rec: dict, rho_c: float):
    if not (rec["window_lower"] < rec["dchi_rho_c"]):
        raise ConsistencyError(
            "input not realizable as a model free energy", inequality="(2 rho_c - 1) vbar < chi'(rho_c)")
    if not (rec["dchi_rho_c"] <= rec["window_upper"]):
        raise ConsistencyError(
            "input not realizable as a model free energy", inequality="chi'(rho_c) <= (2 rho_c + 1) vbar")
    if not rec["g_left"] >= rec["chi_rho_c"]:
        name = ("chi(rho_c - 1) + (2 rho_c - 1) vbar >= chi(rho_c)" if rho_c >= 1
                else "g(1) = chi(0) + vbar + (rho_c - 1)(chi'(0) + 2 vbar) >= chi(rho_c)")
        raise ConsistencyError("input not realizable as a model free energy", inequality=name)
    if not rec["chi_rho_c"] >= rec["g_right"]:
        raise ConsistencyError(
            "input not realizable as a model free energy", inequality="chi(rho_c) >= g(rho_c + 1)")


def solve_rho_t(curve: FreeEnergyCurve, rho_c: float, vbar: float, tol: float = 1e-12, scan: int = 2000) -> float:
    """Smallest root of ``g(rho) = chi(rho_c)`` in ``[max(rho_c, 1), rho_c + 1]``.

    A coarse scan locates the first grid point where ``g - chi(rho_c)`` is no
    longer positive, then bisection refines inside that cell.
    """
    if not math.isfinite(rho_c) or rho_c <= 0:
        raise PreconditionError("rho_c must be finite and > 0")
    if curve.rho_max < rho_c - 1e-12:
        raise PreconditionError("curve must be defined on [0, rho_c]")
    _require_consistent(consistency_record(curve, rho_c, vbar), rho_c)
    target = curve.chi(rho_c)

    def h(r):
        return g_function(curve, r, rho_c, vbar) - target

    left, right = max(rho_c, 1.0), rho_c + 1.0
    if abs(h(left)) <= tol:
        return left
    grid = np.linspace(left, right, scan + 1)
    prev = left
    for r in grid[1:]:
        val = h(float(r))
        if abs(val) <= tol:
            return float(r)
        if val < 0:
            lo, hi = prev, float(r)
            break
        prev = float(r)
    else:
        raise ConsistencyError("g(rho) - chi(rho_c) has no sign change", inequality="chi(rho_c) >= g(rho_c + 1)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = h(mid)
        if abs(val) <= tol or mid in (lo, hi):
            return mid
        if val > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# extensions


def _split(rho: float, rho_c: float) -> tuple[float, int]:
    """``rho = s + a`` with ``s`` in ``[rho_c, rho_c + 1)`` and integer ``a >= 0``."""
    a = int(math.floor(rho - rho_c))
    s = rho - a
    if s >= rho_c + 1.0:
        a, s = a + 1, s - 1.0
    return s, a


def extend_chi(curve: FreeEnergyCurve, rho_c: float, rho_t: float, vbar: float) -> Callable[[float], float]:
    """Convex extension ``chi_bar`` of ``chi`` to ``[0, infinity)``."""
    chi_c = curve.chi(rho_c)
    f1_t = curve.chi(rho_t - 1.0) + vbar * (2.0 * rho_t - 1.0)
    width = rho_t - rho_c

    def chi_bar(rho: float) -> float:
        if rho < 0:
            raise PreconditionError("rho must be >= 0")
        if rho <= rho_c:
            return curve.chi(rho)
        s, a = _split(rho, rho_c)
        if s <= rho_t:
            base = chi_c if width == 0 else chi_c + (s - rho_c) * (f1_t - chi_c) / width
            return base + 2.0 * vbar * a * s + vbar * a * a
        b = a + 1
        return curve.chi(s - 1.0) + 2.0 * vbar * (s - 1.0) * b + vbar * b * b

    return chi_bar


def tangency_residual(curve: FreeEnergyCurve, rho_c: float, rho_t: float, vbar: float) -> float:
    """``line slope on [rho_c, rho_t]`` minus ``chi'(rho_t - 1) + 2 vbar``."""
    target = curve.dchi(rho_t - 1.0) + 2.0 * vbar
    if rho_t == rho_c:
        return 0.0
    f1_t = curve.chi(rho_t - 1.0) + vbar * (2.0 * rho_t - 1.0)
    return (f1_t - curve.chi(rho_c)) / (rho_t - rho_c) - target


def saturation_curve(curve: FreeEnergyCurve, rho_c: float, vbar: float) -> Callable[[float], float]:
    """Polygon through ``chi(rho_c) + 2 vbar a rho_c + vbar a^2`` at ``rho_c + a``."""
    chi_c = curve.chi(rho_c)

    def node(a: int) -> float:
        return chi_c + 2.0 * vbar * a * rho_c + vbar * a * a

    def chi_sat(rho: float) -> float:
        if rho < 0:
            raise PreconditionError("rho must be >= 0")
        if rho <= rho_c:
            return curve.chi(rho)
        s, a = _split(rho, rho_c)
        lam = s - rho_c
        return (1.0 - lam) * node(a) + lam * node(a + 1)

    return chi_sat


def mass_curves(rho: float, rho_c: float, rho_t: float) -> tuple[float, float]:
    """Micro and macro densities ``(rho_mi, rho_ma)`` of the minimiser at density ``rho``."""
    if rho < 0:
        raise PreconditionError("rho must be >= 0")
    if rho <= rho_c:
        return rho, 0.0
    s, a = _split(rho, rho_c)
    if s <= rho_t and rho_t > rho_c:
        rho_ma = a + (s - rho_c) / (rho_t - rho_c)
    else:
        rho_ma = float(a) if s <= rho_c else float(a + 1)
    return rho - rho_ma, rho_ma


# ---------------------------------------------------------------------------
# brute-force check of the convex-hull representation


def _atom_grid(a: int, rho_c: float, step: float) -> np.ndarray:
    lo = 0.0 if a == 0 else max(rho_c - 1.0, 0.0)
    n = max(int(round((rho_c - lo) / step)), 1)
    return np.linspace(lo, rho_c, n + 1)


def representation_check(curve: FreeEnergyCurve, rho_c: float, vbar: float, rho: float, grid_step: float,
                         rho_t: float | None = None) -> tuple[float, float, float]:
    """Minimise ``sum_a psi(a) [chi(rho_a) + 2 vbar a rho_a + vbar a^2]`` over psi with at most two atoms.

    Returns ``(brute_min, chi_bar(rho), brute_min - chi_bar(rho))``.
    """
    if rho < 0:
        raise PreconditionError("rho must be >= 0")
    if rho_t is None:
        rho_t = solve_rho_t(curve, rho_c, vbar)
    top = math.ceil(rho) + 2
    chi_vec = np.vectorize(curve.chi)
    pts, vals = [], []
    for a in range(top + 1):
        r = _atom_grid(a, rho_c, grid_step)
        pts.append(r + a)
        vals.append(chi_vec(r) + 2.0 * vbar * a * r + vbar * a * a)
    best = math.inf
    # single atoms: exact when rho - a is admissible
    for a in range(top + 1):
        x = rho - a
        lo = 0.0 if a == 0 else max(rho_c - 1.0, 0.0)
        if lo <= x <= rho_c:
            best = min(best, curve.chi(x) + 2.0 * vbar * a * x + vbar * a * a)
    for a in range(top + 1):
        pa, va = pts[a], vals[a]
        left = pa <= rho
        if not left.any():
            continue
        pa, va = pa[left], va[left]
        for b in range(a, top + 1):
            pb, vb_ = pts[b], vals[b]
            right = pb > rho
            if not right.any():
                continue
            pb, vb_ = pb[right], vb_[right]
            P, Q = pa[:, None], pb[None, :]
            lam = (Q - rho) / (Q - P)
            best = min(best, float(np.min(lam * va[:, None] + (1.0 - lam) * vb_[None, :])))
    ref = extend_chi(curve, rho_c, rho_t, vbar)(rho)
    return best, ref, best - ref


# ---------------------------------------------------------------------------
# report


@dataclass
class StructureReport:
    curve: FreeEnergyCurve
    rho_c: float
    rho_t: float
    vbar: float
    consistency: dict = field(default_factory=dict)

    def __post_init__(self):
        self.chi_bar = extend_chi(self.curve, self.rho_c, self.rho_t, self.vbar)
        self.chi_sat = saturation_curve(self.curve, self.rho_c, self.vbar)

    def mass(self, rho: float) -> tuple[float, float]:
        return mass_curves(rho, self.rho_c, self.rho_t)

    def to_json(self) -> dict:
        return {
            "schema": "boxgas.structure-report/1",
            "rho_c": self.rho_c,
            "rho_t": self.rho_t,
            "vbar": self.vbar,
            "tangency_residual": tangency_residual(self.curve, self.rho_c, self.rho_t, self.vbar),
            "consistency": self.consistency,
        }


def analyze(curve: FreeEnergyCurve, rho_c: float, vbar: float, tol: float = 1e-12) -> StructureReport:
    rho_t = solve_rho_t(curve, rho_c, vbar, tol)
    rec = consistency_record(curve, rho_c, vbar)
    # C^1 gluing at rho_c holds for the true model; synthetic inputs usually kink there
    rec["c1_gap"] = curve.dchi(rho_c) - (curve.dchi(rho_t - 1.0) + 2.0 * vbar)
    return StructureReport(curve, rho_c, rho_t, vbar, rec)


def _write_csv(path, header: Sequence[str], rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={CSV_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def write_curves_csv(report: StructureReport, path, grid: Sequence[float]):
    _write_csv(path, ("rho", "chi_bar", "chi_sat"), ((r, report.chi_bar(r), report.chi_sat(r)) for r in grid))


def write_mass_csv(report: StructureReport, path, grid: Sequence[float]):
    _write_csv(path, ("rho", "rho_mi", "rho_ma"), ((r, *report.mass(r)) for r in grid))
