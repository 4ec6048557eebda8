"""Exact finite-volume partition functions by exhaustive enumeration.

Everything here is brute force over the full state space of a small box and is
meant as ground truth for the samplers and the variational code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .energy import BoxRegion, Configuration
from .errors import EnumerationLimitError, PreconditionError
from .model import ModelSpec, pair_mark_interaction

DEFAULT_CEILING = 10**8


@dataclass(frozen=True)
class PartitionResult:
    value: float
    log_value: float
    configuration_count: int
    tail_factor_log: float = 0.0
    model_hash: str = ""

    def to_json(self) -> dict:
        return {
            "schema": "boxgas.partition/1",
            "log_z": self.log_value,
            "z": self.value,
            "config_count": self.configuration_count,
            "tail_factor_log": self.tail_factor_log,
            "model_hash": self.model_hash,
        }


@dataclass(frozen=True)
class PinnedMacro:
    """Macroscopic marks ``G_{N_1}, ..., G_{N_A}`` pinned at the origin."""

    sizes: tuple[int, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if any(n < 1 for n in sizes):
            raise PreconditionError("pinned mark sizes must be >= 1")
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise PreconditionError("pinned mark sizes must be non-increasing")
        object.__setattr__(self, "sizes", sizes)

    def configuration(self, d: int) -> Configuration:
        return Configuration((((0,) * d, n), 1) for n in self.sizes)


def _logsumexp(logs: Sequence[float]) -> float:
    if not logs:
        return -math.inf
    top = max(logs)
    if top == -math.inf:
        return top
    return top + math.log(math.fsum(math.exp(x - top) for x in logs))


def _slot_matrix(slots, spec: ModelSpec) -> np.ndarray:
    n = len(slots)
    T = np.zeros((n, n))
    if spec.potential.is_zero:
        return T
    for i, (x, k) in enumerate(slots):
        for j in range(i, n):
            y, l = slots[j]
            T[i, j] = T[j, i] = pair_mark_interaction(x, y, k, l, spec)
    return T


def _canonical_slots(box: BoxRegion, N: int) -> list:
    # sites ascending, mark sizes descending within a site
    return [(x, k) for x in box.sites() for k in range(N, 0, -1) if box.admits(x, k)]


def _count_series(weights: Sequence[int], N: int) -> list[int]:
    """Coefficients of ``prod_j 1/(1 - z^{w_j})`` up to ``z^N``."""
    c = [1] + [0] * N
    for w in weights:
        for n in range(w, N + 1):
            c[n] += c[n - w]
    return c


def canonical_state_count(box: BoxRegion, N: int) -> int:
    """Exact number of admissible configurations with ``N`` particles."""
    return _count_series([k for _, k in _canonical_slots(box, N)], N)[N]


def _check_ceiling(box: BoxRegion, N: int, ceiling: float):
    slots = _canonical_slots(box, N)
    estimate = _count_series([k for _, k in slots], N)[N] * max(1, len(slots))
    if estimate > ceiling:
        raise EnumerationLimitError(estimate, ceiling)
    return slots


def _enumerate_counts(weights: Sequence[int], N: int) -> Iterator[tuple[int, ...]]:
    n_slots = len(weights)
    counts = [0] * n_slots

    def rec(i: int, budget: int):
        if budget == 0:
            yield tuple(counts)
            return
        if i == n_slots:
            return
        w = weights[i]
        for n in range(budget // w, -1, -1):
            counts[i] = n
            yield from rec(i + 1, budget - n * w)
        counts[i] = 0

    yield from rec(0, N)


def enumerate_canonical(box: BoxRegion, N: int, spec: ModelSpec, ceiling: float = DEFAULT_CEILING) -> Iterator[Configuration]:
    """Every Dirichlet-admissible configuration in ``box`` with exactly ``N`` particles, once each."""
    if N < 0:
        raise PreconditionError("N must be >= 0")
    if box.dimension != spec.dimension:
        raise PreconditionError("box dimension does not match the model")
    slots = _check_ceiling(box, N, ceiling)
    for counts in _enumerate_counts([k for _, k in slots], N):
        yield Configuration((slot, n) for slot, n in zip(slots, counts) if n)


def _canonical_log_weights(box: BoxRegion, N: int, spec: ModelSpec, ceiling: float):
    """Log of ``prod q_k^xi / xi! * e^{-Phi}`` for each admissible configuration."""
    slots = _check_ceiling(box, N, ceiling)
    T = _slot_matrix(slots, spec)
    logq = np.array([math.log(spec.q(k)) for _, k in slots])
    logs, configs = [], []
    for counts in _enumerate_counts([k for _, k in slots], N):
        c = np.asarray(counts, dtype=float)
        nz = np.nonzero(c)[0]
        lw = math.fsum(c[nz] * logq[nz]) - math.fsum(math.lgamma(x + 1.0) for x in c[nz])
        if nz.size:
            sub = c[nz]
            lw -= float(sub @ T[np.ix_(nz, nz)] @ sub)
        logs.append(lw)
        configs.append(counts)
    return slots, configs, logs


def _total_q_log(box: BoxRegion, N: int, spec: ModelSpec) -> tuple[float, float]:
    """``(-|box| sum_{k<=N} q_k, -|box| sum_{k>N} q_k)``."""
    vol = box.volume
    return -vol * spec.intensity.partial_sum(N), -vol * spec.intensity.tail_sum(N)


def partition_dirichlet(box: BoxRegion, N: int, spec: ModelSpec, tol: float = 1e-14, ceiling: float = DEFAULT_CEILING) -> PartitionResult:
    """``Z_{N,box,Dir} = E[e^{-Phi} 1{N^ell = N} 1{all particles in box}]``.

    The expectation is under the Poisson field on the box; mark sizes above
    ``N`` can only contribute through their empty-site probability, which is
    returned separately as ``tail_factor_log``.
    """
    if N < 0:
        raise PreconditionError("N must be >= 0")
    _, configs, logs = _canonical_log_weights(box, N, spec, ceiling)
    head, tail = _total_q_log(box, N, spec)
    log_z = _logsumexp(logs) + head + tail
    return PartitionResult(math.exp(log_z), log_z, len(configs), tail, spec.model_hash())


def canonical_law(box: BoxRegion, N: int, spec: ModelSpec, ceiling: float = DEFAULT_CEILING) -> dict[Configuration, float]:
    """The normalised Gibbs law on admissible ``N``-particle configurations."""
    slots, configs, logs = _canonical_log_weights(box, N, spec, ceiling)
    norm = _logsumexp(logs)
    return {
        Configuration((slot, n) for slot, n in zip(slots, counts) if n): math.exp(lw - norm)
        for counts, lw in zip(configs, logs)
    }


def dirichlet_log_probability(box: BoxRegion, spec: ModelSpec) -> float:
    """``log P(no particle leaves the box) = -sum_k q_k #{x: x + G_k not in box}``."""
    vol = box.volume
    terms = [spec.q(k) * (vol - len(box.admissible_sites(k))) for k in range(1, vol + 1)]
    return -math.fsum(terms) - vol * spec.intensity.tail_sum(vol)


def partition_conditional(box: BoxRegion, N: int, spec: ModelSpec, tol: float = 1e-14, ceiling: float = DEFAULT_CEILING) -> PartitionResult:
    """``Z^Dir_{N,box}``: the partition function under the Dirichlet-conditioned reference law."""
    res = partition_dirichlet(box, N, spec, tol, ceiling)
    log_z = res.log_value - dirichlet_log_probability(box, spec)
    return PartitionResult(math.exp(log_z), log_z, res.configuration_count, res.tail_factor_log, res.model_hash)


def free_case_oracle(box: BoxRegion, N: int, spec: ModelSpec) -> float:
    """``Z_{N,box,Dir}`` for ``v = 0`` from a compound-Poisson power series.

    ``exp(-|box| sum_k q_k) [z^N] exp(sum_{k<=N} q_k n_k z^k)`` with ``n_k`` the
    number of admissible sites; coefficients from ``n g_n = sum_j j f_j g_{n-j}``.
    """
    if not spec.potential.is_zero:
        raise PreconditionError("free_case_oracle requires the zero potential")
    if N < 0:
        raise PreconditionError("N must be >= 0")
    f = [0.0] + [spec.q(k) * len(box.admissible_sites(k)) for k in range(1, N + 1)]
    g = [1.0] + [0.0] * N
    for n in range(1, N + 1):
        g[n] = math.fsum(j * f[j] * g[n - j] for j in range(1, n + 1)) / n
    return math.exp(-box.volume * spec.intensity.total()) * g[N]


def _window_counts(m_k: float, vol: int, delta: float) -> list[int]:
    if m_k == 0:
        return [0]
    lo, hi = m_k * vol * (1.0 - delta), m_k * vol * (1.0 + delta)
    top = math.ceil(hi) - 1
    return [n for n in range(0, top + 1) if lo < n < hi]


def pinned_macro_partition(
    box: BoxRegion,
    pinned: PinnedMacro,
    K: int,
    window: tuple[Sequence[float], float],
    spec: ModelSpec,
    tol: float = 1e-14,
    ceiling: float = DEFAULT_CEILING,
) -> PartitionResult:
    """Restricted partition function with macroscopic marks pinned at the origin.

    ``E^{<=K}[e^{-Phi(omega + omega_pinned)} prod_k 1{N^(delta_k) in m_k|box|(1-delta, 1+delta)}]``
    where ``omega`` has points in ``box`` and marks of size at most ``K``.
    """
    if K < 1:
        raise PreconditionError("K must be >= 1")
    m, delta = window
    m = list(m)
    if len(m) != K:
        raise PreconditionError("window needs one target density per mark size 1..K")
    d = spec.dimension
    origin = (0,) * d
    for n in pinned.sizes:
        if not box.admits(origin, n):
            raise PreconditionError(f"pinned mark of size {n} at the origin leaves the box")
    vol = box.volume
    allowed = [_window_counts(float(mk), vol, float(delta)) for mk in m]
    estimate = math.prod(sum(math.comb(n + vol - 1, n) for n in ns) for ns in allowed) * vol * K
    if estimate > ceiling:
        raise EnumerationLimitError(estimate, ceiling)

    sites = box.sites()
    slots = [(x, k) for k in range(1, K + 1) for x in sites]
    T = _slot_matrix(slots, spec)
    pinned_slots = [(origin, n) for n in pinned.sizes]
    field = np.array([math.fsum(pair_mark_interaction(x, o, k, n, spec) for o, n in pinned_slots) for x, k in slots])
    pinned_energy = math.fsum(
        pair_mark_interaction(o1, o2, n1, n2, spec) for o1, n1 in pinned_slots for o2, n2 in pinned_slots
    )
    logq = np.array([math.log(spec.q(k)) for _, k in slots])

    counts = [0] * len(slots)
    logs: list[float] = []

    def fill(k_idx: int):
        if k_idx == K:
            c = np.asarray(counts, dtype=float)
            nz = np.nonzero(c)[0]
            sub = c[nz]
            lw = math.fsum(sub * logq[nz]) - math.fsum(math.lgamma(x + 1.0) for x in sub)
            lw -= float(sub @ T[np.ix_(nz, nz)] @ sub) + 2.0 * float(sub @ field[nz])
            logs.append(lw)
            return
        base = k_idx * vol
        for total in allowed[k_idx]:
            yield_multisets(base, 0, total, k_idx)

    def yield_multisets(base: int, i: int, left: int, k_idx: int):
        if i == vol - 1:
            counts[base + i] = left
            fill(k_idx + 1)
            counts[base + i] = 0
            return
        for n in range(left, -1, -1):
            counts[base + i] = n
            yield_multisets(base, i + 1, left - n, k_idx)
        counts[base + i] = 0

    fill(0)
    head = -vol * spec.intensity.partial_sum(K)
    log_z = _logsumexp(logs) + head - pinned_energy
    return PartitionResult(math.exp(log_z), log_z, len(logs), 0.0, spec.model_hash())


def finite_volume_entropy(m, box: BoxRegion, spec: ModelSpec, per_volume: bool = False) -> float:
    """``H(P^m_box | P_box) = |box| H(m|q)`` for independent Poisson fields."""
    from .varfree import relative_entropy

    h = relative_entropy(m, spec.intensity)
    return h if per_volume else box.volume * h

