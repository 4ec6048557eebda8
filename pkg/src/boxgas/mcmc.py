r"""Canonical Metropolis-Hastings sampler for the marked-box gas.

Target on configurations with ``N`` particles, all marks inside the box::

    pi(omega)  propto  prod_{(x,k)} q_k^{xi} / xi!  *  exp(-Phi(omega))

Moves (``n`` = number of points, ``a_k`` = number of admissible sites for a
``k``-mark, ``w_t, w_s, w_m`` the move weights, ``w_s = w_m``):

translate
    pick a point uniformly, move it to a uniform admissible site for its mark.
    The proposal is symmetric after the factorial bookkeeping, so
    ``A = min(1, exp(-dPhi))``.

split
    pick a point ``(x, k)`` uniformly (null move if ``k = 1``), ``k1`` uniform
    in ``1..k-1``, keep ``k1`` at ``x`` and put ``k2 = k - k1`` at a uniform
    admissible site ``y``. Forward probability
    ``Q = w_s xi_(x,k)/n * 1/(k-1) * (1/a_{k2} + [y = x, k1 != k2] / a_{k1})``
    (two choices of ``k1`` give the same result when ``y = x``).

merge
    pick an ordered pair of distinct points uniformly (``n(n-1)`` pairs) and
    merge them into one mark of the summed size at the first point's site,
    rejected if that mark leaves the box. Forward probability
    ``Q = w_m c / (n(n-1))`` with ``c = xi_u1 xi_u2 (2 if same site else 1)``
    for distinct slots and ``c = xi_u (xi_u - 1)`` for equal slots.

Split and merge are accepted with
``min(1, pi(omega') Q(omega' -> omega) / (pi(omega) Q(omega -> omega')))``
where the ``pi`` ratio carries ``q_{k1} q_{k2} / q_k``, the multiplicity
factorials and ``exp(-dPhi)``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .energy import BoxRegion, Configuration
from .errors import PreconditionError
from .model import ModelSpec, mark_points, pair_mark_interaction

CSV_SCHEMA = "boxgas.observables/1"
UNIFORMS_PER_MOVE = 5
ROW_BUDGET = 1 << 18


@dataclass(frozen=True)
class SamplerConfig:
    sweeps: int = 10_000
    burnin: int = 1_000
    seed: int = 0
    move_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    max_mark: int | None = None
    k_macro: int | None = None
    init: str = "greedy"
    thin: int = 1
    snapshot_every: int = 0
    census: bool = False
    keep_rows: bool = False

    def __post_init__(self):
        w = tuple(float(x) for x in self.move_weights)
        object.__setattr__(self, "move_weights", w)
        if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise PreconditionError("move weights must be three nonnegative numbers summing to 1")
        if w[1] != w[2]:
            raise PreconditionError("split and merge weights must be equal")
        if self.sweeps < 0 or self.burnin < 0 or self.thin < 1 or self.snapshot_every < 0:
            raise PreconditionError("sweeps/burnin must be >= 0 and thin >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise PreconditionError("seed must be an unsigned 64-bit integer")
        if self.init not in ("greedy", "random"):
            raise PreconditionError("init must be 'greedy' or 'random'")


# ---------------------------------------------------------------------------
# dense tables


@dataclass
class Tables:
    box: BoxRegion
    N: int
    K: int
    sites: list
    T: np.ndarray  # (slots, slots) pair interaction
    logq: np.ndarray  # (K,)
    adm: np.ndarray  # (K, S) admissible site indices, padded with -1
    adm_count: np.ndarray  # (K,)
    adm_ok: np.ndarray  # (S, K) bool
    cover: np.ndarray  # (slots, K) covered site indices, padded with -1
    site_index: dict

    @property
    def S(self) -> int:
        return len(self.sites)

    def slot(self, s: int, k: int) -> int:
        return s * self.K + (k - 1)

    def encode(self, omega: Configuration) -> np.ndarray:
        xi = np.zeros(self.S * self.K, dtype=np.int64)
        for (x, k), n in omega.items():
            if k > self.K or not self.box.admits(x, k):
                raise PreconditionError(f"point {(x, k)} not admissible for the sampler")
            xi[self.slot(self.site_index[x], k)] += n
        return xi

    def decode(self, xi: np.ndarray) -> Configuration:
        return Configuration({(self.sites[i // self.K], i % self.K + 1): int(c) for i, c in enumerate(xi) if c})


def build_tables(box: BoxRegion, N: int, spec: ModelSpec, max_mark: int | None = None) -> Tables:
    if box.dimension != spec.dimension:
        raise PreconditionError("box and model dimensions differ")
    if N < 0:
        raise PreconditionError("N must be >= 0")
    cap = N if max_mark is None else min(max_mark, N)
    sites = box.sites()
    S = len(sites)
    site_index = {x: i for i, x in enumerate(sites)}
    K = max(cap, 1)
    while K > 1 and not box.admissible_sites(K):
        K -= 1
    adm = -np.ones((K, S), dtype=np.int64)
    adm_count = np.zeros(K, dtype=np.int64)
    adm_ok = np.zeros((S, K), dtype=np.bool_)
    cover = -np.ones((S * K, K), dtype=np.int64)
    for k in range(1, K + 1):
        ok = [i for i, x in enumerate(sites) if box.admits(x, k)]
        adm[k - 1, : len(ok)] = ok
        adm_count[k - 1] = len(ok)
        for i in ok:
            adm_ok[i, k - 1] = True
            x = sites[i]
            for j, p in enumerate(mark_points(k, box.dimension)):
                cover[i * K + k - 1, j] = site_index[tuple(a + b for a, b in zip(x, p))]
    n_slots = S * K
    T = np.zeros((n_slots, n_slots))
    if not spec.potential.is_zero:
        for a in range(n_slots):
            sa, ka = divmod(a, K)
            if not adm_ok[sa, ka]:
                continue
            for b in range(a, n_slots):
                sb, kb = divmod(b, K)
                if adm_ok[sb, kb]:
                    T[a, b] = T[b, a] = pair_mark_interaction(sites[sa], sites[sb], ka + 1, kb + 1, spec)
    logq = np.log(spec.intensity.array(K))
    return Tables(box, N, K, sites, T, logq, adm, adm_count, adm_ok, cover, site_index)


# ---------------------------------------------------------------------------
# jitted pieces shared by the chain and the exact transition enumerator


@njit(cache=True, nogil=True)
def _log_pi_delta(xi, logq, K, slots, deltas, m):
    """Change of ``sum_slots (xi log q - log xi!)`` under the listed count changes."""
    total = 0.0
    for c in range(m):
        u = slots[c]
        seen = False
        for j in range(c):
            if slots[j] == u:
                seen = True
        if seen:
            continue
        d = 0
        for j in range(c, m):
            if slots[j] == u:
                d += deltas[j]
        old = xi[u]
        new = old + d
        lq = logq[u % K]
        total += (new - old) * lq - math.lgamma(new + 1.0) + math.lgamma(old + 1.0)
    return total


@njit(cache=True, nogil=True)
def _delta_phi(T, P, n, slots, deltas, m):
    """``Phi(after) - Phi(before)`` for sequential single-point additions/removals."""
    d = 0.0
    for c in range(m):
        u = slots[c]
        h = 0.0
        for i in range(n):
            h += T[u, P[i]]
        for j in range(c):
            h += deltas[j] * T[u, slots[j]]
        if deltas[c] > 0:
            d += 2.0 * h + T[u, u]
        else:
            d += -2.0 * h + T[u, u]
    return d


@njit(cache=True, nogil=True)
def _log_split_q(w_s, xi_u, n, k, k1, k2, same_site, adm_count):
    inv = 1.0 / adm_count[k2 - 1]
    if same_site and k1 != k2:
        inv += 1.0 / adm_count[k1 - 1]
    return math.log(w_s) + math.log(xi_u) - math.log(n) - math.log(k - 1.0) + math.log(inv)


@njit(cache=True, nogil=True)
def _log_merge_q(w_m, xi1, xi2, same_slot, same_site, n):
    if same_slot:
        c = xi1 * (xi1 - 1.0)
    else:
        c = xi1 * xi2 * (2.0 if same_site else 1.0)
    return math.log(w_m) + math.log(c) - math.log(n * (n - 1.0))


@njit(cache=True, nogil=True)
def _split_log_ratio(xi, P, n, T, logq, K, adm_count, w_s, u, k1, y, slots, deltas):
    """Log Hastings ratio of splitting one point of slot ``u`` into ``k1`` here and ``k - k1`` at site ``y``."""
    s = u // K
    k = u % K + 1
    k2 = k - k1
    u1 = s * K + k1 - 1
    u2 = y * K + k2 - 1
    slots[0] = u
    slots[1] = u1
    slots[2] = u2
    deltas[0] = -1
    deltas[1] = 1
    deltas[2] = 1
    lr = _log_pi_delta(xi, logq, K, slots, deltas, 3) - _delta_phi(T, P, n, slots, deltas, 3)
    lr -= _log_split_q(w_s, xi[u], n, k, k1, k2, y == s, adm_count)
    # reverse merge counted in the proposed state
    xi1 = xi[u1] + 1 + (1 if u2 == u1 else 0)
    xi2 = xi[u2] + 1 + (1 if u2 == u1 else 0)
    lr += _log_merge_q(w_s, xi1, xi2, u1 == u2, y == s, n + 1.0)
    return lr


@njit(cache=True, nogil=True)
def _merge_log_ratio(xi, P, n, T, logq, K, adm_count, w_m, u1, u2, slots, deltas):
    """Log Hastings ratio of merging a point of ``u1`` with one of ``u2`` at ``u1``'s site."""
    s1 = u1 // K
    s2 = u2 // K
    k1 = u1 % K + 1
    k2 = u2 % K + 1
    k = k1 + k2
    w = s1 * K + k - 1
    slots[0] = u1
    slots[1] = u2
    slots[2] = w
    deltas[0] = -1
    deltas[1] = -1
    deltas[2] = 1
    lr = _log_pi_delta(xi, logq, K, slots, deltas, 3) - _delta_phi(T, P, n, slots, deltas, 3)
    lr -= _log_merge_q(w_m, xi[u1], xi[u2], u1 == u2, s1 == s2, n)
    lr += _log_split_q(w_m, xi[w] + 1.0, n - 1.0, k, k1, k2, s1 == s2, adm_count)
    return lr


@njit(cache=True, nogil=True)
def _translate_log_ratio(P, n, T, u, v, slots, deltas):
    if u == v:
        return 0.0
    slots[0] = u
    slots[1] = v
    deltas[0] = -1
    deltas[1] = 1
    return -_delta_phi(T, P, n, slots, deltas, 2)


@njit(cache=True, nogil=True)
def _remove_point(xi, P, n, idx):
    xi[P[idx]] -= 1
    P[idx] = P[n - 1]
    return n - 1


@njit(cache=True, nogil=True)
def _remove_slot(xi, P, n, u):
    for i in range(n):
        if P[i] == u:
            return _remove_point(xi, P, n, i)
    return n


@njit(cache=True, nogil=True)
def _add_point(xi, P, n, u):
    xi[u] += 1
    P[n] = u
    return n + 1


@njit(cache=True, nogil=True)
def _energy(T, P, n):
    e = 0.0
    for i in range(n):
        for j in range(n):
            e += T[P[i], P[j]]
    return e


@njit(cache=True, nogil=True)
def _move(xi, P, n, u0, u1, u2, u3, u4, T, logq, K, adm, adm_count, adm_ok, w_t, w_s, stats, slots, deltas):
    """One proposal/acceptance driven by five uniforms; returns the new point count."""
    if n == 0:
        return n
    if u0 < w_t:
        stats[0] += 1
        i = int(u1 * n)
        u = P[i]
        k = u % K + 1
        y = adm[k - 1, int(u3 * adm_count[k - 1])]
        v = y * K + k - 1
        lr = _translate_log_ratio(P, n, T, u, v, slots, deltas)
        if lr >= 0.0 or u4 < math.exp(lr):
            stats[1] += 1
            if v != u:
                n = _remove_point(xi, P, n, i)
                n = _add_point(xi, P, n, v)
    elif u0 < w_t + w_s:
        stats[2] += 1
        i = int(u1 * n)
        u = P[i]
        k = u % K + 1
        if k < 2:
            return n
        k1 = 1 + int(u2 * (k - 1))
        k2 = k - k1
        y = adm[k2 - 1, int(u3 * adm_count[k2 - 1])]
        lr = _split_log_ratio(xi, P, n, T, logq, K, adm_count, w_s, u, k1, y, slots, deltas)
        if lr >= 0.0 or u4 < math.exp(lr):
            stats[3] += 1
            s = u // K
            n = _remove_point(xi, P, n, i)
            n = _add_point(xi, P, n, s * K + k1 - 1)
            n = _add_point(xi, P, n, y * K + k2 - 1)
    else:
        stats[4] += 1
        if n < 2:
            return n
        i = int(u1 * n)
        j = int(u2 * (n - 1))
        if j >= i:
            j += 1
        a = P[i]
        b = P[j]
        s1 = a // K
        k = a % K + b % K + 2
        if k > K or not adm_ok[s1, k - 1]:
            stats[6] += 1
            return n
        lr = _merge_log_ratio(xi, P, n, T, logq, K, adm_count, w_s, a, b, slots, deltas)
        if lr >= 0.0 or u4 < math.exp(lr):
            stats[5] += 1
            # remove the higher index first so the swap-with-last keeps the other valid
            hi, lo = (i, j) if i > j else (j, i)
            n = _remove_point(xi, P, n, hi)
            n = _remove_point(xi, P, n, lo)
            n = _add_point(xi, P, n, s1 * K + k - 1)
    return n


@njit(cache=True, nogil=True)
def _chain_kernel(xi, P, n, U, row, sweeps, moves, T, logq, K, adm, adm_count, adm_ok, cover, k_macro,
                  w_t, w_s, census_base, out_energy, out_counts, out_cover, out_code, stats):
    """Run ``sweeps`` sweeps of ``moves`` moves each; returns ``(n, row)``."""
    slots = np.zeros(3, dtype=np.int64)
    deltas = np.zeros(3, dtype=np.int64)
    S = adm_ok.shape[0]
    covered = np.zeros(S, dtype=np.int64)
    for sw in range(sweeps):
        for _ in range(moves):
            n = _move(xi, P, n, U[row, 0], U[row, 1], U[row, 2], U[row, 3], U[row, 4],
                      T, logq, K, adm, adm_count, adm_ok, w_t, w_s, stats, slots, deltas)
            row += 1
        out_energy[sw] = _energy(T, P, n)
        for kk in range(K):
            out_counts[sw, kk] = 0
        covered[:] = 0
        for i in range(n):
            u = P[i]
            k = u % K + 1
            out_counts[sw, k - 1] += 1
            if k > k_macro:
                for j in range(k):
                    covered[cover[u, j]] += 1
        for a in range(out_cover.shape[1]):
            out_cover[sw, a] = 0
        for s in range(S):
            out_cover[sw, covered[s]] += 1
        if census_base > 0:
            code = 0
            mult = 1
            for u in range(xi.shape[0]):
                code += xi[u] * mult
                mult *= census_base
            out_code[sw] = code
    return n, row


# ---------------------------------------------------------------------------
# observables


@dataclass
class ObservableAccumulator:
    """Running sums of per-sweep observables; ``merge`` is associative."""

    volume: int
    K: int
    samples: int = 0
    count_sums: np.ndarray = None  # (K,) integer sums of N^(delta_k)
    energy_sum: float = 0.0
    cover_sums: np.ndarray = None  # integer site counts per overlap number

    def __post_init__(self):
        if self.count_sums is None:
            self.count_sums = np.zeros(self.K, dtype=np.int64)
        if self.cover_sums is None:
            self.cover_sums = np.zeros(1, dtype=np.int64)

    def add_block(self, energies: np.ndarray, counts: np.ndarray, cover: np.ndarray):
        if len(energies) == 0:
            return
        self.samples += len(energies)
        self.count_sums = self.count_sums + counts.sum(axis=0)
        self.energy_sum = math.fsum((self.energy_sum, math.fsum(energies)))
        c = cover.sum(axis=0)
        self.cover_sums = _pad_add(self.cover_sums, c)

    def merge(self, other: "ObservableAccumulator") -> "ObservableAccumulator":
        if (self.volume, self.K) != (other.volume, other.K):
            raise PreconditionError("accumulators describe different systems")
        return ObservableAccumulator(
            self.volume, self.K, self.samples + other.samples, self.count_sums + other.count_sums,
            math.fsum((self.energy_sum, other.energy_sum)), _pad_add(self.cover_sums, other.cover_sums))

    @property
    def mark_density(self) -> np.ndarray:
        return self.count_sums / (max(self.samples, 1) * self.volume)

    @property
    def energy_density(self) -> float:
        return self.energy_sum / (max(self.samples, 1) * self.volume)

    @property
    def coverage_profile(self) -> np.ndarray:
        return np.trim_zeros(self.cover_sums, "b") / (max(self.samples, 1) * self.volume)


def _pad_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = max(len(a), len(b))
    out = np.zeros(n, dtype=np.int64)
    out[: len(a)] += a
    out[: len(b)] += b
    return out


def coverage_profile(omega: Configuration, box: BoxRegion, k_macro: int) -> dict[int, float]:
    """Fraction of box sites covered by exactly ``a`` marks of size above ``k_macro``."""
    covered = {x: 0 for x in box.sites()}
    for (x, k), n in omega.items():
        if k <= k_macro:
            continue
        for p in mark_points(k, box.dimension):
            y = tuple(a + b for a, b in zip(x, p))
            if y in covered:
                covered[y] += n
    hist: dict[int, int] = {}
    for c in covered.values():
        hist[c] = hist.get(c, 0) + 1
    return {a: hist[a] / box.volume for a in sorted(hist)}


# ---------------------------------------------------------------------------
# initial states


def greedy_state(box: BoxRegion, N: int, K: int) -> Configuration:
    """Largest admissible marks first (at the first site admitting them), then smaller ones."""
    entries: dict = {}
    left = N
    while left > 0:
        k = min(left, K)
        while k >= 1 and not box.admissible_sites(k):
            k -= 1
        if k < 1:
            raise PreconditionError(f"cannot place {N} particles in the box under the boundary condition")
        x = box.admissible_sites(k)[0]
        entries[(x, k)] = entries.get((x, k), 0) + 1
        left -= k
    return Configuration(entries)


def random_state(box: BoxRegion, N: int, K: int, rng: np.random.Generator) -> Configuration:
    entries: dict = {}
    left = N
    while left > 0:
        options = [k for k in range(1, min(left, K) + 1) if box.admissible_sites(k)]
        if not options:
            raise PreconditionError(f"cannot place {N} particles in the box under the boundary condition")
        k = options[int(rng.integers(len(options)))]
        sites = box.admissible_sites(k)
        x = sites[int(rng.integers(len(sites)))]
        entries[(x, k)] = entries.get((x, k), 0) + 1
        left -= k
    return Configuration(entries)


# ---------------------------------------------------------------------------
# chains


@dataclass
class ChainResult:
    accumulator: ObservableAccumulator
    final: Configuration
    stats: dict
    census: dict | None = None
    snapshots: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    tables: Tables | None = None

    def empirical_law(self) -> dict[Configuration, float]:
        if self.census is None:
            raise PreconditionError("chain was run without census")
        total = sum(self.census.values())
        base = self.tables.N + 1
        out = {}
        for code, c in self.census.items():
            digits = np.zeros(self.tables.S * self.tables.K, dtype=np.int64)
            code = int(code)
            for i in range(len(digits)):
                code, digits[i] = divmod(code, base)
            out[self.tables.decode(digits)] = c / total
        return out


def _initial_arrays(tab: Tables, omega: Configuration):
    xi = tab.encode(omega)
    P = np.zeros(max(tab.N, 1), dtype=np.int64)
    n = 0
    for u in np.nonzero(xi)[0]:
        for _ in range(xi[u]):
            P[n] = u
            n += 1
    return xi, P, n


def run_chain(cfg: SamplerConfig, box: BoxRegion, N: int, spec: ModelSpec,
              seed_seq: np.random.SeedSequence | None = None, initial: Configuration | None = None) -> ChainResult:
    """Burn in, then record observables after every sweep of ``max(N, 1)`` moves.

    The move count per sweep is fixed: letting it follow the current number of
    points would make the recorded sweep-end states biased away from ``pi``.
    With ``keep_rows`` every ``thin``-th sweep is kept for CSV output.
    """
    tab = build_tables(box, N, spec, cfg.max_mark)
    rng = np.random.Generator(np.random.Philox(seed_seq if seed_seq is not None else np.random.SeedSequence(cfg.seed)))
    if initial is None:
        initial = greedy_state(box, N, tab.K) if cfg.init == "greedy" else random_state(box, N, tab.K, rng)
    if initial.particle_number != N:
        raise PreconditionError("initial state has the wrong particle number")
    xi, P, n = _initial_arrays(tab, initial)
    k_macro = cfg.k_macro if cfg.k_macro is not None else max(box.volume // 2, 1)
    w_t, w_s, _ = cfg.move_weights
    census_ok = cfg.census and (N + 1) ** (tab.S * tab.K) < 2**62
    if cfg.census and not census_ok:
        raise PreconditionError("state space too large for a census")
    census_base = N + 1 if census_ok else 0
    max_cover = N // (k_macro + 1) + 1 if N > k_macro else 1

    acc = ObservableAccumulator(box.volume, tab.K)
    stats = np.zeros(7, dtype=np.int64)
    census: dict = {} if census_ok else None
    snapshots, rows = [], []
    per_move = max(N, 1)
    block = max(1, ROW_BUDGET // per_move)
    U = np.empty((0, UNIFORMS_PER_MOVE))
    row = 0
    done = 0
    total = cfg.burnin + cfg.sweeps
    ks = np.arange(1, tab.K + 1)
    while done < total:
        todo = min(block, total - done)
        if cfg.burnin > done:
            todo = min(todo, cfg.burnin - done)
        elif cfg.snapshot_every:
            since = done - cfg.burnin
            todo = min(todo, cfg.snapshot_every - since % cfg.snapshot_every)
        need = todo * per_move
        left = U[row:]
        U = np.concatenate([left, rng.random((max(need - len(left), 0), UNIFORMS_PER_MOVE))])
        row = 0
        energy = np.zeros(todo)
        counts = np.zeros((todo, tab.K), dtype=np.int64)
        cover = np.zeros((todo, max_cover), dtype=np.int64)
        codes = np.zeros(todo, dtype=np.int64)
        n, row = _chain_kernel(xi, P, n, U, row, todo, per_move, tab.T, tab.logq, tab.K, tab.adm, tab.adm_count,
                               tab.adm_ok, tab.cover, k_macro, w_t, w_s, census_base, energy, counts, cover, codes, stats)
        if np.any(counts @ ks != N):
            raise AssertionError("particle number not conserved")
        recording = done >= cfg.burnin
        done += todo
        if not recording:
            continue
        acc.add_block(energy, counts, cover)
        if census is not None:
            vals, cts = np.unique(codes, return_counts=True)
            for v, c in zip(vals.tolist(), cts.tolist()):
                census[v] = census.get(v, 0) + c
        if cfg.keep_rows:
            sweeps = np.arange(done - todo, done) + 1 - cfg.burnin
            sel = sweeps % cfg.thin == 0
            rows.append((sweeps[sel], energy[sel] / box.volume, counts[sel] / box.volume, cover[sel] / box.volume))
        if cfg.snapshot_every and (done - cfg.burnin) % cfg.snapshot_every == 0:
            snapshots.append((done - cfg.burnin, tab.decode(xi)))
    names = ("translate_proposed", "translate_accepted", "split_proposed", "split_accepted",
             "merge_proposed", "merge_accepted", "merge_inadmissible")
    return ChainResult(acc, tab.decode(xi), dict(zip(names, stats.tolist())), census, snapshots, rows, tab)


def run_chains(cfg: SamplerConfig, box: BoxRegion, N: int, spec: ModelSpec, chains: int, workers: int = 1) -> list[ChainResult]:
    """Independent chains on spawned seed streams; results are independent of ``workers``."""
    streams = np.random.SeedSequence(cfg.seed).spawn(chains)
    build_tables(box, N, spec, cfg.max_mark)  # validate once before fanning out
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        return list(pool.map(lambda ss: run_chain(cfg, box, N, spec, ss), streams))


def mh_step(state: Configuration, cfg: SamplerConfig, box: BoxRegion, N: int, spec: ModelSpec,
            rng: np.random.Generator) -> Configuration:
    """Exactly one move from ``state`` using five uniforms from ``rng``."""
    tab = build_tables(box, N, spec, cfg.max_mark)
    if state.particle_number != N:
        raise PreconditionError("state has the wrong particle number")
    xi, P, n = _initial_arrays(tab, state)
    u = rng.random(UNIFORMS_PER_MOVE)
    w_t, w_s, _ = cfg.move_weights
    stats = np.zeros(7, dtype=np.int64)
    slots = np.zeros(3, dtype=np.int64)
    deltas = np.zeros(3, dtype=np.int64)
    _move(xi, P, n, *u, tab.T, tab.logq, tab.K, tab.adm, tab.adm_count, tab.adm_ok, w_t, w_s, stats, slots, deltas)
    return tab.decode(xi)


# ---------------------------------------------------------------------------
# exact transition matrix


def transition_probabilities(box: BoxRegion, N: int, spec: ModelSpec, cfg: SamplerConfig | None = None,
                             states: Sequence[Configuration] | None = None) -> dict:
    """``P(omega -> omega')`` of one move, by summing over every proposal path.

    Acceptance probabilities come from the same jitted ratio functions the
    chain uses; the proposal probabilities are counted path by path here, so
    a wrong proposal density in the ratios shows up as broken detailed balance.
    """
    from .exact import enumerate_canonical

    cfg = cfg or SamplerConfig()
    tab = build_tables(box, N, spec, cfg.max_mark)
    w_t, w_s, w_m = cfg.move_weights
    states = list(states if states is not None else enumerate_canonical(box, N, spec))
    slots = np.zeros(3, dtype=np.int64)
    deltas = np.zeros(3, dtype=np.int64)
    K = tab.K
    out: dict = {}

    def bump(a, b, p):
        out[(a, b)] = out.get((a, b), 0.0) + p

    for omega in states:
        xi, P, n = _initial_arrays(tab, omega)
        if n == 0:
            bump(omega, omega, 1.0)
            continue
        for i in range(n):
            u = int(P[i])
            s, k = divmod(u, K)
            k += 1
            # translate
            for y in tab.adm[k - 1, : tab.adm_count[k - 1]]:
                p = w_t / n / tab.adm_count[k - 1]
                v = int(y) * K + k - 1
                acc = min(1.0, math.exp(_translate_log_ratio(P, n, tab.T, u, v, slots, deltas)))
                new = _apply(tab, xi, [(u, -1), (v, 1)])
                bump(omega, new, p * acc)
                bump(omega, omega, p * (1 - acc))
            # split
            if k < 2:
                bump(omega, omega, w_s / n)
                continue
            for k1 in range(1, k):
                k2 = k - k1
                for y in tab.adm[k2 - 1, : tab.adm_count[k2 - 1]]:
                    p = w_s / n / (k - 1) / tab.adm_count[k2 - 1]
                    lr = _split_log_ratio(xi, P, n, tab.T, tab.logq, K, tab.adm_count, w_s, u, k1, int(y), slots, deltas)
                    acc = min(1.0, math.exp(lr))
                    new = _apply(tab, xi, [(u, -1), (s * K + k1 - 1, 1), (int(y) * K + k2 - 1, 1)])
                    bump(omega, new, p * acc)
                    bump(omega, omega, p * (1 - acc))
        # merge
        if n < 2:
            bump(omega, omega, w_m)
            continue
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                p = w_m / (n * (n - 1))
                a, b = int(P[i]), int(P[j])
                s1 = a // K
                k = a % K + b % K + 2
                if k > K or not tab.adm_ok[s1, k - 1]:
                    bump(omega, omega, p)
                    continue
                lr = _merge_log_ratio(xi, P, n, tab.T, tab.logq, K, tab.adm_count, w_m, a, b, slots, deltas)
                acc = min(1.0, math.exp(lr))
                new = _apply(tab, xi, [(a, -1), (b, -1), (s1 * K + k - 1, 1)])
                bump(omega, new, p * acc)
                bump(omega, omega, p * (1 - acc))
    return out


def _apply(tab: Tables, xi: np.ndarray, changes) -> Configuration:
    new = xi.copy()
    for u, d in changes:
        new[u] += d
    return tab.decode(new)


# ---------------------------------------------------------------------------
# output


def observables_csv(result: ChainResult) -> str:
    """Rows ``sweep, energy_density, m_1.., psi_0..`` preceded by a schema comment."""
    K = result.tables.K
    width = max((blk[3].shape[1] for blk in result.rows), default=1)
    buf = io.StringIO()
    buf.write(f"# schema={CSV_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep", "energy_density", *(f"m_{k}" for k in range(1, K + 1)), *(f"psi_{a}" for a in range(width))])
    for sweeps, e, m, psi in result.rows:
        for i in range(len(sweeps)):
            cov = list(psi[i]) + [0.0] * (width - psi.shape[1])
            w.writerow([int(sweeps[i]), repr(float(e[i])), *(repr(float(x)) for x in m[i]), *(repr(float(x)) for x in cov)])
    return buf.getvalue()
