"""Model definition: lattice marks, interaction potential and reference intensities.

A model is the triple ``(d, v, q)``: the lattice dimension, a symmetric
nonnegative potential with finite support on ``Z^d`` and a summable sequence of
Poisson intensities ``q_k`` for the points carrying the ``k``-site mark ``G_k``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import mpmath
import numpy as np
from scipy.special import zeta

from .errors import PreconditionError

Site = tuple[int, ...]


class _Infinite:
    """Tag for a divergent series; deliberately not a float."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __bool__(self):
        return True


INFINITE = _Infinite()


def is_infinite(value) -> bool:
    return value is INFINITE


def as_site(x, d: int | None = None) -> Site:
    """Normalise an int or integer sequence to a site tuple."""
    if isinstance(x, (int, np.integer)):
        site = (int(x),)
    else:
        site = tuple(int(c) for c in x)
    if d is not None and len(site) != d:
        raise PreconditionError(f"site {site} does not have dimension {d}")
    return site


# ---------------------------------------------------------------------------
# marks


@lru_cache(maxsize=None)
def _shell(d: int, L: int) -> tuple[Site, ...]:
    # product() over a sorted range is already lexicographic, negatives first
    return tuple(p for p in itertools.product(range(-L, L + 1), repeat=d) if max(map(abs, p), default=0) == L)


class MarkFamily:
    """The deterministic marks ``G_1 ⊂ G_2 ⊂ ...`` in dimension ``d``.

    ``G_k`` is the first ``k`` sites of ``Z^d`` listed shell by shell in the
    sup-norm, each shell in lexicographic order.
    """

    _registry: dict[int, "MarkFamily"] = {}

    def __new__(cls, dimension: int):
        if dimension < 1:
            raise PreconditionError("dimension must be >= 1")
        inst = cls._registry.get(dimension)
        if inst is None:
            inst = super().__new__(cls)
            inst.dimension = dimension
            inst._sites = []
            inst._next_shell = 0
            cls._registry[dimension] = inst
        return inst

    def _grow(self, k: int):
        while len(self._sites) < k:
            self._sites.extend(_shell(self.dimension, self._next_shell))
            self._next_shell += 1

    def mark_points(self, k: int) -> tuple[Site, ...]:
        if k < 1:
            raise PreconditionError("mark size must be >= 1")
        self._grow(k)
        return tuple(self._sites[:k])

    def inner_radius(self, k: int) -> int:
        """Largest ``L`` with ``[-L, L]^d ⊆ G_k``."""
        return _full_shells(k, self.dimension) - 1

    def outer_radius(self, k: int) -> int:
        """Sup-norm radius of ``G_k``."""
        return mark_radius(self.dimension, k)


def _full_shells(k: int, d: int) -> int:
    """Number of complete shells contained in the first ``k`` sites."""
    n = 0
    while (2 * n + 1) ** d <= k:
        n += 1
    return n


def mark_points(k: int, d: int = 1) -> tuple[Site, ...]:
    return MarkFamily(d).mark_points(k)


@lru_cache(maxsize=None)
def _mark_set(d: int, k: int) -> frozenset:
    return frozenset(mark_points(k, d))


@lru_cache(maxsize=None)
def mark_radius(d: int, k: int) -> int:
    return max((max(map(abs, p)) for p in mark_points(k, d)), default=0)


# ---------------------------------------------------------------------------
# potential


@dataclass(frozen=True)
class Potential:
    """Symmetric finitely supported potential ``v: Z^d -> [0, inf)``.

    Missing mirror images are filled in; conflicting ones are rejected.
    Zero values are dropped from the support.
    """

    dimension: int
    support: tuple[tuple[Site, float], ...] = ()

    def __post_init__(self):
        table: dict[Site, float] = {}
        for off, val in self.support:
            off = as_site(off, self.dimension)
            val = float(val)
            if not math.isfinite(val) or val < 0:
                raise PreconditionError(f"potential value at {off} must be finite and >= 0")
            if off in table and table[off] != val:
                raise PreconditionError(f"duplicate potential offset {off}")
            table[off] = val
        for off, val in list(table.items()):
            mirror = tuple(-c for c in off)
            if mirror in table and table[mirror] != val:
                raise PreconditionError(f"potential not symmetric: v{off}={val} but v{mirror}={table[mirror]}")
            table[mirror] = val
        items = tuple(sorted((o, v) for o, v in table.items() if v != 0.0))
        object.__setattr__(self, "support", items)

    @classmethod
    def from_mapping(cls, dimension: int, values: Mapping) -> "Potential":
        return cls(dimension, tuple((as_site(k, dimension), v) for k, v in values.items()))

    @classmethod
    def zero(cls, dimension: int) -> "Potential":
        return cls(dimension, ())

    def __call__(self, x) -> float:
        return self.as_dict().get(as_site(x), 0.0)

    def as_dict(self) -> dict[Site, float]:
        return _potential_dict(self)

    @property
    def vbar(self) -> float:
        return math.fsum(v for _, v in self.support)

    @property
    def range(self) -> int:
        return max((max(map(abs, o)) for o, _ in self.support), default=0)

    @property
    def is_zero(self) -> bool:
        return not self.support


@lru_cache(maxsize=None)
def _potential_dict(pot: Potential) -> dict[Site, float]:
    return dict(pot.support)


# ---------------------------------------------------------------------------
# intensities


@dataclass(frozen=True)
class IntensitySequence:
    """Poisson intensities ``q_k`` of the ``k``-marks.

    kinds: ``geometric`` (``c r^k``), ``polynomial`` (``c k^-gamma``) and
    ``explicit`` (finite list plus a certified bound ``tail_bound`` on the sum
    of all later values).
    """

    kind: str
    c: float = 1.0
    r: float | None = None
    gamma: float | None = None
    values: tuple[float, ...] = ()
    tail_bound: float | None = None
    tail_first_moment: float | None = None

    def __post_init__(self):
        if self.kind == "geometric":
            if self.r is None or not 0.0 < self.r < 1.0 or self.c <= 0:
                raise PreconditionError("geometric intensity needs c > 0 and 0 < r < 1")
        elif self.kind == "polynomial":
            if self.gamma is None or self.gamma <= 1.0 or self.c <= 0:
                raise PreconditionError("polynomial intensity needs c > 0 and gamma > 1")
        elif self.kind == "explicit":
            object.__setattr__(self, "values", tuple(float(x) for x in self.values))
            if not self.values or any(x <= 0 for x in self.values):
                raise PreconditionError("explicit intensity needs a non-empty list of positive values")
            if self.tail_bound is not None and self.tail_bound < 0:
                raise PreconditionError("tail_bound must be >= 0")
        else:
            raise PreconditionError(f"unknown intensity kind {self.kind!r}")

    @classmethod
    def geometric(cls, c: float, r: float) -> "IntensitySequence":
        return cls("geometric", c=float(c), r=float(r))

    @classmethod
    def polynomial(cls, c: float, gamma: float) -> "IntensitySequence":
        return cls("polynomial", c=float(c), gamma=float(gamma))

    @classmethod
    def explicit(cls, values: Sequence[float], tail_bound: float | None = None, tail_first_moment: float | None = None):
        return cls("explicit", values=tuple(values), tail_bound=tail_bound, tail_first_moment=tail_first_moment)

    def value(self, k: int) -> float:
        if k < 1:
            raise PreconditionError("mark size must be >= 1")
        if self.kind == "geometric":
            return self.c * self.r**k
        if self.kind == "polynomial":
            return self.c * float(k) ** (-self.gamma)
        if k > len(self.values):
            raise PreconditionError(f"explicit intensity only lists q_1..q_{len(self.values)}")
        return self.values[k - 1]

    def array(self, K: int) -> np.ndarray:
        """``q_1, ..., q_K`` as an array."""
        return np.array([self.value(k) for k in range(1, K + 1)], dtype=float)

    def partial_sum(self, K: int) -> float:
        if self.kind == "geometric":
            return self.c * self.r * (1.0 - self.r**K) / (1.0 - self.r)
        return math.fsum(self.value(k) for k in range(1, K + 1))

    def tail_sum(self, K: int) -> float:
        """``sum_{k > K} q_k`` (an upper bound beyond an explicit list)."""
        if K < 0:
            raise PreconditionError("K must be >= 0")
        if self.kind == "geometric":
            return self.c * self.r ** (K + 1) / (1.0 - self.r)
        if self.kind == "polynomial":
            return self.c * float(zeta(self.gamma, K + 1))
        if self.tail_bound is None:
            raise PreconditionError("explicit intensity has no certified tail bound")
        return math.fsum(self.values[K:]) + self.tail_bound

    def total(self) -> float:
        return self.tail_sum(0)

    def first_moment(self):
        """``sum_k k q_k``; ``INFINITE`` when the series diverges."""
        if self.kind == "geometric":
            return self.c * self.r / (1.0 - self.r) ** 2
        if self.kind == "polynomial":
            if self.gamma <= 2.0:
                return INFINITE
            return self.c * float(zeta(self.gamma - 1.0, 1))
        finite = math.fsum(k * x for k, x in enumerate(self.values, start=1))
        if self.tail_bound == 0:
            return finite
        if self.tail_first_moment is None:
            raise PreconditionError("explicit intensity needs tail_first_moment for its first moment")
        return finite + self.tail_first_moment

    def exp_moment(self, alpha: float, power: int = 0):
        """``sum_k k^power q_k e^{alpha k}`` for ``alpha <= 0`` and power 0 or 1."""
        if alpha > 0:
            raise PreconditionError("exp_moment needs alpha <= 0")
        if alpha == -math.inf:
            return 0.0
        if self.kind == "geometric":
            y = self.r * math.exp(alpha)
            return self.c * y / (1.0 - y) ** (1 + power)
        if self.kind == "polynomial":
            s = self.gamma - power
            if alpha == 0.0:
                return INFINITE if s <= 1.0 else self.c * float(zeta(s, 1))
            return self.c * float(mpmath.polylog(s, mpmath.exp(alpha)))
        ks = np.arange(1, len(self.values) + 1, dtype=float)
        finite = math.fsum(ks**power * np.asarray(self.values) * np.exp(alpha * ks))
        tail = self.tail_bound if power == 0 else self.tail_first_moment
        if tail is None:
            raise PreconditionError("explicit intensity lacks the certified tail for this moment")
        return finite + tail * math.exp(alpha * (len(self.values) + 1))

    def to_config(self) -> dict:
        if self.kind == "geometric":
            return {"kind": "geometric", "c": self.c, "r": self.r}
        if self.kind == "polynomial":
            return {"kind": "polynomial", "c": self.c, "gamma": self.gamma}
        out = {"kind": "explicit", "values": list(self.values), "tail_bound": self.tail_bound}
        if self.tail_first_moment is not None:
            out["tail_first_moment"] = self.tail_first_moment
        return out


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class ModelSpec:
    dimension: int
    potential: Potential
    intensity: IntensitySequence
    marks: MarkFamily = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise PreconditionError("dimension must be >= 1")
        if self.potential.dimension != self.dimension:
            raise PreconditionError("potential dimension does not match model dimension")
        object.__setattr__(self, "marks", MarkFamily(self.dimension))

    @property
    def vbar(self) -> float:
        return self.potential.vbar

    def q(self, k: int) -> float:
        return self.intensity.value(k)

    def with_potential(self, potential: Potential) -> "ModelSpec":
        return ModelSpec(self.dimension, potential, self.intensity)

    def to_config(self) -> dict:
        return {
            "dimension": self.dimension,
            "potential": [{"offset": list(o), "value": v} for o, v in self.potential.support],
            "intensity": self.intensity.to_config(),
        }

    def model_hash(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def model_from_config(cfg: Mapping) -> ModelSpec:
    d = int(cfg["dimension"])
    pot_entries = []
    for entry in cfg.get("potential", []):
        off = entry["offset"]
        pot_entries.append((as_site(off, d), float(entry["value"])))
    # symmetric completion: an explicitly listed mirror must agree
    potential = Potential(d, tuple(pot_entries))
    ic = dict(cfg["intensity"])
    kind = ic.pop("kind")
    if kind == "geometric":
        intensity = IntensitySequence.geometric(ic.get("c", 1.0), ic["r"])
    elif kind == "polynomial":
        intensity = IntensitySequence.polynomial(ic.get("c", 1.0), ic["gamma"])
    elif kind == "explicit":
        intensity = IntensitySequence.explicit(ic["values"], ic.get("tail_bound"), ic.get("tail_first_moment"))
    else:
        raise PreconditionError(f"unknown intensity kind {kind!r}")
    return ModelSpec(d, potential, intensity)


def load_model(path) -> ModelSpec:
    """Load a model from a JSON or YAML file (optionally nested under ``model``)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        cfg = yaml.safe_load(text)
    else:
        cfg = json.loads(text)
    if "model" in cfg and isinstance(cfg["model"], Mapping):
        cfg = cfg["model"]
    return model_from_config(cfg)


# ---------------------------------------------------------------------------
# geometry of interactions


@lru_cache(maxsize=200_000)
def _pair_interaction(pot: Potential, d: int, offset: Site, k: int, l: int) -> float:
    if pot.is_zero:
        return 0.0
    reach = pot.range + mark_radius(d, k) + mark_radius(d, l)
    if max(map(abs, offset), default=0) > reach:
        return 0.0
    # sum over delta in supp(v) of v(delta) * #{(i, j): offset + i - j = delta}
    if k <= l:
        small, big, sign = mark_points(k, d), _mark_set(d, l), 1
    else:
        small, big, sign = mark_points(l, d), _mark_set(d, k), -1
    terms = []
    for delta, val in pot.support:
        # k <= l: j = offset + i - delta ; otherwise i = j - offset + delta
        shift = tuple(sign * (o - dl) for o, dl in zip(offset, delta))
        cnt = sum(1 for p in small if tuple(a + b for a, b in zip(p, shift)) in big)
        if cnt:
            terms.append(val * cnt)
    return math.fsum(terms)


def pair_mark_interaction(x, y, k: int, l: int, spec: ModelSpec) -> float:
    """``T_{x,y}(G_k, G_l) = sum_{i in G_k} sum_{j in G_l} v(x + i - y - j)``."""
    if k < 1 or l < 1:
        raise PreconditionError("mark sizes must be >= 1")
    d = spec.dimension
    x, y = as_site(x, d), as_site(y, d)
    offset = tuple(a - b for a, b in zip(x, y))
    return _pair_interaction(spec.potential, d, offset, k, l)


def self_interaction(k: int, spec: ModelSpec) -> float:
    """``t_k``, the internal energy of one ``k``-mark."""
    if k < 1:
        raise PreconditionError("mark size must be >= 1")
    return _pair_interaction(spec.potential, spec.dimension, (0,) * spec.dimension, k, k)


def self_interactions(K: int, spec: ModelSpec) -> np.ndarray:
    return np.array([self_interaction(k, spec) for k in range(1, K + 1)])


def vbar(spec: ModelSpec) -> float:
    return spec.potential.vbar


def tk_deficit_curve(k_max: int, spec: ModelSpec) -> list[tuple[int, float]]:
    """Pairs ``(k, vbar*k - t_k)`` for ``k = 1..k_max``."""
    if k_max < 1:
        raise PreconditionError("k_max must be >= 1")
    vb = spec.vbar
    return [(k, vb * k - self_interaction(k, spec)) for k in range(1, k_max + 1)]


def interaction_offsets(k: int, l: int, spec: ModelSpec) -> Iterable[tuple[Site, float]]:
    """All offsets ``x`` with nonzero ``T_{0,x}(G_k, G_l)`` and their values."""
    d = spec.dimension
    reach = spec.potential.range + mark_radius(d, k) + mark_radius(d, l)
    for off in itertools.product(range(-reach, reach + 1), repeat=d):
        val = _pair_interaction(spec.potential, d, tuple(-c for c in off), k, l)
        if val:
            yield off, val


def _indicator(points, R: int, d: int) -> np.ndarray:
    arr = np.zeros((2 * R + 1,) * d, dtype=np.int64)
    for p in points:
        arr[tuple(c + R for c in p)] = 1
    return arr


@lru_cache(maxsize=4096)
def _field_table(pot: Potential, d: int, k: int, l: int) -> tuple[tuple[Site, ...], np.ndarray]:
    from scipy.signal import convolve

    rk, rl, rv = mark_radius(d, k), mark_radius(d, l), pot.range
    # C(u) = #{(i, j) in G_k x G_l: i - j = u};  T_{0,x} = sum_u C(u) v(x - u)
    C = convolve(_indicator(mark_points(k, d), rk, d), np.flip(_indicator(mark_points(l, d), rl, d)), method="direct")
    V = np.zeros((2 * rv + 1,) * d)
    for off, val in pot.support:
        V[tuple(c + rv for c in off)] = val
    field = convolve(C.astype(float), V, method="direct")
    R = rk + rl + rv
    idx = np.argwhere(field != 0.0)
    offsets = tuple(tuple(int(c) - R for c in row) for row in idx)
    return offsets, field[tuple(idx.T)] if len(idx) else np.zeros(0)


def interaction_field(k: int, l: int, spec: ModelSpec) -> tuple[tuple[Site, ...], np.ndarray]:
    """Offsets ``x`` and values of the nonzero ``T_{0,x}(G_k, G_l)``."""
    if spec.potential.is_zero:
        return (), np.zeros(0)
    return _field_table(spec.potential, spec.dimension, k, l)
