"""Configurations of marked points, counting functionals and energies."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from .errors import PreconditionError
from .model import ModelSpec, Site, as_site, mark_points, mark_radius, pair_mark_interaction

Key = tuple[Site, int]


class Configuration:
    """Immutable sparse field ``(x, k) -> xi^(k)(x)`` of point multiplicities.

    Zero multiplicities are never stored. Iteration is in sorted key order so
    every derived sum is reproducible bit for bit.
    """

    __slots__ = ("_entries", "_hash")

    def __init__(self, entries: Mapping | Iterable = ()):
        table: dict[Key, int] = {}
        items = entries.items() if isinstance(entries, Mapping) else entries
        for (site, k), n in items:
            key = (as_site(site), int(k))
            if key[1] < 1:
                raise PreconditionError("mark size must be >= 1")
            n = int(n)
            if n < 0:
                raise PreconditionError("multiplicities must be >= 0")
            if n:
                table[key] = table.get(key, 0) + n
        self._entries = MappingProxyType(dict(sorted(table.items())))
        self._hash = None

    @classmethod
    def empty(cls) -> "Configuration":
        return cls()

    def __iter__(self) -> Iterator[Key]:
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, key) -> int:
        site, k = key
        return self._entries.get((as_site(site), int(k)), 0)

    def items(self):
        return self._entries.items()

    def __eq__(self, other):
        return isinstance(other, Configuration) and self._entries == other._entries

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(tuple(self._entries.items()))
        return self._hash

    def __repr__(self):
        inner = ", ".join(f"{s}:{k}x{n}" for (s, k), n in self._entries.items())
        return f"Configuration({inner})"

    def __add__(self, other: "Configuration") -> "Configuration":
        return Configuration(itertools.chain(self.items(), other.items()))

    def add(self, site, k: int, n: int = 1) -> "Configuration":
        return Configuration(itertools.chain(self.items(), [((site, k), n)]))

    def remove(self, site, k: int, n: int = 1) -> "Configuration":
        key = (as_site(site), int(k))
        have = self._entries.get(key, 0)
        if have < n:
            raise PreconditionError(f"configuration has no {n} point(s) at {key}")
        table = dict(self._entries)
        if have == n:
            del table[key]
        else:
            table[key] = have - n
        return Configuration(table)

    @property
    def num_points(self) -> int:
        return sum(self._entries.values())

    @property
    def particle_number(self) -> int:
        """Total particle number ``sum k xi^(k)(x)``."""
        return sum(k * n for (_, k), n in self._entries.items())

    def restrict(self, region) -> "Configuration":
        return Configuration({key: n for key, n in self.items() if region.contains(key[0])})

    def to_text(self) -> str:
        """One ``x_1 ... x_d k multiplicity`` line per entry, sorted."""
        return "".join(" ".join(map(str, (*s, k, n))) + "\n" for (s, k), n in self.items())

    @classmethod
    def from_text(cls, text: str) -> "Configuration":
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            nums = [int(t) for t in line.split()]
            if len(nums) < 3:
                raise PreconditionError(f"bad configuration line: {line!r}")
            entries.append(((tuple(nums[:-2]), nums[-2]), nums[-1]))
        return cls(entries)


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box ``prod_i [lower_i, upper_i]`` of lattice sites."""

    lower: Site
    upper: Site

    def __post_init__(self):
        lo, hi = as_site(self.lower), as_site(self.upper)
        if len(lo) != len(hi) or not lo:
            raise PreconditionError("box bounds must have equal, positive dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise PreconditionError("box must be non-empty")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def centred(cls, side: int, d: int = 1) -> "BoxRegion":
        """Box of ``side`` sites per axis containing the origin, left-biased for even sides."""
        if side < 1:
            raise PreconditionError("side must be >= 1")
        lo = -(side // 2)
        return cls((lo,) * d, (lo + side - 1,) * d)

    @classmethod
    def interval(cls, a: int, b: int) -> "BoxRegion":
        return cls((a,), (b,))

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> int:
        return math.prod(b - a + 1 for a, b in zip(self.lower, self.upper))

    def contains(self, site) -> bool:
        site = as_site(site)
        return all(a <= c <= b for a, b, c in zip(self.lower, self.upper, site))

    def sites(self) -> list[Site]:
        return list(itertools.product(*(range(a, b + 1) for a, b in zip(self.lower, self.upper))))

    def admits(self, site, k: int) -> bool:
        """Whether a ``k``-mark at ``site`` lies entirely in the box."""
        site = as_site(site)
        if not self.contains(site):
            return False
        return all(self.contains(tuple(a + b for a, b in zip(site, p))) for p in mark_points(k, self.dimension))

    def admissible_sites(self, k: int) -> list[Site]:
        return [x for x in self.sites() if self.admits(x, k)]


@dataclass(frozen=True)
class Complement:
    """The complement ``Z^d minus box``, usable wherever a region is expected."""

    box: BoxRegion

    def contains(self, site) -> bool:
        return not self.box.contains(site)


def complement(box: BoxRegion) -> Complement:
    return Complement(box)


def _covered(site: Site, k: int) -> Iterator[Site]:
    for p in mark_points(k, len(site)):
        yield tuple(a + b for a, b in zip(site, p))


# ---------------------------------------------------------------------------
# counting functionals


def count_points(omega: Configuration, region, k: int) -> int:
    """``N_region^(delta_k)``: number of ``k``-marked points in ``region``."""
    return sum(n for (s, kk), n in omega.items() if kk == k and region.contains(s))


def particle_count(omega: Configuration, region) -> int:
    """``N_region^ell``: particles attached to points in ``region``."""
    return sum(k * n for (s, k), n in omega.items() if region.contains(s))


def attached_count(omega: Configuration, region, target, k: int | None = None) -> int:
    """``M_{region,target}``: particles in ``target`` attached to points in ``region``."""
    total = 0
    for (s, kk), n in omega.items():
        if (k is None or kk == k) and region.contains(s):
            total += n * sum(1 for y in _covered(s, kk) if target.contains(y))
    return total


def located_count(omega: Configuration, region) -> int:
    """``N~_region``: particles located in ``region`` wherever their point is."""
    return sum(n * sum(1 for y in _covered(s, k) if region.contains(y)) for (s, k), n in omega.items())


def is_dirichlet(omega: Configuration, box: BoxRegion) -> bool:
    return all(box.admits(s, k) for (s, k) in omega)


# ---------------------------------------------------------------------------
# energies


def _reach(d: int, k: int, l: int, spec: ModelSpec) -> int:
    return spec.potential.range + mark_radius(d, k) + mark_radius(d, l)


def _cross(a: list, b: list, spec: ModelSpec) -> float:
    """``sum_{p in a, p' in b} n n' T(p, p')`` over sorted entry lists."""
    d = spec.dimension
    terms = []
    for (x, k), n in a:
        for (y, l), m in b:
            if max(abs(i - j) for i, j in zip(x, y)) > _reach(d, k, l, spec):
                continue
            t = pair_mark_interaction(x, y, k, l, spec)
            if t:
                terms.append(n * m * t)
    return math.fsum(terms)


def total_energy(omega: Configuration, region, region2, spec: ModelSpec) -> float:
    """``Phi_{region,region2}(omega)``, self-interactions included."""
    if spec.potential.is_zero:
        return 0.0
    a = [(key, n) for key, n in omega.items() if region.contains(key[0])]
    b = a if region2 is region else [(key, n) for key, n in omega.items() if region2.contains(key[0])]
    return _cross(a, b, spec)


def mutual_energy(omega: Configuration, other: Configuration, region, spec: ModelSpec) -> float:
    """Bilinear cross energy of two configurations, points restricted to ``region``."""
    if spec.potential.is_zero:
        return 0.0
    a = [(key, n) for key, n in omega.items() if region.contains(key[0])]
    b = [(key, n) for key, n in other.items() if region.contains(key[0])]
    return _cross(a, b, spec)


def field_energy_k(omega: Configuration, k: int, spec: ModelSpec) -> float:
    """``Phi^(k)(omega)``: interaction of all of ``omega`` with a ``k``-mark at the origin."""
    origin = ((0,) * spec.dimension, k)
    return _cross([(origin, 1)], list(omega.items()), spec)


def _local_field(omega: Configuration, site: Site, k: int, region, spec: ModelSpec) -> float:
    return _cross([((site, k), 1)], [(key, n) for key, n in omega.items() if region.contains(key[0])], spec)


def delta_energy_move(omega: Configuration, src: Key, dst: Key, region, spec: ModelSpec) -> float:
    """``Phi(omega') - Phi(omega)`` after moving one point from ``src`` to ``dst``.

    Only pairs within interaction reach of the two touched points are visited.
    """
    (xs, ks), (xd, kd) = (as_site(src[0]), int(src[1])), (as_site(dst[0]), int(dst[1]))
    if omega[(xs, ks)] < 1:
        raise PreconditionError(f"no point at {(xs, ks)} to move")
    delta = 0.0
    if region.contains(xs):
        delta -= 2.0 * _local_field(omega, xs, ks, region, spec) - pair_mark_interaction(xs, xs, ks, ks, spec)
    rest = omega.remove(xs, ks)
    if region.contains(xd):
        delta += 2.0 * _local_field(rest, xd, kd, region, spec) + pair_mark_interaction(xd, xd, kd, kd, spec)
    return delta
