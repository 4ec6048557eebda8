import math

import pytest

from boxgas.energy import BoxRegion, Configuration
from boxgas.errors import EnumerationLimitError, PreconditionError
from boxgas.exact import (
    PinnedMacro,
    canonical_law,
    canonical_state_count,
    dirichlet_log_probability,
    enumerate_canonical,
    finite_volume_entropy,
    free_case_oracle,
    partition_conditional,
    partition_dirichlet,
    pinned_macro_partition,
)
from boxgas.model import Potential

from conftest import free_model, reference_model

REF = reference_model()
ONE = BoxRegion.interval(0, 0)


def test_enumeration_examples():
    assert list(enumerate_canonical(ONE, 1, REF)) == [Configuration({((0,), 1): 1})]
    assert list(enumerate_canonical(BoxRegion.centred(4), 0, REF)) == [Configuration.empty()]
    box = BoxRegion.interval(-1, 1)
    configs = list(enumerate_canonical(box, 2, REF))
    assert len(configs) == len(set(configs)) == 8 == canonical_state_count(box, 2)
    assert all(c.particle_number == 2 for c in configs)


def test_enumeration_count_matches_recursion():
    # direct recursive count over the admissible (site, k) slots
    box = BoxRegion.interval(0, 3)
    for N in range(7):
        slots = [k for k in range(1, N + 1) for _ in box.admissible_sites(k)]

        def count(i, left):
            if left == 0:
                return 1
            if i == len(slots):
                return 0
            return sum(count(i + 1, left - n * slots[i]) for n in range(left // slots[i] + 1))

        assert sum(1 for _ in enumerate_canonical(box, N, REF)) == count(0, N)


def test_ceiling_refusal():
    with pytest.raises(EnumerationLimitError) as err:
        list(enumerate_canonical(BoxRegion.centred(12), 12, REF, ceiling=1000))
    assert err.value.estimate > 1000
    assert err.value.exit_code == 2


def test_partition_examples():
    assert partition_dirichlet(ONE, 1, REF).value == pytest.approx(0.5 * math.exp(-2), abs=1e-15)
    assert partition_dirichlet(ONE, 0, REF).value == pytest.approx(math.exp(-1), abs=1e-15)
    assert partition_conditional(ONE, 1, REF).value == pytest.approx(0.5 * math.exp(-1.5), abs=1e-15)
    assert partition_conditional(ONE, 0, REF).value == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert free_case_oracle(ONE, 1, free_model()) == pytest.approx(0.5 * math.exp(-1), abs=1e-15)
    box = BoxRegion.centred(5)
    assert free_case_oracle(box, 0, free_model()) == pytest.approx(math.exp(-5), rel=1e-14)


def test_canonical_law_normalised():
    law = canonical_law(BoxRegion.interval(0, 2), 3, REF)
    assert sum(law.values()) == pytest.approx(1.0, abs=1e-14)
    assert min(law.values()) > 0


def test_conditioning_exponent_sublinear():
    rates = [-dirichlet_log_probability(BoxRegion.centred(n), REF) / n for n in (4, 16, 64)]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert rates[-1] < 0.05


def test_oracle_requires_free_model():
    with pytest.raises(PreconditionError):
        free_case_oracle(ONE, 1, REF)


def test_pinned_hand_value():
    # one pinned G_3 at 0 (t_3 = 5), exactly one 1-mark in {-1, 0, 1}
    box = BoxRegion.interval(-1, 1)
    res = pinned_macro_partition(box, PinnedMacro((3,)), 1, ([1 / 3], 0.5), REF)
    hand = math.exp(-1.5 - 5.0) * 0.5 * (math.exp(-1 - 4) + 2 * math.exp(-1 - 3))
    assert res.value == pytest.approx(hand, rel=1e-13)
    assert res.configuration_count == 3


def test_pinned_wide_window_free():
    # empty pinned list and a window covering every count: E[1] under the K-truncated law
    spec = free_model()
    res = pinned_macro_partition(ONE, PinnedMacro(), 1, ([1.0], 30.0), spec)
    assert res.value == pytest.approx(1.0, abs=1e-12)


def test_pinned_rejects_bad_input():
    with pytest.raises(PreconditionError):
        PinnedMacro((2, 3))
    with pytest.raises(PreconditionError):
        pinned_macro_partition(ONE, PinnedMacro((2,)), 1, ([1.0], 0.5), REF)


def test_finite_volume_entropy_examples():
    box = BoxRegion.centred(3)
    q = REF.intensity
    assert finite_volume_entropy(q.array(30), box, REF) == pytest.approx(3 * q.tail_sum(30), abs=1e-15)
    assert finite_volume_entropy([], box, REF) == pytest.approx(3.0)
    assert finite_volume_entropy([1.0], ONE, REF) == pytest.approx(0.5 - 1 + math.log(2) + 0.5, abs=1e-12)


def test_partition_json():
    out = partition_dirichlet(ONE, 1, REF).to_json()
    assert out["schema"] == "boxgas.partition/1" and out["config_count"] == 1


def test_zero_potential_dimension_check():
    with pytest.raises(PreconditionError):
        list(enumerate_canonical(BoxRegion.centred(2, d=2), 1, REF))
    assert Potential.zero(1).is_zero


def test_monotone_in_potential():
    doubled = REF.with_potential(Potential.from_mapping(1, {0: 2.0, 1: 1.0}))
    box = BoxRegion.interval(0, 3)
    for N in range(1, 6):
        assert partition_dirichlet(box, N, doubled).value <= partition_dirichlet(box, N, REF).value


def test_total_mass_free():
    # summing over N gives the probability that no mark leaves the box
    spec = free_model()
    box = BoxRegion.interval(0, 2)
    total = math.fsum(free_case_oracle(box, N, spec) for N in range(60))
    assert total == pytest.approx(math.exp(dirichlet_log_probability(box, spec)), rel=1e-12)
    head = math.fsum(partition_dirichlet(box, N, spec).value for N in range(12))
    assert head == pytest.approx(math.fsum(free_case_oracle(box, N, spec) for N in range(12)), rel=1e-12)


def test_tail_factor():
    res = partition_dirichlet(BoxRegion.interval(0, 1), 2, REF)
    assert res.tail_factor_log == pytest.approx(-2 * 0.25, abs=1e-15)


def test_pinned_mark_monotone():
    box = BoxRegion.interval(-1, 1)
    window = ([1 / 3], 0.5)
    none = pinned_macro_partition(box, PinnedMacro(), 1, window, REF).value
    one = pinned_macro_partition(box, PinnedMacro((1,)), 1, window, REF).value
    two = pinned_macro_partition(box, PinnedMacro((3, 1)), 1, window, REF).value
    assert two <= one <= none
