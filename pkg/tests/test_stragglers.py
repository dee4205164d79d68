"""Straggler models: multiplier assignment, class counts, seed determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pssim.stragglers import (
    LONG_TAIL_HIGH,
    UNIFORM_HIGH,
    UNIFORM_LOW,
    DelayModel,
    apply_cds,
    generate_pcs,
    no_delay,
    parse_delay,
    straggler_classes,
)


class TestCds:
    def test_intensity_one_halves_speed(self):
        m = apply_cds(2, 1.0).multipliers(4)
        assert np.array_equal(m, [1.0, 1.0, 2.0, 1.0])

    def test_intensity_zero_is_identity(self):
        assert np.array_equal(apply_cds(0, 0.0).multipliers(3), np.ones(3))

    def test_fractional_intensity(self):
        m = apply_cds(1, 0.3).multipliers(2)
        assert m[1] == 1.3 and m[0] == 1.0

    def test_out_of_range_worker(self):
        with pytest.raises(ValueError):
            apply_cds(5, 1.0).multipliers(4)

    def test_negative_arguments_rejected(self):
        with pytest.raises(ValueError):
            apply_cds(0, -0.5)
        with pytest.raises(ValueError):
            apply_cds(-1, 0.5)

    def test_label(self):
        assert apply_cds(3, 1.0).label() == "cds:w=3,i=1"
        assert apply_cds(0, 0.25).label() == "cds:w=0,i=0.25"


class TestPcs:
    def test_thirty_two_workers_split_six_two(self):
        model = generate_pcs(32, seed=0)
        uniform, tail = straggler_classes(model, 32)
        assert len(uniform) == 6 and len(tail) == 2  # 8 stragglers, 80/20

    def test_sixteen_workers_split_three_one(self):
        uniform, tail = straggler_classes(generate_pcs(16, seed=1), 16)
        assert len(uniform) == 3 and len(tail) == 1

    def test_four_workers_single_uniform_straggler(self):
        uniform, tail = straggler_classes(generate_pcs(4, seed=2), 4)
        assert len(uniform) == 1 and len(tail) == 0

    def test_too_few_workers_rejected(self):
        with pytest.raises(ValueError):
            generate_pcs(3, seed=0)

    def test_class_bounds(self):
        for seed in range(8):
            mult = generate_pcs(24, seed=seed).multipliers(24)
            for c in mult:
                assert c == 1.0 or UNIFORM_LOW <= c <= LONG_TAIL_HIGH

    def test_non_stragglers_run_at_unit_speed(self):
        mult = generate_pcs(20, seed=5).multipliers(20)
        assert np.sum(mult == 1.0) == 15  # 5 stragglers out of 20

    def test_seed_determinism(self):
        a = generate_pcs(16, seed=9).multipliers(16)
        b = generate_pcs(16, seed=9).multipliers(16)
        c = generate_pcs(16, seed=10).multipliers(16)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_seed_only_model_regenerates(self):
        # a model carrying just the seed must materialize the same fleet
        by_seed = DelayModel(kind="pcs", pcs_seed=9)
        assert np.array_equal(by_seed.multipliers(16),
                              generate_pcs(16, seed=9).multipliers(16))

    def test_stored_fleet_reused_when_size_matches(self):
        model = generate_pcs(8, seed=3)
        assert np.array_equal(model.multipliers(8),
                              np.array(model.per_worker_multiplier))

    @given(workers=st.integers(4, 64), seed=st.integers(0, 1000))
    @settings(max_examples=80, deadline=None)
    def test_counts_property(self, workers, seed):
        model = generate_pcs(workers, seed)
        uniform, tail = straggler_classes(model, workers)
        count = int(np.floor(0.25 * workers))
        assert len(uniform) + len(tail) == count
        assert len(uniform) == int(np.floor(0.8 * count + 0.5))
        mult = model.multipliers(workers)
        for i in uniform:
            assert UNIFORM_LOW <= mult[i] <= UNIFORM_HIGH
        for i in tail:
            assert UNIFORM_HIGH < mult[i] <= LONG_TAIL_HIGH


class TestParseDelay:
    def test_none(self):
        assert parse_delay("none").kind == "none"
        assert np.array_equal(parse_delay("none").multipliers(3), np.ones(3))

    def test_cds_round_trip(self):
        model = parse_delay("cds:w=2,i=0.6")
        assert model.kind == "cds"
        assert model.cds_worker_id == 2 and model.cds_intensity == 0.6
        assert parse_delay(model.label()).multipliers(4).tolist() == \
            model.multipliers(4).tolist()

    def test_pcs_round_trip(self):
        model = parse_delay("pcs:seed=7")
        assert model.kind == "pcs" and model.pcs_seed == 7
        assert np.array_equal(model.multipliers(8),
                              generate_pcs(8, seed=7).multipliers(8))
        assert parse_delay(model.label()).pcs_seed == 7

    def test_unknown_model(self):
        with pytest.raises(ValueError, match="unknown delay"):
            parse_delay("gaussian:sigma=1")

    def test_missing_parameters(self):
        with pytest.raises(ValueError):
            parse_delay("cds:w=1")
        with pytest.raises(ValueError):
            parse_delay("pcs")

    def test_none_with_parameters_rejected(self):
        with pytest.raises(ValueError):
            parse_delay("none:x=1")

    def test_bad_parameter_syntax(self):
        with pytest.raises(ValueError, match="bad delay parameter"):
            parse_delay("cds:w2")
