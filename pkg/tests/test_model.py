import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cardmil.model import (
    NEGATIVE,
    POSITIVE,
    Bag,
    InstanceModel,
    NormalPotential,
    RatioPotential,
    TabularPotential,
    UniformPotential,
    cardinality_log_potential,
    design_matrix,
    log_potential_table,
    unary_weight,
    unary_weights,
)


class TestBag:
    def test_basic_construction(self):
        bag = Bag("a", [[1.0, 2.0], [3.0, 4.0]], POSITIVE)
        assert bag.size == 2
        assert bag.dimension == 2
        assert bag.label == POSITIVE

    def test_instances_are_frozen(self):
        bag = Bag("a", np.zeros((2, 2)))
        with pytest.raises(ValueError):
            bag.instances[0, 0] = 1.0

    def test_source_array_detached(self):
        src = np.zeros((2, 2))
        bag = Bag("a", src)
        src[0, 0] = 5.0
        assert bag.instances[0, 0] == 0.0

    @pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.zeros(3), np.zeros((2, 0))])
    def test_rejects_bad_shapes(self, bad):
        with pytest.raises(ValueError):
            Bag("a", bad)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Bag("a", [[np.nan]])

    @pytest.mark.parametrize("label", [0, 2, "pos", True])
    def test_rejects_bad_labels(self, label):
        with pytest.raises(ValueError):
            Bag("a", [[0.0]], label)

    def test_unlabeled(self):
        assert Bag("a", [[0.0]]).label is None


class TestPotentialValidation:
    @pytest.mark.parametrize("mu,sigma", [(-0.1, 0.1), (1.1, 0.1), (0.5, 0.0), (0.5, -1.0), (np.nan, 0.1)])
    def test_normal_rejects(self, mu, sigma):
        with pytest.raises(ValueError):
            NormalPotential(mu, sigma)

    @pytest.mark.parametrize("rho", [0.0, -0.5, 1.5, np.nan])
    def test_ratio_rejects(self, rho):
        with pytest.raises(ValueError):
            RatioPotential(rho)

    def test_tabular_rejects_all_infinite_side(self):
        with pytest.raises(ValueError):
            TabularPotential([0.0, 0.0], [-np.inf, -np.inf])

    def test_tabular_rejects_nan(self):
        with pytest.raises(ValueError):
            TabularPotential([0.0, np.nan], [0.0, 0.0])

    def test_tabular_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            TabularPotential([0.0, 0.0, 0.0], [0.0, 0.0])


class TestCardinalityLogPotential:
    def test_normal_at_full_count(self):
        # preferred fraction reached exactly: no penalty
        pot = NormalPotential(mu=1.0, sigma=0.1)
        assert cardinality_log_potential(pot, POSITIVE, 10, 10) == 0.0

    def test_normal_at_partial_count(self):
        pot = NormalPotential(mu=1.0, sigma=0.1)
        value = cardinality_log_potential(pot, POSITIVE, 8, 10)
        assert value == pytest.approx(-2.0, abs=1e-12)

    def test_normal_negative_label_prefers_zero(self):
        pot = NormalPotential(mu=1.0, sigma=0.1)
        assert cardinality_log_potential(pot, NEGATIVE, 0, 10) == 0.0
        assert cardinality_log_potential(pot, NEGATIVE, 10, 10) == pytest.approx(-50.0)

    def test_ratio_half(self):
        pot = RatioPotential(0.5)
        assert cardinality_log_potential(pot, POSITIVE, 2, 4) == 0.0
        assert cardinality_log_potential(pot, POSITIVE, 1, 4) == -np.inf
        assert cardinality_log_potential(pot, NEGATIVE, 1, 4) == 0.0
        assert cardinality_log_potential(pot, NEGATIVE, 2, 4) == -np.inf

    def test_ratio_tiny_rho_excludes_only_zero(self):
        pot = RatioPotential(1e-6)
        table = log_potential_table(pot, POSITIVE, 5)
        assert table[0] == -np.inf
        assert (table[1:] == 0.0).all()

    def test_uniform_is_zero_everywhere(self):
        pot = UniformPotential()
        for label in (POSITIVE, NEGATIVE):
            assert (log_potential_table(pot, label, 7) == 0.0).all()

    def test_tabular_lookup(self):
        pot = TabularPotential([0.0, -1.0, -np.inf], [-np.inf, -2.0, 0.0])
        assert cardinality_log_potential(pot, POSITIVE, 1, 2) == -1.0
        assert cardinality_log_potential(pot, NEGATIVE, 0, 2) == -np.inf

    def test_tabular_size_mismatch(self):
        pot = TabularPotential([0.0, 0.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            log_potential_table(pot, POSITIVE, 5)

    @pytest.mark.parametrize("count", [-1, 11])
    def test_out_of_range_count(self, count):
        with pytest.raises(ValueError):
            cardinality_log_potential(UniformPotential(), POSITIVE, count, 10)

    def test_rejects_bad_label(self):
        with pytest.raises(ValueError):
            cardinality_log_potential(UniformPotential(), 0, 1, 2)

    def test_normal_peaks_nearest_mu(self):
        pot = NormalPotential(mu=0.62, sigma=0.2)
        table = log_potential_table(pot, POSITIVE, 50)
        fractions = np.arange(51) / 50
        assert np.argmax(table) == np.argmin(np.abs(fractions - 0.62))

    @given(
        rho=st.floats(min_value=1e-6, max_value=1.0, allow_nan=False),
        m=st.integers(min_value=1, max_value=40),
    )
    def test_ratio_partitions_counts(self, rho, m):
        # every count is admitted by exactly one bag label
        pos = log_potential_table(RatioPotential(rho), POSITIVE, m)
        neg = log_potential_table(RatioPotential(rho), NEGATIVE, m)
        assert ((pos == 0.0) ^ (neg == 0.0)).all()
        assert (neg[0] == 0.0) and (pos[m] == 0.0)

    @given(
        mu=st.floats(min_value=0.0, max_value=1.0),
        sigma=st.floats(min_value=1e-3, max_value=5.0),
        m=st.integers(min_value=1, max_value=30),
    )
    def test_tables_never_nan(self, mu, sigma, m):
        for pot in (NormalPotential(mu, sigma), UniformPotential()):
            for label in (POSITIVE, NEGATIVE):
                table = log_potential_table(pot, label, m)
                assert table.shape == (m + 1,)
                assert not np.isnan(table).any()
                assert not np.isposinf(table).any()


class TestInstanceModel:
    def test_unary_weights_zero_model(self):
        model = InstanceModel(np.zeros(3))
        assert (unary_weights(model, np.random.default_rng(0).standard_normal((4, 3))) == 0.0).all()

    def test_unary_weight_example(self):
        model = InstanceModel([1.0, -2.0])
        assert unary_weight(model, np.array([3.0, 1.0])) == pytest.approx(1.0)

    def test_bias_shifts_by_constant(self):
        model = InstanceModel([1.0, -2.0, 0.5], include_bias=True)
        assert unary_weight(model, np.array([3.0, 1.0])) == pytest.approx(1.5)
        assert model.feature_dim == 2

    def test_dimension_mismatch(self):
        model = InstanceModel([1.0, 2.0])
        with pytest.raises(ValueError):
            unary_weights(model, np.zeros((2, 3)))

    def test_rejects_nonfinite_weights(self):
        with pytest.raises(ValueError):
            InstanceModel([np.inf])

    def test_design_matrix(self):
        X = np.arange(6.0).reshape(3, 2)
        assert design_matrix(X, False) is X
        with_bias = design_matrix(X, True)
        assert with_bias.shape == (3, 3)
        assert (with_bias[:, -1] == 1.0).all()

    def test_weights_frozen(self):
        model = InstanceModel([1.0])
        with pytest.raises(ValueError):
            model.weights[0] = 2.0
