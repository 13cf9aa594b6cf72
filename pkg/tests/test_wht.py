"""Tests for the 2D WHT bases, the fast transform and the low-rank projection."""

import numpy as np
import pytest

from src.base_selection import full_select, lp_l1_select
from src.errors import SelectionError, ShapeError
from src.tensor_core import Rng
from src.wht import (
    basis_matrix, build_flat_bases, fast_wht_1d, make_plan, project, reverse_project,
    sequency_ordering, spectrum, transform_2d, walsh_matrix,
)


def _sign_changes(row):
    return int(np.sum(row[1:] != row[:-1]))


def _padded(x, plan):
    out = np.zeros((plan.padded_len, x.shape[1]))
    out[: x.shape[0]] = x
    return out


class TestPlan:

    def test_default_order_is_smallest_fitting_power_of_two(self):
        assert make_plan(49).n == 8
        assert make_plan(64).n == 8
        assert make_plan(65).n == 16
        assert make_plan(1).n == 1

    def test_geometry(self):
        plan = make_plan(49)
        assert plan.padded_len == 64
        assert plan.norm_scale == pytest.approx(1 / 8)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            make_plan(9, n=3)

    def test_rejects_signal_longer_than_grid(self):
        with pytest.raises(ShapeError):
            make_plan(17, n=4)

    def test_ordering_is_a_permutation(self):
        for n in (1, 2, 4, 8, 16, 32):
            assert sorted(sequency_ordering(n)) == list(range(n))


class TestWalshMatrix:

    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_row_s_has_s_sign_changes(self, n):
        w = walsh_matrix(n)
        assert [_sign_changes(row) for row in w] == list(range(n))

    def test_order_two(self):
        np.testing.assert_array_equal(walsh_matrix(2), [[1, 1], [1, -1]])


class TestFastWht1d:

    def test_order_one_identity(self):
        np.testing.assert_array_equal(fast_wht_1d([5.0], make_plan(1)), [5.0])

    def test_order_two_examples(self):
        plan = make_plan(4, n=2)
        np.testing.assert_array_equal(fast_wht_1d([1.0, 1.0], plan), [2.0, 0.0])
        np.testing.assert_array_equal(fast_wht_1d([1.0, -1.0], plan), [0.0, 2.0])

    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_matches_naive_matrix_product(self, n):
        plan = make_plan(n * n, n=n)
        w = walsh_matrix(n).astype(np.float64)
        rng = Rng(n)
        for k in range(100):
            v = rng.split(k).normal(n)
            np.testing.assert_allclose(fast_wht_1d(v, plan), w @ v, rtol=0, atol=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fast_wht_1d(np.ones(3), make_plan(16, n=4))


class TestFlatBases:

    def test_dc_base_is_all_ones(self):
        bases = build_flat_bases(make_plan(4, n=2))
        assert (bases[0].i, bases[0].j) == (0, 0)
        np.testing.assert_array_equal(bases[0].values, [1, 1, 1, 1])

    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_gram_is_n_squared_identity_in_integers(self, n):
        bases = build_flat_bases(make_plan(n * n, n=n))
        b = np.stack([base.values.astype(np.int64) for base in bases], axis=1)
        np.testing.assert_array_equal(b.T @ b, n * n * np.eye(n * n, dtype=np.int64))

    def test_values_are_signs(self):
        for base in build_flat_bases(make_plan(16, n=4)):
            assert set(np.unique(base.values)) <= {-1, 1}

    def test_sequency_along_rows_is_nondecreasing(self):
        n = 4
        bases = {(b.i, b.j): b for b in build_flat_bases(make_plan(n * n, n=n))}
        counts = []
        for i in range(n):
            grid = bases[(i, 0)].values.reshape(n, n)
            counts.append(_sign_changes(grid[:, 0]))
        assert counts == sorted(counts)
        assert counts == list(range(n))

    def test_base_matches_outer_product(self):
        plan = make_plan(64)
        w = walsh_matrix(8)
        base = {(b.i, b.j): b for b in build_flat_bases(plan)}[(3, 5)]
        np.testing.assert_array_equal(base.values, np.outer(w[3], w[5]).ravel())


class TestProject:

    def test_constant_rows_with_dc_only(self):
        plan = make_plan(49)
        c = np.array([1.0, -2.0, 0.5])
        x = np.tile(c, (49, 1))
        out = project(x, [(0, 0)], plan)
        assert out.shape == (1, 3)
        np.testing.assert_allclose(out[0], plan.norm_scale * 49 * c, atol=1e-12)

    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_fast_matches_naive(self, n):
        plan = make_plan(n * n, n=n)
        x = Rng(n).normal((n * n, 3))
        bases = full_select(n)
        np.testing.assert_allclose(
            project(x, bases, plan), project(x, bases, plan, method="naive"), rtol=0, atol=1e-10
        )

    def test_padded_lp_l1_matches_explicit_projection(self):
        plan = make_plan(49)
        x = Rng(3).normal((49, 8))
        bases = lp_l1_select(4, plan.n)
        assert bases.rank == 10
        p = basis_matrix(bases, plan)
        expected = plan.norm_scale * p.T @ _padded(x, plan)
        np.testing.assert_allclose(project(x, bases, plan), expected, rtol=0, atol=1e-10)
        np.testing.assert_allclose(
            project(x, bases, plan, method="naive"), expected, rtol=0, atol=1e-10
        )

    def test_parseval_with_all_bases(self):
        plan = make_plan(49)
        for k in range(10):
            x = Rng(k).normal((49, 5))
            energy = np.sum(project(x, full_select(plan.n), plan) ** 2)
            assert energy == pytest.approx(np.sum(x ** 2), rel=1e-8)

    def test_projection_is_non_expansive(self):
        plan = make_plan(49)
        x = Rng(11).normal((49, 6))
        for r_l1 in range(1, 9):
            coeffs = project(x, lp_l1_select(r_l1, plan.n), plan)
            assert np.sum(coeffs ** 2) <= np.sum(x ** 2) + 1e-8

    def test_batched_rows_project_per_sample(self):
        plan = make_plan(49)
        rng = Rng(5)
        a, b = rng.split(0).normal((49, 4)), rng.split(1).normal((49, 4))
        bases = lp_l1_select(3, plan.n)
        batched = project(np.vstack([a, b]), bases, plan)
        np.testing.assert_allclose(
            batched, np.vstack([project(a, bases, plan), project(b, bases, plan)]), atol=1e-12
        )

    def test_rows_must_be_a_multiple_of_signal_length(self):
        with pytest.raises(ShapeError):
            project(np.ones((50, 2)), [(0, 0)], make_plan(49))

    def test_empty_base_list(self):
        with pytest.raises(SelectionError):
            project(np.ones((4, 2)), [], make_plan(4))

    def test_base_outside_grid(self):
        with pytest.raises(SelectionError):
            project(np.ones((4, 2)), [(2, 0)], make_plan(4))

    def test_selection_for_another_order_is_rejected(self):
        plan = make_plan(49)
        with pytest.raises(SelectionError, match="order-2"):
            project(np.ones((49, 2)), lp_l1_select(2, 2), plan)
        with pytest.raises(SelectionError):
            reverse_project(np.ones((3, 2)), lp_l1_select(2, 2), plan)


class TestReverseProject:

    def test_dc_broadcast(self):
        plan = make_plan(49)
        c = np.array([[2.0, -1.0]])
        out = reverse_project(c, [(0, 0)], plan)
        assert out.shape == (49, 2)
        np.testing.assert_allclose(out, np.tile(plan.norm_scale * c, (49, 1)), atol=1e-12)

    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_completeness(self, n):
        plan = make_plan(n * n, n=n)
        x = Rng(n + 100).normal((n * n, 4))
        bases = full_select(n)
        np.testing.assert_allclose(
            reverse_project(project(x, bases, plan), bases, plan), x, rtol=0, atol=1e-10
        )

    def test_partial_bases_match_explicit_projector(self):
        plan = make_plan(49)
        x = Rng(21).normal((49, 6))
        bases = lp_l1_select(4, plan.n)
        p = basis_matrix(bases, plan)
        expected = (plan.norm_scale ** 2 * p @ p.T @ _padded(x, plan))[:49]
        out = reverse_project(project(x, bases, plan), bases, plan)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-10)
        naive = reverse_project(
            project(x, bases, plan, method="naive"), bases, plan, method="naive"
        )
        np.testing.assert_allclose(naive, expected, rtol=0, atol=1e-10)

    def test_row_count_must_match_rank(self):
        with pytest.raises(ShapeError):
            reverse_project(np.ones((4, 2)), lp_l1_select(2, 8), make_plan(49))


class TestSpectrum:

    def test_transform_2d_shape(self):
        plan = make_plan(49)
        coeffs = transform_2d(Rng(0).normal((98, 3)), plan)
        assert coeffs.shape == (2, 8, 8, 3)

    def test_total_energy_matches_signal(self):
        plan = make_plan(49)
        x = Rng(8).normal((98, 3))
        assert spectrum(x, plan).sum() == pytest.approx(np.sum(x ** 2), rel=1e-10)

    def test_single_base_pattern(self):
        plan = make_plan(64)
        w = walsh_matrix(8)
        x = np.outer(w[2], w[1]).reshape(64, 1).astype(np.float64)
        energy = spectrum(x, plan)
        assert energy[2, 1] == pytest.approx(64.0)
        assert np.sum(energy) - energy[2, 1] == pytest.approx(0.0, abs=1e-10)
