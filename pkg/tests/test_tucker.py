import numpy as np
import pytest

from tensorda.tensor_ops import frobenius_norm, multi_mode_product
from tensorda.tucker import TensorSubspace, hooi, hosvd


def random_orthonormal(rng, n, d):
    q, r = np.linalg.qr(rng.standard_normal((n, d)))
    return q * np.sign(np.diag(r))


def low_rank_tensor(rng, mode_sizes, ranks):
    factors = [random_orthonormal(rng, n, d) for n, d in zip(mode_sizes, ranks)]
    core = rng.standard_normal(ranks)
    return multi_mode_product(core, factors), factors


class TestHosvd:
    def test_rank_one_recovery(self):
        rng = np.random.default_rng(0)
        vecs = [rng.standard_normal(n) for n in (3, 4, 5)]
        vecs = [v / np.linalg.norm(v) for v in vecs]
        x = np.einsum("i,j,k->ijk", *vecs)
        model = hosvd(x, (1, 1, 1))
        assert frobenius_norm(x - model.reconstruct()) <= 1e-10

    def test_full_rank_is_lossless(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 4, 5))
        model = hosvd(x, (3, 4, 5))
        err = frobenius_norm(x - model.reconstruct())
        assert err <= 1e-10 * (1 + frobenius_norm(x))

    def test_exact_multilinear_rank_recovery(self):
        rng = np.random.default_rng(2)
        x, _ = low_rank_tensor(rng, (5, 5, 5), (2, 2, 2))
        model = hosvd(x, (2, 2, 2))
        assert frobenius_norm(x - model.reconstruct()) <= 1e-8 * frobenius_norm(x)

    def test_rank_exceeds_mode_size(self):
        with pytest.raises(ValueError, match="exceeds mode"):
            hosvd(np.zeros((2, 3, 4)), (3, 2, 2))

    def test_orthonormal_factors(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 5, 6))
        model = hosvd(x, (2, 3, 4))
        for f in model.subspace.factors:
            assert np.linalg.norm(f.T @ f - np.eye(f.shape[1])) <= 1e-10

    def test_skip_modes_leaves_trailing_mode(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 5, 7))
        model = hosvd(x, (2, 2, 3), skip_modes=(3,))
        assert model.subspace.n_modes == 3
        assert model.core.shape == (2, 2, 3, 7)

    def test_skip_modes_must_be_trailing(self):
        with pytest.raises(ValueError, match="trailing"):
            hosvd(np.zeros((3, 4, 5)), (2, 3), skip_modes=(0,))

    def test_rank_deficient_unfolding_completed(self):
        # mode-0 slices are all equal: unfolding has rank 1, yet three
        # orthonormal columns are still produced.
        x = np.broadcast_to(np.random.default_rng(5).standard_normal((1, 4, 5)), (3, 4, 5))
        model = hosvd(np.array(x), (3, 2, 2))
        f = model.subspace.factors[0]
        assert np.linalg.norm(f.T @ f - np.eye(3)) <= 1e-10

    def test_deterministic_across_runs(self):
        rng_data = np.random.default_rng(6).standard_normal((4, 5, 6))
        a = hosvd(rng_data, (2, 2, 2))
        b = hosvd(rng_data.copy(), (2, 2, 2))
        for fa, fb in zip(a.subspace.factors, b.subspace.factors):
            assert np.array_equal(fa, fb)


class TestHooi:
    def test_exact_input_converges_in_one_sweep(self):
        rng = np.random.default_rng(7)
        x, _ = low_rank_tensor(rng, (5, 6, 7), (2, 2, 3))
        model = hooi(x, (2, 2, 3), max_sweeps=5)
        # initial HOSVD error plus exactly one refinement sweep
        assert len(model.sweep_errors) == 2
        assert model.sweep_errors[-1] <= 1e-8 * frobenius_norm(x)

    def test_never_worse_than_hosvd(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4, 5, 6))
        base = hosvd(x, (2, 2, 2))
        refined = hooi(x, (2, 2, 2))
        err_base = frobenius_norm(x - base.reconstruct())
        err_ref = frobenius_norm(x - refined.reconstruct())
        assert err_ref <= err_base + 1e-12

    def test_zero_sweeps_returns_hosvd(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 5, 6))
        base = hosvd(x, (2, 3, 2))
        same = hooi(x, (2, 3, 2), max_sweeps=0)
        for fa, fb in zip(base.subspace.factors, same.subspace.factors):
            assert np.array_equal(fa, fb)
        assert np.array_equal(base.core, same.core)

    def test_sweep_errors_monotone(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((5, 6, 7))
        model = hooi(x, (2, 2, 2), max_sweeps=8, tol=0.0)
        errs = model.sweep_errors
        for prev, cur in zip(errs, errs[1:]):
            assert cur <= prev + 1e-12 * (1 + errs[0])


class TestSubspace:
    def test_identity_projection_is_noop(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((3, 4, 5))
        sub = TensorSubspace(tuple(np.eye(n) for n in (3, 4, 5)))
        assert np.array_equal(sub.project(x), x)
        assert np.array_equal(sub.reconstruct(x), x)

    def test_project_reconstruct_project(self):
        rng = np.random.default_rng(12)
        sub = TensorSubspace(
            tuple(random_orthonormal(rng, n, d) for n, d in zip((5, 6, 7), (2, 3, 3)))
        )
        g = rng.standard_normal((2, 3, 3))
        back = sub.project(sub.reconstruct(g))
        assert frobenius_norm(back - g) <= 1e-10 * (1 + frobenius_norm(g))

    def test_projection_contracts_norm(self):
        rng = np.random.default_rng(13)
        sub = TensorSubspace(
            tuple(random_orthonormal(rng, n, d) for n, d in zip((5, 6, 7), (2, 3, 3)))
        )
        x = rng.standard_normal((5, 6, 7))
        assert frobenius_norm(sub.project(x)) <= frobenius_norm(x) + 1e-12
        assert frobenius_norm(sub.reconstruct(sub.project(x))) <= frobenius_norm(x) + 1e-12

    def test_adjoint_identity(self):
        rng = np.random.default_rng(14)
        sub = TensorSubspace(
            tuple(random_orthonormal(rng, n, d) for n, d in zip((5, 6, 7), (2, 3, 3)))
        )
        x = rng.standard_normal((5, 6, 7))
        g = rng.standard_normal((2, 3, 3))
        lhs = float(np.sum(sub.reconstruct(g) * x))
        rhs = float(np.sum(g * sub.project(x)))
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))

    def test_trailing_sample_mode_untouched(self):
        rng = np.random.default_rng(15)
        sub = TensorSubspace(
            tuple(random_orthonormal(rng, n, d) for n, d in zip((5, 6), (2, 3)))
        )
        batch = rng.standard_normal((5, 6, 9))
        cores = sub.project(batch)
        assert cores.shape == (2, 3, 9)
        for i in range(9):
            assert np.allclose(cores[..., i], sub.project(batch[..., i]))

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError, match="orthonormal"):
            TensorSubspace((np.ones((3, 2)),))

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(16)
        sub = TensorSubspace(
            tuple(random_orthonormal(rng, n, d) for n, d in zip((5, 6), (2, 3)))
        )
        with pytest.raises(ValueError, match="mode sizes"):
            sub.project(rng.standard_normal((6, 5)))
        with pytest.raises(ValueError, match="mode sizes"):
            sub.reconstruct(rng.standard_normal((3, 2)))
