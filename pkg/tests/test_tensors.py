"""Tensor algebra checks against dense block-circulant oracles."""

import numpy as np
import pytest

from sthawkes import tensors as tn


def dense_tnn(T):
    """Oracle: nuclear norm of the explicit block-circulant matrix."""
    return np.linalg.svd(tn.bcirc(T), compute_uv=False).sum()


def dense_spectral(T):
    return np.linalg.svd(tn.bcirc(T), compute_uv=False).max()


def bcirc_adjoint(W, shape):
    """Adjoint of the bcirc embedding: accumulate block (r, c) into slice
    (r - c) mod N3."""
    n1, n2, n3 = shape
    out = np.zeros(shape)
    for r in range(n3):
        for c in range(n3):
            out[:, :, (r - c) % n3] += W[r * n1 : (r + 1) * n1, c * n2 : (c + 1) * n2]
    return out


def prox_objective(R, X, kappa):
    return kappa * dense_tnn(R) + 0.5 * np.sum((R - X) ** 2)


def prox_oracle(X, kappa, iters=800):
    """Subgradient descent on the prox objective, dense-matrix path only.

    The quadratic term makes the objective 1-strongly convex; a geometric
    step decay then drives the iterate into a shrinking ball around the
    minimizer.  Returns the final iterate.
    """
    R = X.copy()
    step = 0.5
    for t in range(iters):
        U, _, Vh = np.linalg.svd(tn.bcirc(R), full_matrices=False)
        sub = bcirc_adjoint(U @ Vh, X.shape) / X.shape[2]
        # each tensor entry appears N3 times in bcirc, hence the 1/N3 above
        R = R - step * (kappa * X.shape[2] * sub + (R - X))
        if (t + 1) % 40 == 0:
            step *= 0.5
    return R


class TestBcircUnfold:
    def test_block_layout(self):
        rng = np.random.default_rng(0)
        T = rng.normal(size=(2, 3, 4))
        B = tn.bcirc(T)
        assert B.shape == (8, 12)
        for r in range(4):
            for c in range(4):
                np.testing.assert_array_equal(
                    B[2 * r : 2 * r + 2, 3 * c : 3 * c + 3], T[:, :, (r - c) % 4]
                )
        # first block column is the unfolding
        np.testing.assert_array_equal(B[:, :3], tn.unfold(T))

    def test_fold_roundtrip(self):
        rng = np.random.default_rng(1)
        T = rng.normal(size=(3, 2, 5))
        np.testing.assert_array_equal(tn.fold(tn.unfold(T), 3), T)

    def test_fold_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            tn.fold(np.zeros((7, 2)), 3)

    def test_tensor3_validation(self):
        with pytest.raises(ValueError):
            tn.bcirc(np.zeros((2, 2)))


class TestFourier:
    def test_two_point_fiber(self):
        T = np.zeros((1, 1, 2))
        T[0, 0] = [3.0, 1.0]
        np.testing.assert_allclose(tn.fft_mode3(T)[0, 0], [4.0, 2.0])

    def test_conjugate_symmetry(self):
        rng = np.random.default_rng(2)
        T = rng.normal(size=(3, 4, 6))
        Th = tn.fft_mode3(T)
        for k in range(1, 6):
            np.testing.assert_allclose(Th[:, :, k], Th[:, :, 6 - k].conj(), atol=1e-12)

    def test_inverse(self):
        rng = np.random.default_rng(3)
        T = rng.normal(size=(2, 2, 5))
        np.testing.assert_allclose(tn.ifft_mode3(tn.fft_mode3(T)).real, T, atol=1e-12)

    def test_parseval_unnormalized(self):
        rng = np.random.default_rng(4)
        T = rng.normal(size=(3, 2, 4))
        np.testing.assert_allclose(
            np.linalg.norm(tn.fft_mode3(T)) ** 2 / 4, np.linalg.norm(T) ** 2
        )


class TestTProduct:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n1, n2, n3, n4 = rng.integers(1, 5, size=4)
            A = rng.normal(size=(n1, n2, n3))
            B = rng.normal(size=(n2, n4, n3))
            expect = tn.fold(tn.bcirc(A) @ tn.unfold(B), n1)
            np.testing.assert_allclose(tn.t_product(A, B), expect, atol=1e-10)

    def test_identity_element(self):
        rng = np.random.default_rng(6)
        T = rng.normal(size=(3, 2, 4))
        E = np.zeros((3, 3, 4))
        E[:, :, 0] = np.eye(3)
        np.testing.assert_allclose(tn.t_product(E, T), T, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            tn.t_product(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)))
        with pytest.raises(ValueError):
            tn.t_product(np.zeros((2, 3, 4)), np.zeros((3, 2, 5)))


class TestTSvd:
    def test_reconstruction(self):
        rng = np.random.default_rng(7)
        for shape in [(2, 2, 2), (3, 4, 5), (4, 2, 3), (1, 1, 4)]:
            T = rng.normal(size=shape)
            fac = tn.t_svd(T)
            np.testing.assert_allclose(fac.compose(), T, atol=1e-10)

    def test_factors_real_and_orthogonal(self):
        rng = np.random.default_rng(8)
        T = rng.normal(size=(4, 3, 5))
        fac = tn.t_svd(T)
        assert fac.U.dtype.kind == "f" and fac.V.dtype.kind == "f"
        r = fac.S.shape[0]
        eye = np.zeros((r, r, 5))
        eye[:, :, 0] = np.eye(r)
        np.testing.assert_allclose(
            tn.t_product(tn.t_transpose(fac.U), fac.U), eye, atol=1e-10
        )
        np.testing.assert_allclose(
            tn.t_product(tn.t_transpose(fac.V), fac.V), eye, atol=1e-10
        )

    def test_fourier_spectrum_sorted_nonnegative(self):
        rng = np.random.default_rng(9)
        T = rng.normal(size=(3, 3, 4))
        Sh = tn.fft_mode3(tn.t_svd(T).S)
        for k in range(4):
            d = np.diagonal(Sh[:, :, k]).real
            assert np.all(d >= -1e-10)
            assert np.all(np.diff(d) <= 1e-10)
            np.testing.assert_allclose(np.diagonal(Sh[:, :, k]).imag, 0, atol=1e-10)


class TestNorms:
    def test_tube_example(self):
        T = np.zeros((1, 1, 2))
        T[0, 0] = [3.0, 1.0]
        assert tn.tnn(T) == pytest.approx(6.0)
        assert tn.spectral_norm(T) == pytest.approx(4.0)

    def test_tnn_matches_dense(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            shape = tuple(rng.integers(1, 5, size=3))
            T = rng.normal(size=shape)
            np.testing.assert_allclose(tn.tnn(T), dense_tnn(T), rtol=1e-10)

    def test_spectral_matches_dense(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            shape = tuple(rng.integers(1, 5, size=3))
            T = rng.normal(size=shape)
            np.testing.assert_allclose(
                tn.spectral_norm(T), dense_spectral(T), rtol=1e-10
            )

    def test_transpose_invariance(self):
        rng = np.random.default_rng(12)
        T = rng.normal(size=(3, 4, 5))
        np.testing.assert_allclose(tn.tnn(tn.t_transpose(T)), tn.tnn(T), rtol=1e-10)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(13)
        A = rng.normal(size=(3, 3, 4))
        B = rng.normal(size=(3, 3, 4))
        assert tn.tnn(A + B) <= tn.tnn(A) + tn.tnn(B) + 1e-9

    def test_multi_rank_rank_one(self):
        rng = np.random.default_rng(14)
        u1, u2, u3 = rng.uniform(size=3), rng.uniform(size=4), rng.uniform(size=5)
        T = np.einsum("i,j,k->ijk", u1, u2, u3)
        ranks = tn.multi_rank(T, 1e-10)
        assert ranks.shape == (5,)
        assert np.all(ranks <= 1)
        assert ranks.sum() == np.linalg.matrix_rank(tn.bcirc(T))

    def test_multi_rank_sums_to_bcirc_rank(self):
        rng = np.random.default_rng(15)
        T = rng.normal(size=(3, 3, 4))
        assert tn.multi_rank(T).sum() == np.linalg.matrix_rank(tn.bcirc(T))


class TestProxTnn:
    def test_zero_threshold_is_identity(self):
        rng = np.random.default_rng(16)
        X = rng.normal(size=(3, 2, 4))
        np.testing.assert_allclose(tn.prox_tnn(X, 0.0), X, atol=1e-12)

    def test_full_shrinkage(self):
        rng = np.random.default_rng(17)
        X = rng.normal(size=(3, 3, 4))
        kappa = tn.spectral_norm(X) / 4 + 1e-9
        np.testing.assert_allclose(tn.prox_tnn(X, kappa), 0, atol=1e-10)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            tn.prox_tnn(np.zeros((1, 1, 1)), -0.1)

    def test_matches_subgradient_oracle(self):
        rng = np.random.default_rng(18)
        X = rng.normal(size=(2, 2, 2))
        R = tn.prox_tnn(X, 0.3)
        R_ref = prox_oracle(X, 0.3)
        assert prox_objective(R, X, 0.3) <= prox_objective(R_ref, X, 0.3) + 1e-6
        np.testing.assert_allclose(R, R_ref, atol=1e-4)

    def test_improves_objective(self):
        rng = np.random.default_rng(19)
        for kappa in [0.05, 0.2, 1.0]:
            X = rng.normal(size=(3, 4, 3))
            R = tn.prox_tnn(X, kappa)
            assert prox_objective(R, X, kappa) <= prox_objective(X, X, kappa) + 1e-9


class TestTextFormat:
    def test_golden_layout(self, tmp_path):
        T = np.zeros((1, 2, 2))
        T[0, :, 0] = [1, 2]
        T[0, :, 1] = [3, 4]
        path = tmp_path / "t.txt"
        tn.write_tensor(path, T)
        body = path.read_text().splitlines()
        assert body[0] == "tensor3 1 2 2"
        assert [float(v) for v in body[1].split()] == [1.0, 2.0]
        assert [float(v) for v in body[2].split()] == [3.0, 4.0]

    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(20)
        T = rng.normal(size=(3, 4, 5))
        path = tmp_path / "t.txt"
        tn.write_tensor(path, T)
        np.testing.assert_array_equal(tn.read_tensor(path), T)

    def test_header_errors(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("tensor 1 2 2\n1 2 3 4\n")
        with pytest.raises(ValueError):
            tn.read_tensor(bad)
        bad.write_text("tensor3 1 2\n1 2\n")
        with pytest.raises(ValueError):
            tn.read_tensor(bad)
        bad.write_text("tensor3 1 2 2\n1 2 3\n")
        with pytest.raises(ValueError):
            tn.read_tensor(bad)

    def test_vec_layout_matches_file_order(self):
        rng = np.random.default_rng(21)
        T = rng.normal(size=(2, 3, 4))
        v = tn.tensor_to_vec(T)
        k, i, j = 2, 1, 2
        assert v[k * 6 + i * 3 + j] == T[i, j, k]
        np.testing.assert_array_equal(tn.vec_to_tensor(v, (2, 3, 4)), T)
