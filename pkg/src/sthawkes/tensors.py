"""Third-order tensor algebra built on the circular convolution product.

A tensor here is a real ndarray of shape (N1, N2, N3); frontal slice k is
``T[:, :, k]``.  The block-circulant matrix of a tensor diagonalizes under
the discrete Fourier transform along the third mode, which is what every
fast path below exploits.  FFTs are unnormalized (numpy convention), so
Parseval reads ``norm(T)**2 == norm(fft_mode3(T))**2 / N3``.

Serialized text layout (used by :func:`write_tensor` / :func:`read_tensor`
and by the other file formats in this package): header ``tensor3 N1 N2 N3``
followed by the values slice by slice (third index slowest), each slice in
row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "bcirc",
    "fft_mode3",
    "fold",
    "ifft_mode3",
    "multi_rank",
    "prox_tnn",
    "read_tensor",
    "spectral_norm",
    "t_product",
    "t_svd",
    "t_transpose",
    "tnn",
    "TSvdFactors",
    "unfold",
    "write_tensor",
]


def _check_tensor3(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T)
    if T.ndim != 3:
        raise ValueError(f"expected a 3-way array, got shape {T.shape}")
    return T


def bcirc(T: np.ndarray) -> np.ndarray:
    """Block-circulant matrix of shape (N3*N1, N3*N2).

    Block (r, c) of the N3 x N3 block grid is frontal slice (r - c) mod N3,
    so the first block column stacks the slices in order.
    """
    T = _check_tensor3(T)
    n1, n2, n3 = T.shape
    out = np.empty((n3 * n1, n3 * n2), dtype=T.dtype)
    for r in range(n3):
        for c in range(n3):
            out[r * n1 : (r + 1) * n1, c * n2 : (c + 1) * n2] = T[:, :, (r - c) % n3]
    return out


def unfold(T: np.ndarray) -> np.ndarray:
    """Stack frontal slices vertically into an (N3*N1, N2) matrix."""
    T = _check_tensor3(T)
    n1, n2, n3 = T.shape
    return np.transpose(T, (2, 0, 1)).reshape(n3 * n1, n2)


def fold(M: np.ndarray, n1: int) -> np.ndarray:
    """Invert :func:`unfold`; row count must be a multiple of n1."""
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {M.shape}")
    rows, n2 = M.shape
    if n1 <= 0 or rows % n1 != 0:
        raise ValueError(f"row count {rows} is not a multiple of n1={n1}")
    n3 = rows // n1
    return np.transpose(M.reshape(n3, n1, n2), (1, 2, 0))


def fft_mode3(T: np.ndarray) -> np.ndarray:
    """Unnormalized DFT along the third mode."""
    return np.fft.fft(_check_tensor3(T), axis=2)


def ifft_mode3(T: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft_mode3` (carries the 1/N3 factor)."""
    return np.fft.ifft(_check_tensor3(T), axis=2)


def t_transpose(T: np.ndarray) -> np.ndarray:
    """Transpose each frontal slice and reverse the order of slices 2..N3."""
    T = _check_tensor3(T)
    out = np.transpose(T, (1, 0, 2)).copy()
    out[:, :, 1:] = out[:, :, :0:-1]
    return out


def t_product(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Circular-convolution tensor product, computed slice-wise in Fourier space.

    Equals fold(bcirc(A) @ unfold(B)).  Shapes (N1, N2, N3) x (N2, N4, N3)
    -> (N1, N4, N3).
    """
    A = _check_tensor3(A)
    B = _check_tensor3(B)
    if A.shape[1] != B.shape[0] or A.shape[2] != B.shape[2]:
        raise ValueError(f"incompatible shapes {A.shape} and {B.shape}")
    Ah = fft_mode3(A)
    Bh = fft_mode3(B)
    Ch = np.einsum("ijk,jlk->ilk", Ah, Bh)
    C = ifft_mode3(Ch)
    if np.isrealobj(A) and np.isrealobj(B):
        return C.real
    return C


@dataclass
class TSvdFactors:
    """Orthogonal-tensor factorization T = U * S * V^T (t-product sense)."""

    U: np.ndarray  # (N1, r, N3)
    S: np.ndarray  # (r, r, N3), f-diagonal
    V: np.ndarray  # (N2, r, N3)

    def compose(self) -> np.ndarray:
        return t_product(t_product(self.U, self.S), t_transpose(self.V))


def _fourier_svds(T: np.ndarray):
    """Reduced SVD of every Fourier slice, mirroring conjugate pairs.

    Slices 0..floor(N3/2) are decomposed directly; slice N3-k reuses the
    conjugate of slice k, which keeps the inverse transform exactly real.
    """
    Th = fft_mode3(T)
    n1, n2, n3 = T.shape
    r = min(n1, n2)
    U = np.empty((n1, r, n3), dtype=complex)
    s = np.empty((r, n3))
    V = np.empty((n2, r, n3), dtype=complex)
    for k in range(n3 // 2 + 1):
        u, sv, vh = np.linalg.svd(Th[:, :, k], full_matrices=False)
        U[:, :, k], s[:, k], V[:, :, k] = u, sv, vh.conj().T
        if 0 < k < (n3 + 1) // 2:
            U[:, :, n3 - k] = u.conj()
            s[:, n3 - k] = sv
            V[:, :, n3 - k] = vh.T
    return U, s, V


def t_svd(T: np.ndarray) -> TSvdFactors:
    """Tensor SVD via per-slice decomposition in the Fourier domain."""
    T = _check_tensor3(T)
    n3 = T.shape[2]
    Uh, s, Vh = _fourier_svds(T)
    r = s.shape[0]
    Sh = np.zeros((r, r, n3), dtype=complex)
    idx = np.arange(r)
    Sh[idx, idx, :] = s
    return TSvdFactors(
        U=ifft_mode3(Uh).real,
        S=ifft_mode3(Sh).real,
        V=ifft_mode3(Vh).real,
    )


def _fourier_singular_values(T: np.ndarray) -> np.ndarray:
    """Singular values of every Fourier slice, shape (min(N1,N2), N3)."""
    Th = fft_mode3(_check_tensor3(T))
    n3 = T.shape[2]
    s = np.empty((min(T.shape[0], T.shape[1]), n3))
    for k in range(n3 // 2 + 1):
        s[:, k] = np.linalg.svd(Th[:, :, k], compute_uv=False)
        if 0 < k < (n3 + 1) // 2:
            s[:, n3 - k] = s[:, k]
    return s


def tnn(T: np.ndarray) -> float:
    """Tubal nuclear norm: nuclear norm of bcirc(T), i.e. the sum of the
    singular values of all N3 Fourier slices."""
    return float(_fourier_singular_values(T).sum())


def spectral_norm(T: np.ndarray) -> float:
    """Operator norm of bcirc(T): largest Fourier-slice singular value."""
    s = _fourier_singular_values(T)
    return float(s.max()) if s.size else 0.0


def multi_rank(T: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Per-Fourier-slice ranks; singular values below tol * global max count
    as zero.  The sum of the entries is the rank of bcirc(T)."""
    s = _fourier_singular_values(T)
    cutoff = tol * (s.max() if s.size else 0.0)
    return (s > cutoff).sum(axis=0).astype(int)


def prox_tnn(X: np.ndarray, kappa: float) -> np.ndarray:
    """Minimizer of kappa * tnn(R) + 0.5 * ||R - X||_F^2.

    Soft-thresholds the singular values of each Fourier slice at kappa * N3;
    the N3 factor compensates the unnormalized transform (Parseval).
    """
    X = _check_tensor3(X)
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    n1, n2, n3 = X.shape
    Xh = fft_mode3(X)
    Rh = np.empty_like(Xh)
    thr = kappa * n3
    for k in range(n3 // 2 + 1):
        u, s, vh = np.linalg.svd(Xh[:, :, k], full_matrices=False)
        s = np.maximum(s - thr, 0.0)
        Rh[:, :, k] = (u * s) @ vh
        if 0 < k < (n3 + 1) // 2:
            Rh[:, :, n3 - k] = Rh[:, :, k].conj()
    R = ifft_mode3(Rh)
    return R.real


def write_tensor(path, T: np.ndarray) -> None:
    """Write a tensor in the text layout described in the module docstring."""
    T = _check_tensor3(T)
    n1, n2, n3 = T.shape
    with open(path, "w") as fh:
        fh.write(f"tensor3 {n1} {n2} {n3}\n")
        for k in range(n3):
            fh.write(" ".join(repr(float(v)) for v in T[:, :, k].ravel()) + "\n")


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "tensor3":
            raise ValueError(f"{path}: not a tensor3 file")
        try:
            n1, n2, n3 = (int(tok) for tok in header[1:])
        except ValueError as exc:
            raise ValueError(f"{path}: bad tensor3 header") from exc
        if min(n1, n2, n3) <= 0:
            raise ValueError(f"{path}: nonpositive dimension in header")
        vals = np.loadtxt(fh, ndmin=1).ravel()
    if vals.size != n1 * n2 * n3:
        raise ValueError(
            f"{path}: expected {n1 * n2 * n3} values, found {vals.size}"
        )
    return np.transpose(vals.reshape(n3, n1, n2), (1, 2, 0))


def tensor_to_vec(T: np.ndarray) -> np.ndarray:
    """Flatten in the serialized layout order (slice-major, row-major)."""
    return np.transpose(_check_tensor3(T), (2, 0, 1)).ravel()


def vec_to_tensor(v: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`tensor_to_vec` for a given shape."""
    n1, n2, n3 = shape
    v = np.asarray(v).ravel()
    if v.size != n1 * n2 * n3:
        raise ValueError(f"vector of size {v.size} cannot fill shape {shape}")
    return np.transpose(v.reshape(n3, n1, n2), (1, 2, 0))
