"""Discrete-time, gridded self-exciting count model.

Counts in cell (i, j) at time bin k are conditionally Poisson with mean
``delta * lam[i, j, k]`` where

    lam[i,j,k] = mu[i,j] + sum_{c=1..p} sum_{i',j'}
                 G[i-i'+n1-1, j-j'+n2-1, c-1] * Z[i', j', k-c]

mu is the n1 x n2 base rate and G the (2n1-1) x (2n2-1) x p excitation
kernel indexed by spatial displacement and time lag.  All cell indices in
this module are 0-based; time bins of the observed span are k = 0..K-1 and
are stored after a p-layer history prefix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import NumericalError
from .tensors import tensor_to_vec, tnn, vec_to_tensor

INTENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class FeasibleSet:
    """Box bounds for (mu, G) plus the multi-rank budget gamma."""

    a1: float
    b1: float
    a2: float
    b2: float
    gamma: int

    def __post_init__(self):
        if not (0 <= self.a1 <= self.b1):
            raise ValueError(f"need 0 <= a1 <= b1, got a1={self.a1}, b1={self.b1}")
        if not (0 <= self.a2 <= self.b2):
            raise ValueError(f"need 0 <= a2 <= b2, got a2={self.a2}, b2={self.b2}")
        if self.gamma < 1:
            raise ValueError(f"gamma must be a positive integer, got {self.gamma}")

    def tnn_radius(self, n1: int, n2: int, p: int) -> float:
        """Induced bound on tnn(G) for box-feasible G of multi-rank sum gamma."""
        return self.b2 * np.sqrt(self.gamma * (2 * n1 - 1) * (2 * n2 - 1) * p)


@dataclass
class HawkesParams:
    """Model parameters: base-rate matrix mu and excitation kernel G."""

    mu: np.ndarray  # (n1, n2)
    G: np.ndarray  # (2*n1-1, 2*n2-1, p)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        if self.mu.ndim != 2:
            raise ValueError(f"mu must be a matrix, got shape {self.mu.shape}")
        n1, n2 = self.mu.shape
        if self.G.ndim != 3 or self.G.shape[:2] != (2 * n1 - 1, 2 * n2 - 1):
            raise ValueError(
                f"G shape {self.G.shape} incompatible with mu shape {self.mu.shape}"
            )
        if not (np.isfinite(self.mu).all() and np.isfinite(self.G).all()):
            raise ValueError("parameters must be finite")
        if (self.mu < 0).any() or (self.G < 0).any():
            raise ValueError("parameters must be nonnegative")

    @property
    def n1(self) -> int:
        return self.mu.shape[0]

    @property
    def n2(self) -> int:
        return self.mu.shape[1]

    @property
    def p(self) -> int:
        return self.G.shape[2]

    def in_box(self, fs: FeasibleSet, tol: float = 0.0) -> bool:
        return bool(
            (self.mu >= fs.a1 - tol).all()
            and (self.mu <= fs.b1 + tol).all()
            and (self.G >= fs.a2 - tol).all()
            and (self.G <= fs.b2 + tol).all()
        )

    def save(self, path) -> None:
        doc = {
            "n1": self.n1,
            "n2": self.n2,
            "p": self.p,
            "mu": self.mu.ravel().tolist(),
            "G": tensor_to_vec(self.G).tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HawkesParams":
        with open(path) as fh:
            doc = json.load(fh)
        try:
            n1, n2, p = int(doc["n1"]), int(doc["n2"]), int(doc["p"])
            mu = np.asarray(doc["mu"], dtype=float).reshape(n1, n2)
            G = vec_to_tensor(
                np.asarray(doc["G"], dtype=float), (2 * n1 - 1, 2 * n2 - 1, p)
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: malformed parameter file: {exc}") from exc
        return cls(mu=mu, G=G)


@dataclass
class BinCounts:
    """Gridded event counts with a p-layer history prefix.

    ``counts`` has shape (n1, n2, K+p); layers 0..p-1 hold the history bins
    and layer p+k holds observed bin k.  ``delta`` is the bin volume.
    """

    counts: np.ndarray
    p: int
    delta: float
    _float_counts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3:
            raise ValueError(f"counts must be 3-way, got shape {c.shape}")
        if self.p < 1 or c.shape[2] <= self.p:
            raise ValueError(
                f"need at least one observed bin beyond the p={self.p} history layers"
            )
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.equal(np.mod(c, 1), 0).all():
                raise ValueError("counts must be integral")
            c = c.astype(np.int64)
        self.counts = c
        self._float_counts = c.astype(float)

    @property
    def n1(self) -> int:
        return self.counts.shape[0]

    @property
    def n2(self) -> int:
        return self.counts.shape[1]

    @property
    def K(self) -> int:
        return self.counts.shape[2] - self.p

    @property
    def main(self) -> np.ndarray:
        """Observed bins, shape (n1, n2, K)."""
        return self.counts[:, :, self.p :]

    @property
    def history(self) -> np.ndarray:
        """The p history layers preceding bin 0."""
        return self.counts[:, :, : self.p]

    def window(self, k: int) -> np.ndarray:
        """The p bins strictly before observed bin k, oldest first.

        Valid for k = 0..K (k = K gives the window of the next unseen bin).
        """
        if not 0 <= k <= self.K:
            raise IndexError(f"bin index {k} outside 0..{self.K}")
        return self.counts[:, :, k : k + self.p]

    def save(self, path) -> None:
        n1, n2, K, p = self.n1, self.n2, self.K, self.p
        with open(path, "w") as fh:
            fh.write(f"bincounts {n1} {n2} {K} {p} {self.delta!r}\n")
            for layer in range(K + p):
                fh.write(
                    " ".join(str(int(v)) for v in self.counts[:, :, layer].ravel())
                    + "\n"
                )

    @classmethod
    def load(cls, path) -> "BinCounts":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 6 or header[0] != "bincounts":
                raise ValueError(f"{path}: not a bincounts file")
            try:
                n1, n2, K, p = (int(tok) for tok in header[1:5])
                delta = float(header[5])
            except ValueError as exc:
                raise ValueError(f"{path}: bad bincounts header") from exc
            vals = np.loadtxt(fh, ndmin=1).ravel()
        if vals.size != n1 * n2 * (K + p):
            raise ValueError(
                f"{path}: expected {n1 * n2 * (K + p)} values, found {vals.size}"
            )
        counts = np.transpose(vals.reshape(K + p, n1, n2), (1, 2, 0))
        return cls(counts=counts, p=p, delta=delta)


def _check_dims(params: HawkesParams, Z: BinCounts) -> None:
    if (params.n1, params.n2, params.p) != (Z.n1, Z.n2, Z.p):
        raise ValueError(
            f"params dims ({params.n1},{params.n2},p={params.p}) do not match "
            f"data dims ({Z.n1},{Z.n2},p={Z.p})"
        )


def intensity(params: HawkesParams, Z: BinCounts, i: int, j: int, k: int) -> float:
    """Conditional intensity of cell (i, j) at observed bin k (all 0-based)."""
    _check_dims(params, Z)
    n1, n2 = params.n1, params.n2
    if not (0 <= i < n1 and 0 <= j < n2):
        raise IndexError(f"cell ({i},{j}) outside {n1}x{n2} grid")
    if not (0 <= k < Z.K):
        raise IndexError(f"bin {k} outside observed range 0..{Z.K - 1}")
    win = Z.window(k).astype(float)
    block = params.G[i : i + n1, j : j + n2, :][::-1, ::-1, ::-1]
    return float(params.mu[i, j] + np.sum(block * win))


def intensity_all(params: HawkesParams, Z: BinCounts) -> np.ndarray:
    """All conditional intensities at once, shape (n1, n2, K).

    The excitation term is the 3-D correlation of the counts with the
    kernel, realized as one dense convolution over the padded array.
    """
    _check_dims(params, Z)
    n1, n2, p, K = params.n1, params.n2, params.p, Z.K
    conv = signal.convolve(Z._float_counts, params.G, mode="full", method="auto")
    exc = conv[n1 - 1 : 2 * n1 - 1, n2 - 1 : 2 * n2 - 1, p - 1 : p - 1 + K]
    return params.mu[:, :, None] + exc


def window_embed(window: np.ndarray, i: int, j: int) -> np.ndarray:
    """Linear embedding of a history window into kernel index space.

    Returns the (2n1-1) x (2n2-1) x p tensor W with
    <W, G> = excitation part of lam[i, j] for that window, i.e. the flipped
    window placed at offset (i, j), zero elsewhere.
    """
    window = np.asarray(window, dtype=float)
    if window.ndim != 3:
        raise ValueError(f"window must be 3-way, got shape {window.shape}")
    n1, n2, p = window.shape
    if not (0 <= i < n1 and 0 <= j < n2):
        raise IndexError(f"cell ({i},{j}) outside {n1}x{n2} grid")
    W = np.zeros((2 * n1 - 1, 2 * n2 - 1, p))
    W[i : i + n1, j : j + n2, :] = window[::-1, ::-1, ::-1]
    return W


def neg_log_likelihood(params: HawkesParams, Z: BinCounts) -> float:
    """Negative log-likelihood of the observed bins (history conditioned on).

    Sum over bins of ``delta*lam - Z*log(delta*lam)``; the log argument is
    floored at INTENSITY_FLOOR * delta to survive exact-zero intensities.
    """
    lam = intensity_all(params, Z)
    Zm = Z.main
    loglam = np.log(np.maximum(lam, INTENSITY_FLOOR) * Z.delta)
    val = float(Z.delta * lam.sum() - np.sum(Zm * loglam, where=Zm > 0))
    if not np.isfinite(val):
        raise NumericalError("negative log-likelihood is not finite")
    return val


def nll_gradient(params: HawkesParams, Z: BinCounts):
    """Gradient of neg_log_likelihood w.r.t. (mu, G).

    The G part is the correlation of the per-bin residual delta - Z/lam
    with the counts, which reuses the convolution layout of intensity_all.
    """
    _check_dims(params, Z)
    n1, n2, p, K = params.n1, params.n2, params.p, Z.K
    lam = np.maximum(intensity_all(params, Z), INTENSITY_FLOOR)
    resid = Z.delta - Z.main / lam
    grad_mu = resid.sum(axis=2)
    zflip = Z._float_counts[::-1, ::-1, ::-1]
    conv = signal.convolve(resid, zflip, mode="full", method="auto")
    grad_G = conv[:, :, K : K + p]
    return grad_mu, grad_G


def param_vec(params: HawkesParams) -> np.ndarray:
    """Stack [vec(mu); vec(G)] in the package's fixed vectorization order
    (mu column-major, G in serialized tensor order)."""
    return np.concatenate([params.mu.ravel(order="F"), tensor_to_vec(params.G)])


def design_row(window: np.ndarray, i: int, j: int) -> np.ndarray:
    """Regression vector c with c . param_vec = lam[i, j] for this window."""
    n1, n2 = window.shape[:2]
    e = np.zeros(n1 * n2)
    e[i + j * n1] = 1.0
    return np.concatenate([e, tensor_to_vec(window_embed(window, i, j))])


def design_gram(Z: BinCounts, chunk: int = 256) -> np.ndarray:
    """Empirical second-moment matrix of the regression vectors.

    A = (1/K) sum over bins (i, j, k) of c c^T, accumulated over time
    chunks in fixed order.  Symmetric PSD of size d = n1*n2 + kernel size.
    """
    n1, n2, p, K = Z.n1, Z.n2, Z.p, Z.K
    d = n1 * n2 + (2 * n1 - 1) * (2 * n2 - 1) * p
    A = np.zeros((d, d))
    rows = np.empty((n1 * n2, d))
    for start in range(0, K, chunk):
        ks = range(start, min(start + chunk, K))
        block = np.empty((len(ks) * n1 * n2, d))
        for t, k in enumerate(ks):
            win = Z.window(k).astype(float)
            r = 0
            for i in range(n1):
                for j in range(n2):
                    rows[r] = design_row(win, i, j)
                    r += 1
            block[t * n1 * n2 : (t + 1) * n1 * n2] = rows
        A += block.T @ block
    A /= K
    return (A + A.T) / 2


def project_box(params: HawkesParams, fs: FeasibleSet) -> HawkesParams:
    """Clip mu into [a1, b1] and G into [a2, b2]."""
    return HawkesParams(
        mu=np.clip(params.mu, fs.a1, fs.b1), G=np.clip(params.G, fs.a2, fs.b2)
    )


def kernel_tnn(params: HawkesParams) -> float:
    """Tubal nuclear norm of the excitation kernel."""
    return tnn(params.G)
