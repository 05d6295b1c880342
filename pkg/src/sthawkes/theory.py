"""Information measures and data-driven error certificates.

Poisson divergences, the design condition number, the squared parameter
error, and the three bound evaluators that turn one observed count
series plus a box description into certified error levels.
"""

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import NumericalError
from .model import BinCounts, FeasibleSet, HawkesParams, design_gram
from .tensors import spectral_norm


def kl_poisson(p, q):
    """KL divergence p*log(p/q) - (p - q) between Poisson means.

    Accepts scalars or arrays; uses the 0*log(0) = 0 convention.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0.0):
        raise ValueError("second Poisson mean must be > 0")
    if np.any(p < 0.0):
        raise ValueError("first Poisson mean must be >= 0")
    logterm = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0) / q), 0.0)
    out = logterm - (p - q)
    return float(out) if out.ndim == 0 else out


def hellinger_poisson(p, q):
    """Squared Hellinger distance 2 - 2*exp(-(sqrt(p)-sqrt(q))^2 / 2)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise ValueError("Poisson means must be >= 0")
    out = 2.0 - 2.0 * np.exp(-0.5 * (np.sqrt(p) - np.sqrt(q)) ** 2)
    return float(out) if out.ndim == 0 else out


def condition_number_2(A) -> float:
    """Largest delta with g'Ag >= delta*||g||_2^2 for all g.

    For a symmetric PSD matrix this is the smallest eigenvalue; tiny
    negative values from finite precision are clamped to zero.  The input
    must be symmetric within 1e-10.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    w = np.linalg.eigvalsh(A)
    return float(max(w[0], 0.0))


def sq_error(true: HawkesParams, est: HawkesParams) -> float:
    """Squared parameter distance, base rates plus kernel, Frobenius."""
    if true.mu.shape != est.mu.shape or true.G.shape != est.G.shape:
        raise ValueError("parameter shapes do not match")
    return float(np.sum((true.mu - est.mu) ** 2) + np.sum((true.G - est.G) ** 2))


def window_l1_min(Z: BinCounts) -> float:
    """Smallest total count among the K lag windows."""
    return float(min(int(Z.window(k).sum()) for k in range(Z.K)))


def window_spec_max(Z: BinCounts, embedded: bool = False) -> float:
    """Largest spectral norm among the K lag windows.

    The default measures the raw n1 x n2 x p window.  ``embedded=True``
    measures the kernel-shaped embedded copies instead (the alternative
    reading; max over cells as well as bins) for comparison.
    """
    from .model import window_embed

    best = 0.0
    for k in range(Z.K):
        W = Z.window(k).astype(float)
        if embedded:
            for i in range(Z.n1):
                for j in range(Z.n2):
                    best = max(best, spectral_norm(window_embed(W, i, j)))
        else:
            best = max(best, spectral_norm(W))
    return best


@dataclasses.dataclass(frozen=True)
class BoundInputs:
    """One observed series, its box description, and the failure budgets."""

    fs: FeasibleSet
    Z: BinCounts
    alpha1: float
    alpha2: float

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            a = getattr(self, name)
            if not 0.0 < a < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {a}")
        if not self.alpha1 + self.alpha2 < 1.0:
            raise ValueError("alpha1 + alpha2 must be < 1")


@dataclasses.dataclass(frozen=True)
class BoundReport:
    """Evaluated certificate with the intermediate envelope quantities."""

    J_lower: float
    J_upper: float
    T: float
    delta2: float
    bound_value: float
    confidence: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _log_terms(n1, n2, K, alpha1, alpha2):
    L1 = math.log(2.0 * n1 * n2 * K / alpha1)
    L2 = math.log(2.0 * n1 * n2 / alpha2)
    return L1, L2


def _bracket(K, delta, J_up, L1, L2):
    """Three-term sum under the outer square root of the error bounds."""
    radicand = L1 * (L1 + 2.0 * delta * J_up)
    if radicand < 0.0:
        raise NumericalError("negative radicand in the bound bracket")
    return (
        K * L1 * L1 * L2
        + delta * J_up * K * L1 * L2
        + K * L1 * L2 * math.sqrt(radicand)
    )


def _growth_ratio(T) -> float:
    """T / (1 - exp(-T)) extended by its limit 1 at T = 0."""
    if T < 1e-12:
        return 1.0
    return T / -math.expm1(-T)


def _envelope(fs: FeasibleSet, Z: BinCounts):
    """(J_lower, J_upper) intensity envelope measured from the data."""
    n1, n2, p = Z.n1, Z.n2, Z.p
    scale = math.sqrt(fs.gamma * (2 * n1 - 1) * (2 * n2 - 1) * p)
    J_lo = fs.a1 + fs.a2 * window_l1_min(Z)
    J_up = fs.b1 + fs.b2 * scale * window_spec_max(Z)
    if J_lo <= 0.0:
        raise NumericalError("degenerate lower intensity")
    if J_up < J_lo:
        raise NumericalError("inconsistent intensity envelope")
    return J_lo, J_up


def _theorem3_value(J_lo, J_up, delta2, n1, n2, K, delta, alpha1, alpha2):
    T = (J_up - J_lo) ** 2 / (8.0 * J_lo)
    L1, L2 = _log_terms(n1, n2, K, alpha1, alpha2)
    pref = (
        8.0
        * J_up
        * n1
        * n2
        * abs(math.log(delta * J_up))
        * _growth_ratio(T)
        / (K * delta * delta2)
    )
    return T, pref * math.sqrt(_bracket(K, delta, J_up, L1, L2))


def bound_theorem3(inp: BoundInputs) -> BoundReport:
    """Squared-error certificate holding with probability >= confidence.

    Everything is measured from the data: the intensity envelope from the
    lag windows, the design conditioning from the empirical second-moment
    matrix.  A singular design or a zero lower envelope leaves the bound
    undefined and raises NumericalError.
    """
    Z = inp.Z
    J_lo, J_up = _envelope(inp.fs, Z)
    delta2 = condition_number_2(design_gram(Z))
    if delta2 <= 0.0:
        raise NumericalError("singular design")
    T, value = _theorem3_value(
        J_lo, J_up, delta2, Z.n1, Z.n2, Z.K, Z.delta, inp.alpha1, inp.alpha2
    )
    return BoundReport(
        J_lower=J_lo,
        J_upper=J_up,
        T=T,
        delta2=delta2,
        bound_value=value,
        confidence=1.0 - inp.alpha1 - inp.alpha2,
    )


def _corollary1_value(J_up, n1, n2, K, delta, alpha1, alpha2):
    L1, L2 = _log_terms(n1, n2, K, alpha1, alpha2)
    return (
        2.0
        * abs(math.log(J_up))
        / (K * delta)
        * math.sqrt(_bracket(K, delta, J_up, L1, L2))
    )


def bound_corollary1(inp: BoundInputs) -> float:
    """Certified level for the per-bin average KL divergence between the
    true and estimated intensities, holding with the same confidence and
    the same failure conditions as the squared-error certificate."""
    Z = inp.Z
    J_lo, J_up = _envelope(inp.fs, Z)
    if condition_number_2(design_gram(Z)) <= 0.0:
        raise NumericalError("singular design")
    return _corollary1_value(
        J_up, Z.n1, Z.n2, Z.K, Z.delta, inp.alpha1, inp.alpha2
    )


def bound_remark2(c1, c2, inp: BoundInputs) -> float:
    """Deterministic certificate from externally supplied envelope constants.

    ``c1`` must dominate the measured upper envelope and ``c2`` must be a
    certified design floor; both conditions are checked against the data
    and a violation raises NumericalError rather than returning a number
    whose premise fails.
    """
    fs, Z = inp.fs, inp.Z
    n1, n2, K, delta = Z.n1, Z.n2, Z.K, Z.delta
    if not c2 > 0.0:
        raise ValueError("c2 must be > 0")
    if fs.a1 <= 0.0:
        raise NumericalError("degenerate lower intensity")
    scale = fs.b2 * math.sqrt(fs.gamma * (2 * n1 - 1) * (2 * n2 - 1) * Z.p)
    spec_max = window_spec_max(Z)
    if scale > 0.0:
        certified = spec_max <= (c1 - fs.b1) / scale
    else:
        certified = c1 >= fs.b1
    if not certified:
        raise NumericalError("constants not certified by data")
    if condition_number_2(design_gram(Z)) < c2:
        raise NumericalError("constants not certified by data")

    L1, L2 = _log_terms(n1, n2, K, inp.alpha1, inp.alpha2)
    T = (c1 - fs.a1) ** 2 / (8.0 * fs.a1)
    mid = 8.0 * max(
        abs(math.log(delta * fs.b1)), abs(math.log(delta * c1))
    ) * _growth_ratio(T)
    radicand = L1 * (L1 + 2.0 * delta * c1)
    if radicand < 0.0:
        raise NumericalError("negative radicand in the bound bracket")
    tail = L1 + math.sqrt(radicand)
    return (
        c1 * n1 * n2 / (K * delta * c2) * math.sqrt(0.5 * K * L2) * mid * tail
    )
