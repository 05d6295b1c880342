"""Penalized maximum-likelihood fitting by ADMM with an MM inner solver.

The optimization splits the variables into consensus copies: (mu, G) carry
the likelihood, R carries the tensor nuclear norm, and (m, Gaux) carry the
box constraints.  Each outer iteration minorizes the Poisson likelihood at
the current point (Jensen split of log lambda), solves the resulting
per-entry quadratics in closed form, applies the nuclear-norm prox and the
box clips, and ascends the duals.

Setting ``tau=0`` or ``mode="MLE"`` removes the nuclear-norm block
entirely, so both routes run the identical code path and produce identical
traces.

All heavy contractions against the fixed count array are precomputed once
per fit (lagged data matrices and a displacement index map), which makes
an MM step O(p * (n1*n2)^2 * K) dense arithmetic instead of repeated FFT
convolutions.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .model import (
    INTENSITY_FLOOR,
    BinCounts,
    FeasibleSet,
    HawkesParams,
    neg_log_likelihood,
)
from .tensors import prox_tnn, tnn

_MODES = ("TNN", "MLE")
_INNER_REL_TOL = 1e-6


@dataclass(frozen=True)
class AdmmConfig:
    rho: float
    tau: float
    fs: FeasibleSet
    max_outer: int = 500
    max_inner_mm: int = 30
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    mode: str = "TNN"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not isinstance(self.fs, FeasibleSet):
            raise ValueError("fs must be a FeasibleSet")
        if self.max_outer < 1 or self.max_inner_mm < 1:
            raise ValueError("iteration caps must be >= 1")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be > 0")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")


@dataclass
class AdmmState:
    """All primal, consensus, and dual variables plus the iteration count."""

    mu: np.ndarray
    G: np.ndarray
    R: np.ndarray
    Gaux: np.ndarray
    m: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    Y3: np.ndarray
    iter: int = 0


@dataclass
class FitReport:
    objective_trace: list = field(default_factory=list)
    primal_residual_trace: list = field(default_factory=list)
    dual_residual_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    start_iter: int = 0
    tnn_value: float = 0.0
    tnn_radius: float = 0.0
    inner_objective_traces: list | None = None
    final_state: "AdmmState | None" = None

    def save_csv(self, path):
        lines = ["iter,objective,primal_res,dual_res"]
        for idx in range(self.iterations):
            lines.append(
                f"{self.start_iter + idx + 1},"
                f"{self.objective_trace[idx]!r},"
                f"{self.primal_residual_trace[idx]!r},"
                f"{self.dual_residual_trace[idx]!r}"
            )
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)


class _ConvKit:
    """Cached contractions against one fixed count array.

    ``lagged[c]`` holds the counts seen at lag c+1 by each of the K
    observed bins, flattened over cells; ``disp`` maps a (target cell,
    source cell) pair to its spatial-displacement slot in the kernel.
    """

    def __init__(self, Z: BinCounts):
        n1, n2, p, K = Z.n1, Z.n2, Z.p, Z.K
        self.n1, self.n2, self.p, self.K = n1, n2, p, K
        self.delta = Z.delta
        ncell = n1 * n2
        self.ncell = ncell
        zf = Z.counts.astype(float)
        self.Zmain = zf[:, :, p:].reshape(ncell, K)
        self.lagged = np.empty((p, ncell, K))
        for c in range(p):
            self.lagged[c] = zf[:, :, p - 1 - c : p - 1 - c + K].reshape(ncell, K)
        ii, jj = np.divmod(np.arange(ncell), n2)
        di = ii[:, None] - ii[None, :] + n1 - 1
        dj = jj[:, None] - jj[None, :] + n2 - 1
        self.nd = (2 * n1 - 1) * (2 * n2 - 1)
        self.disp = (di * (2 * n2 - 1) + dj).ravel()
        self.mass = self.corr(np.ones((ncell, K)))
        self.event_mass = float(self.Zmain.sum())

    def corr(self, r):
        """T[a,b,c] = sum_{u,v,k} r[u,k] * lagged[c][v,k] over displacement (a,b)."""
        out = np.empty((self.nd, self.p))
        for c in range(self.p):
            B = r @ self.lagged[c].T
            out[:, c] = np.bincount(self.disp, weights=B.ravel(), minlength=self.nd)
        return out.reshape(2 * self.n1 - 1, 2 * self.n2 - 1, self.p)

    def intensity(self, mu, G):
        """Flattened conditional intensities, shape (ncell, K)."""
        acc = np.zeros((self.ncell, self.K))
        for c in range(self.p):
            M = G[:, :, c].ravel()[self.disp].reshape(self.ncell, self.ncell)
            acc += M @ self.lagged[c]
        return mu.reshape(self.ncell, 1) + acc

    def nll(self, lam):
        loglam = np.log(np.maximum(lam, INTENSITY_FLOOR) * self.delta)
        return float(
            self.delta * lam.sum() - np.sum(self.Zmain * loglam, where=self.Zmain > 0)
        )


def _quad_terms(mu, G, anchors, rho):
    """Linear-plus-quadratic coupling terms of the (mu, G) block."""
    val = rho * np.sum(anchors["Y3"] * (mu - anchors["m"]))
    val += 0.5 * rho * np.sum((mu - anchors["m"]) ** 2)
    val += rho * np.sum(anchors["Y2"] * (G - anchors["Gaux"]))
    val += 0.5 * rho * np.sum((G - anchors["Gaux"]) ** 2)
    if anchors.get("R") is not None:
        val += rho * np.sum(anchors["Y1"] * (G - anchors["R"]))
        val += 0.5 * rho * np.sum((G - anchors["R"]) ** 2)
    return float(val)


def block_objective(mu, G, Z: BinCounts, anchors, rho) -> float:
    """Likelihood plus coupling terms; what the MM inner loop decreases."""
    params = HawkesParams(mu=mu, G=G)
    return neg_log_likelihood(params, Z) + _quad_terms(mu, G, anchors, rho)


def _positive_root(B, S, rho, coef):
    """Nonnegative root of coef*rho*x^2 + B*x - S = 0 with S >= 0.

    Uses the conjugate form 2S/(B + sqrt(disc)) when B > 0 to avoid
    cancellation; the discriminant is nonnegative by construction.
    """
    B = np.asarray(B, dtype=float)
    S = np.asarray(S, dtype=float)
    disc = B * B + 4.0 * coef * rho * S
    if np.any(disc < 0):
        raise NumericalError("negative discriminant in the MM closed form")
    sq = np.sqrt(disc)
    pos = B > 0
    denom = np.where(pos, B + sq, 1.0)
    return np.where(pos, 2.0 * S / denom, (sq - B) / (2.0 * coef * rho))


def _mm_step(kit: _ConvKit, mu, G, lam, anchors, rho):
    """One majorize-minimize update of (mu, G) given current intensities."""
    lamf = np.maximum(lam, INTENSITY_FLOOR)
    ratio = kit.Zmain / lamf
    s_mu = mu * ratio.sum(axis=1).reshape(mu.shape)
    s_G = G * kit.corr(ratio)
    B_mu = kit.K * kit.delta + rho * (anchors["Y3"] - anchors["m"])
    mu_new = _positive_root(B_mu, s_mu, rho, 1.0)
    if anchors.get("R") is not None:
        U = kit.delta * kit.mass + rho * (
            anchors["Y1"] - anchors["R"] + anchors["Y2"] - anchors["Gaux"]
        )
        G_new = _positive_root(U, s_G, rho, 2.0)
    else:
        U = kit.delta * kit.mass + rho * (anchors["Y2"] - anchors["Gaux"])
        G_new = _positive_root(U, s_G, rho, 1.0)
    return mu_new, G_new


def mm_update(mu, G, Z: BinCounts, anchors, rho):
    """Single closed-form MM update; ``anchors["R"] is None`` drops the
    nuclear-norm coupling."""
    kit = _ConvKit(Z)
    lam = kit.intensity(np.asarray(mu, dtype=float), np.asarray(G, dtype=float))
    return _mm_step(kit, np.asarray(mu, dtype=float), np.asarray(G, dtype=float),
                    lam, anchors, rho)


def update_R(G, Y1, rho, tau):
    if not rho > 0:
        raise ValueError("rho must be > 0")
    return prox_tnn(Y1 + G, tau / rho)


def update_aux(G, Y2, mu, Y3, fs: FeasibleSet):
    return np.clip(G + Y2, fs.a2, fs.b2), np.clip(mu + Y3, fs.a1, fs.b1)


def update_duals(state: AdmmState, rho) -> AdmmState:
    return dataclasses.replace(
        state,
        Y1=state.Y1 + rho * (state.G - state.R),
        Y2=state.Y2 + rho * (state.G - state.Gaux),
        Y3=state.Y3 + rho * (state.mu - state.m),
    )


def penalized_objective(state: AdmmState, Z: BinCounts, cfg: AdmmConfig) -> float:
    """Full augmented objective at a state; +inf when a box copy is infeasible."""
    fs = cfg.fs
    eps = 1e-12
    if np.any(state.m < fs.a1 - eps) or np.any(state.m > fs.b1 + eps):
        return float("inf")
    if np.any(state.Gaux < fs.a2 - eps) or np.any(state.Gaux > fs.b2 + eps):
        return float("inf")
    anchors = {
        "m": state.m,
        "Gaux": state.Gaux,
        "Y2": state.Y2,
        "Y3": state.Y3,
        "R": state.R if cfg.mode == "TNN" else None,
        "Y1": state.Y1,
    }
    val = block_objective(state.mu, state.G, Z, anchors, cfg.rho)
    if cfg.mode == "TNN":
        val += cfg.tau * tnn(state.R)
    return val


def _initial_state(Z: BinCounts, cfg: AdmmConfig, init: HawkesParams | None) -> AdmmState:
    n1, n2, p = Z.n1, Z.n2, Z.p
    gshape = (2 * n1 - 1, 2 * n2 - 1, p)
    if init is not None:
        mu0 = np.array(init.mu, dtype=float)
        G0 = np.array(init.G, dtype=float)
        if mu0.shape != (n1, n2) or G0.shape != gshape:
            raise ValueError("init shapes do not match the data dims")
    else:
        mu0 = np.full((n1, n2), Z.main.mean() / Z.delta)
        G0 = np.full(gshape, 0.1 * (cfg.fs.a2 + cfg.fs.b2) / 2.0)
    return AdmmState(
        mu=mu0,
        G=G0,
        R=G0.copy(),
        Gaux=G0.copy(),
        m=mu0.copy(),
        Y1=np.zeros(gshape),
        Y2=np.zeros(gshape),
        Y3=np.zeros((n1, n2)),
        iter=0,
    )


def fit(Z: BinCounts, cfg: AdmmConfig, init: HawkesParams | None = None,
        state: AdmmState | None = None, checkpoint_path=None,
        checkpoint_every: int = 0, record_inner: bool = False):
    """Run the alternating scheme; returns (estimate, report).

    The estimate is built from the box-feasible copies (m, Gaux), and the
    final AdmmState rides on ``report.final_state``.  Passing a saved
    ``state`` resumes mid-run and reproduces the continued trace exactly;
    ``cfg.max_outer`` counts total outer iterations including the resumed
    ones.
    """
    t_start = time.perf_counter()
    kit = _ConvKit(Z)
    drop_R = cfg.mode == "MLE" or cfg.tau == 0.0
    if state is None:
        state = _initial_state(Z, cfg, init)
    mu, G = state.mu.copy(), state.G.copy()
    R, Gaux, m = state.R.copy(), state.Gaux.copy(), state.m.copy()
    Y1, Y2, Y3 = state.Y1.copy(), state.Y2.copy(), state.Y3.copy()

    report = FitReport(start_iter=state.iter)
    if record_inner:
        report.inner_objective_traces = []
    lam = kit.intensity(mu, G)
    for t in range(state.iter, cfg.max_outer):
        anchors = {
            "m": m, "Gaux": Gaux, "Y2": Y2, "Y3": Y3,
            "R": None if drop_R else R, "Y1": Y1,
        }
        inner = []
        for _ in range(cfg.max_inner_mm):
            g = kit.nll(lam) + _quad_terms(mu, G, anchors, cfg.rho)
            inner.append(g)
            if len(inner) > 1 and abs(inner[-2] - g) <= _INNER_REL_TOL * (
                1.0 + abs(inner[-2])
            ):
                break
            mu, G = _mm_step(kit, mu, G, lam, anchors, cfg.rho)
            lam = kit.intensity(mu, G)
        if record_inner:
            report.inner_objective_traces.append(inner)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(G))):
            raise NumericalError(f"non-finite iterate at iteration {t + 1}")

        R_prev, Gaux_prev, m_prev = R, Gaux, m
        if not drop_R:
            R = prox_tnn(Y1 + G, cfg.tau / cfg.rho)
        Gaux, m = update_aux(G, Y2, mu, Y3, cfg.fs)
        if not drop_R:
            Y1 = Y1 + cfg.rho * (G - R)
        Y2 = Y2 + cfg.rho * (G - Gaux)
        Y3 = Y3 + cfg.rho * (mu - m)

        scale = 1.0 + float(np.linalg.norm(G))
        primal = max(
            float(np.linalg.norm(G - Gaux)),
            float(np.linalg.norm(mu - m)),
            0.0 if drop_R else float(np.linalg.norm(G - R)),
        )
        dual = cfg.rho * max(
            float(np.linalg.norm(Gaux - Gaux_prev)),
            float(np.linalg.norm(m - m_prev)),
            0.0 if drop_R else float(np.linalg.norm(R - R_prev)),
        )
        objective = kit.nll(lam)
        if cfg.mode == "TNN":
            objective += cfg.tau * tnn(G)
        if not np.isfinite(objective):
            raise NumericalError(f"non-finite objective at iteration {t + 1}")
        report.objective_trace.append(objective)
        report.primal_residual_trace.append(primal)
        report.dual_residual_trace.append(dual)

        state = AdmmState(mu=mu, G=G, R=R, Gaux=Gaux, m=m,
                          Y1=Y1, Y2=Y2, Y3=Y3, iter=t + 1)
        if checkpoint_path and checkpoint_every > 0 and (t + 1) % checkpoint_every == 0:
            save_checkpoint(state, cfg, checkpoint_path)
        if primal <= cfg.tol_primal * scale and dual <= cfg.tol_dual * scale:
            report.converged = True
            break

    report.iterations = len(report.objective_trace)
    report.wall_time = time.perf_counter() - t_start
    estimate = HawkesParams(mu=m.copy(), G=Gaux.copy())
    report.tnn_value = tnn(estimate.G)
    report.tnn_radius = cfg.fs.tnn_radius(Z.n1, Z.n2, Z.p)
    report.final_state = state
    return estimate, report


def fit_mle(Z: BinCounts, cfg: AdmmConfig, **kw):
    """Likelihood-only baseline: same scheme with the nuclear-norm block removed."""
    return fit(Z, dataclasses.replace(cfg, mode="MLE"), **kw)


def tune_tau(Z: BinCounts, cfg: AdmmConfig, grid, holdout_fraction: float) -> float:
    """Grid search on a time-prefix split, scored by held-out likelihood.

    Ties break toward the larger tau (prefer the stronger prior when the
    data cannot tell the difference).
    """
    from .pipeline import nlr, split_train_test

    grid = list(grid)
    if not grid:
        raise ValueError("tau grid is empty")
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie in (0, 1)")
    train, test = split_train_test(Z, 1.0 - holdout_fraction)
    best_tau, best_score = None, None
    for tau in grid:
        params, _ = fit(train, dataclasses.replace(cfg, tau=float(tau), mode="TNN"))
        score = nlr(params, test)
        if (
            best_score is None
            or score < best_score
            or (score == best_score and tau > best_tau)
        ):
            best_tau, best_score = float(tau), score
    return best_tau


def save_checkpoint(state: AdmmState, cfg: AdmmConfig, path) -> None:
    payload = {
        "config": {
            "rho": cfg.rho,
            "tau": cfg.tau,
            "fs": dataclasses.asdict(cfg.fs),
            "max_outer": cfg.max_outer,
            "max_inner_mm": cfg.max_inner_mm,
            "tol_primal": cfg.tol_primal,
            "tol_dual": cfg.tol_dual,
            "mode": cfg.mode,
        },
        "state": {
            "iter": state.iter,
            "mu": state.mu.tolist(),
            "G": state.G.tolist(),
            "R": state.R.tolist(),
            "Gaux": state.Gaux.tolist(),
            "m": state.m.tolist(),
            "Y1": state.Y1.tolist(),
            "Y2": state.Y2.tolist(),
            "Y3": state.Y3.tolist(),
        },
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    c = payload["config"]
    cfg = AdmmConfig(
        rho=c["rho"],
        tau=c["tau"],
        fs=FeasibleSet(**c["fs"]),
        max_outer=c["max_outer"],
        max_inner_mm=c["max_inner_mm"],
        tol_primal=c["tol_primal"],
        tol_dual=c["tol_dual"],
        mode=c["mode"],
    )
    s = payload["state"]
    state = AdmmState(
        mu=np.array(s["mu"], dtype=float),
        G=np.array(s["G"], dtype=float),
        R=np.array(s["R"], dtype=float),
        Gaux=np.array(s["Gaux"], dtype=float),
        m=np.array(s["m"], dtype=float),
        Y1=np.array(s["Y1"], dtype=float),
        Y2=np.array(s["Y2"], dtype=float),
        Y3=np.array(s["Y3"], dtype=float),
        iter=int(s["iter"]),
    )
    return state, cfg
