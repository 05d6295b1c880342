"""Event ingestion, discretization, splitting, prediction, and metrics.

Events live in continuous (x, y, t) coordinates and are counted into a
regular n1 x n2 spatial grid with K time bins plus a p-bin history prefix
covering [t0 - p*dt, t0).  Spatial boxes are half-open with a closed right
edge (a point exactly on the outer boundary lands in the last cell); the
time range is half-open, so t = t0 + K*dt is out of range.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .model import BinCounts, HawkesParams, neg_log_likelihood
from .simulate import SimConfig, simulate


@dataclass(frozen=True)
class EventRecord:
    x: float
    y: float
    t: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.t)):
            raise ValueError("event coordinates must be finite")


@dataclass(frozen=True)
class DiscretizationSpec:
    """Grid geometry: origins, bin widths, and the target array shape."""

    x0: float
    y0: float
    t0: float
    dx: float
    dy: float
    dt: float
    n1: int
    n2: int
    K: int
    p: int

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0 and self.dt > 0):
            raise ValueError("bin widths must be positive")
        for name in ("n1", "n2", "K", "p"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def delta(self) -> float:
        return self.dx * self.dy * self.dt


def load_events(path):
    """Parse an events CSV with header ``x,y,t``.

    Returns (records, malformed_count).  Rows that do not parse as three
    finite floats are skipped and counted.  A file whose data rows are all
    malformed is rejected; an empty-but-headered file yields ([], 0).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header row")
        if [h.strip() for h in header] != ["x", "y", "t"]:
            raise ValueError(f"{path}: expected header 'x,y,t', got {header!r}")
        records = []
        malformed = 0
        total = 0
        for row in reader:
            if not row or all(not f.strip() for f in row):
                continue
            total += 1
            if len(row) != 3:
                malformed += 1
                continue
            try:
                x, y, t = (float(f) for f in row)
            except ValueError:
                malformed += 1
                continue
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(t)):
                malformed += 1
                continue
            records.append(EventRecord(x, y, t))
    if total > 0 and not records:
        raise ValueError(f"{path}: no valid event rows (all {total} malformed)")
    return records, malformed


def _cell_index(value, origin, width, n):
    """Half-open bins with a closed outer edge."""
    idx = math.floor((value - origin) / width)
    if idx == n and value == origin + n * width:
        idx = n - 1
    return idx


def discretize(events, spec: DiscretizationSpec):
    """Count events into a BinCounts array; returns (counts, dropped)."""
    counts = np.zeros((spec.n1, spec.n2, spec.K + spec.p), dtype=np.int64)
    dropped = 0
    for ev in events:
        i = _cell_index(ev.x, spec.x0, spec.dx, spec.n1)
        j = _cell_index(ev.y, spec.y0, spec.dy, spec.n2)
        k = math.floor((ev.t - spec.t0) / spec.dt)
        if not (0 <= i < spec.n1 and 0 <= j < spec.n2 and -spec.p <= k < spec.K):
            dropped += 1
            continue
        counts[i, j, spec.p + k] += 1
    return BinCounts(counts=counts, p=spec.p, delta=spec.delta), dropped


def split_train_test(Z: BinCounts, fraction: float):
    """Prefix/suffix split along time; the test history is train's tail."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    T = int(math.floor(fraction * Z.K))
    if T < Z.p:
        raise ValueError(f"train span {T} shorter than memory depth p={Z.p}")
    if T >= Z.K:
        raise ValueError("empty test span")
    train = BinCounts(counts=Z.counts[:, :, : Z.p + T].copy(), p=Z.p, delta=Z.delta)
    test = BinCounts(counts=Z.counts[:, :, T:].copy(), p=Z.p, delta=Z.delta)
    return train, test


def merr(mu_true, mu_est) -> float:
    """Relative Frobenius error of the base rate estimate."""
    mu_true = np.asarray(mu_true, dtype=float)
    mu_est = np.asarray(mu_est, dtype=float)
    if mu_true.shape != mu_est.shape:
        raise ValueError("shape mismatch")
    denom = np.linalg.norm(mu_true)
    if denom == 0:
        raise ValueError("true base rate has zero norm")
    return float(np.linalg.norm(mu_true - mu_est) / denom)


def gerr(G_true, G_est) -> float:
    """Relative Frobenius error of the kernel estimate."""
    G_true = np.asarray(G_true, dtype=float)
    G_est = np.asarray(G_est, dtype=float)
    if G_true.shape != G_est.shape:
        raise ValueError("shape mismatch")
    denom = np.linalg.norm(G_true)
    if denom == 0:
        raise ValueError("true kernel has zero norm")
    return float(np.linalg.norm(G_true - G_est) / denom)


def predict_counts(params: HawkesParams, history, horizon: int, nsim: int,
                   seed: int, delta: float) -> np.ndarray:
    """Mean of nsim forward-simulated count paths from a fixed history.

    Each simulation runs on its own substream derived from (seed, sim
    index), so the average does not depend on execution order.
    """
    if nsim < 1:
        raise ValueError("nsim must be >= 1")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    history = np.asarray(history)
    n1, n2, p = params.n1, params.n2, params.p
    if history.shape != (n1, n2, p):
        raise ValueError(f"history must have shape {(n1, n2, p)}")
    if horizon == 0:
        return np.zeros((n1, n2, 0))
    base = SimConfig(n1=n1, n2=n2, p=p, K=horizon, delta=delta, seed=0)
    total = np.zeros((n1, n2, horizon))
    for s in range(nsim):
        sub = int(np.random.SeedSequence([int(seed), s]).generate_state(1)[0])
        Z = simulate(params, dataclasses.replace(base, seed=sub), initial=history)
        total += Z.main
    return total / nsim


def frq(predicted, actual, absolute: bool = False) -> float:
    """Sum over subregions of the frequency discrepancy.

    Default mode compares per-region proportions of the total mass (a
    total-variation-style distance in [0, 2]); ``absolute=True`` compares
    raw per-region counts instead.
    """
    pred = np.asarray(predicted, dtype=float)
    act = actual.main if isinstance(actual, BinCounts) else np.asarray(actual, dtype=float)
    if pred.shape[:2] != act.shape[:2]:
        raise ValueError("spatial dims of predicted and actual differ")
    pred_r = pred.sum(axis=2).ravel()
    act_r = act.sum(axis=2).ravel()
    if absolute:
        return float(np.abs(pred_r - act_r).sum())
    if pred_r.sum() <= 0 or act_r.sum() <= 0:
        raise ValueError("zero total events on one side; frequencies undefined")
    return float(np.abs(pred_r / pred_r.sum() - act_r / act_r.sum()).sum())


def nlr(params: HawkesParams, test: BinCounts) -> float:
    """Negative log-likelihood of a held-out span, shared with training."""
    return neg_log_likelihood(params, test)
