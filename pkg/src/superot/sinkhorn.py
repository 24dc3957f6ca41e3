"""Entropic optimal transport by log-domain Sinkhorn scaling, and coupling-based fate calls."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .data import MONOCYTE, NEUTROPHIL
from .errors import ContractError, ShapeError, SolverError


@dataclass
class Coupling:
    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    epsilon: float
    iterations: int
    marginal_error: float
    converged: bool

    def transport_cost(self, c):
        return float((self.gamma * c).sum())

    def summary(self):
        return {"epsilon": self.epsilon, "iterations": self.iterations,
                "marginal_error": self.marginal_error, "converged": self.converged,
                "shape": list(self.gamma.shape), "total_mass": float(self.gamma.sum())}


def cost_matrix(x, y, kind="sq_euclidean"):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"cost_matrix: feature dims differ ({x.shape} vs {y.shape})")
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    np.maximum(sq, 0.0, out=sq)
    if x is y or (x.shape == y.shape and np.array_equal(x, y)):
        np.fill_diagonal(sq, 0.0)
        sq = 0.5 * (sq + sq.T)
    if kind == "sq_euclidean":
        return sq
    if kind == "euclidean":
        return np.sqrt(sq)
    raise ContractError(f"unknown cost kind {kind!r}")


def default_epsilon(c, factor=0.05):
    med = float(np.median(c))
    if med <= 0:
        raise ContractError("cost matrix median is zero; pass epsilon explicitly")
    return factor * med


def _check_marginals(c, a, b):
    n, m = c.shape
    a = np.full(n, 1.0 / n) if a is None else np.asarray(a, dtype=np.float64)
    b = np.full(m, 1.0 / m) if b is None else np.asarray(b, dtype=np.float64)
    if a.shape != (n,) or b.shape != (m,):
        raise ShapeError("marginals do not match the cost matrix")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ContractError("marginals must be strictly positive")
    if abs(a.sum() - 1) > 1e-9 or abs(b.sum() - 1) > 1e-9:
        raise ContractError("marginals must sum to one")
    return a, b


def _lse(m, axis):
    mx = m.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(m - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def sinkhorn_solve(c, a=None, b=None, epsilon=None, tol=1e-8, max_iter=10_000) -> Coupling:
    """Entropic OT coupling ``diag(u) K diag(v)`` with ``K = exp(-c / epsilon)``.

    Scaling is done on the dual potentials in log space, so small
    ``epsilon`` does not underflow the kernel. Stops once the row-marginal
    violation drops below ``tol`` (columns are exact after each sweep).
    Uniform marginals are used when ``a``/``b`` are omitted.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError("cost must be a matrix")
    a, b = _check_marginals(c, a, b)
    if epsilon is None:
        epsilon = default_epsilon(c)
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    la, lb = np.log(a), np.log(b)
    neg = -c / epsilon
    f = np.zeros(c.shape[0])
    g = np.zeros(c.shape[1])
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        lse_r = _lse(neg + g[None, :], axis=1)
        if it > 1:
            err = float(np.abs(np.exp(f + lse_r) - a).max())
            if err < tol:
                it -= 1
                break
        f = la - lse_r
        g = lb - _lse(neg + f[:, None], axis=0)
        if not (np.isfinite(f).all() and np.isfinite(g).all()):
            raise SolverError(f"potentials became non-finite at iteration {it}; try a larger epsilon")
    log_gamma = neg + f[:, None] + g[None, :]
    gamma = np.exp(log_gamma)
    if not np.isfinite(gamma).all() or np.any(gamma.sum(axis=1) == 0):
        raise SolverError("coupling underflowed; try a larger epsilon")
    err = max(float(np.abs(gamma.sum(1) - a).max()), float(np.abs(gamma.sum(0) - b).max()))
    return Coupling(gamma, a, b, float(epsilon), it, err, err < tol)


def sinkhorn_naive(c, a=None, b=None, epsilon=None, tol=1e-8, max_iter=10_000) -> Coupling:
    """Plain multiplicative scaling on ``K``; underflows for small epsilon."""
    c = np.asarray(c, dtype=np.float64)
    a, b = _check_marginals(c, a, b)
    if epsilon is None:
        epsilon = default_epsilon(c)
    K = np.exp(-c / epsilon)
    if np.any(K.sum(1) == 0) or np.any(K.sum(0) == 0):
        raise SolverError("kernel underflow; use the log-domain solver")
    u = np.ones_like(a)
    v = np.ones_like(b)
    it = 0
    for it in range(1, max_iter + 1):
        u = a / (K @ v)
        v = b / (K.T @ u)
        if np.abs(u * (K @ v) - a).max() < tol:
            break
    gamma = u[:, None] * K * v[None, :]
    err = max(float(np.abs(gamma.sum(1) - a).max()), float(np.abs(gamma.sum(0) - b).max()))
    return Coupling(gamma, a, b, float(epsilon), it, err, err < tol)


def coupling_fate_prediction(coupling: Coupling, target_labels, mode="real_labels",
                             classifier=None, target_x=None) -> np.ndarray:
    """Fate per source row from where the majority of its mass goes.

    ``real_labels`` uses the target cells' own fates; ``predicted_labels``
    uses ``classifier.predict(target_x)``. Exact ties go to Monocyte.
    """
    gamma = coupling.gamma
    if mode == "real_labels":
        lab = np.asarray(target_labels)
    elif mode == "predicted_labels":
        if classifier is None or target_x is None:
            raise ContractError("predicted_labels mode needs a fitted classifier and target features")
        lab = np.asarray(classifier.predict(target_x))
    else:
        raise ContractError(f"unknown mode {mode!r}")
    if lab.shape != (gamma.shape[1],):
        raise ShapeError("need one label per target cell")
    if not np.isin(lab, (MONOCYTE, NEUTROPHIL)).all():
        raise ContractError("every target cell needs a Monocyte/Neutrophil label")
    mono = gamma[:, lab == MONOCYTE].sum(axis=1)
    neu = gamma[:, lab == NEUTROPHIL].sum(axis=1)
    return np.where(neu > mono, NEUTROPHIL, MONOCYTE)


def export_coupling(coupling: Coupling, source_ids, target_ids, csv_path, summary_path=None,
                    floor=1e-12):
    rows, cols = np.nonzero(coupling.gamma > floor)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day2_id", "day46_id", "mass"])
        for i, j in zip(rows, cols):
            w.writerow([source_ids[i], target_ids[j], repr(float(coupling.gamma[i, j]))])
    if summary_path is not None:
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump({**coupling.summary(), "mass_floor": floor, "n_exported": int(len(rows))},
                      fh, indent=2, sort_keys=True)
