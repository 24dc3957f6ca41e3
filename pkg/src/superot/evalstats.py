"""Fate classification accuracy, two-sample t-tests and differential expression.

The fate classifier is an L2-regularised logistic regression trained on real
day-4/6 cells only. Differential expression maps transported cells back to
gene space through the PCA inverse and runs per-gene t-tests.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import MONOCYTE, NEUTROPHIL
from .errors import ContractError, ShapeError
from .preprocess import PcaModel, pca_inverse


# ---------------------------------------------------------------- logistic regression

@dataclass
class LogisticModel:
    """``P(y=1 | x) = sigmoid(x @ weight + bias)``; class 1 is Neutrophil."""

    weight: np.ndarray
    bias: float
    iterations: int = 0
    final_loss: float = float("nan")
    l2: float = 0.0
    converged: bool = False

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f"classifier expects {self.weight.shape[0]} features, got {x.shape}")
        return x @ self.weight + self.bias

    def predict_proba(self, x) -> np.ndarray:
        return _sigmoid(self.decision(x))

    def predict(self, x) -> np.ndarray:
        return np.where(self.predict_proba(x) >= 0.5, NEUTROPHIL, MONOCYTE)


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_objective(w, b, x, y, l2):
    """Mean cross-entropy plus ``0.5 * l2 * ||w||^2`` (bias unpenalised)."""
    z = x @ w + b
    # log(1 + e^z) - y z, written to avoid overflow
    loss = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z))) - y * z
    return float(loss.mean() + 0.5 * l2 * (w @ w))


def logistic_gradient(w, b, x, y, l2):
    r = _sigmoid(x @ w + b) - y
    n = len(y)
    return x.T @ r / n + l2 * w, float(r.sum() / n)


def balanced_subsample(y, seed=0) -> np.ndarray:
    """Indices keeping every minority-class row and an equal-size random draw of the majority."""
    y = np.asarray(y)
    idx0, idx1 = np.flatnonzero(y == 0), np.flatnonzero(y == 1)
    rng = np.random.default_rng(seed)
    if len(idx0) > len(idx1):
        idx0 = rng.choice(idx0, size=len(idx1), replace=False)
    elif len(idx1) > len(idx0):
        idx1 = rng.choice(idx1, size=len(idx0), replace=False)
    return np.sort(np.concatenate([idx0, idx1]))


def fit_logistic(x, y, l2=1e-3, lr=None, max_iter=5000, tol=1e-6, balance=True, seed=0) -> LogisticModel:
    """Gradient descent on the regularised cross-entropy.

    Features are standardised internally and the solution is mapped back, so
    the returned weights act on raw inputs. The default step is ``1/L`` with
    ``L`` the gradient Lipschitz constant. Stops when the gradient norm falls
    below ``tol``. With ``balance`` the majority class is subsampled first.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or len(y) != len(x):
        raise ShapeError("fit_logistic needs an n x k matrix and n labels")
    if len(y) < 2 or not np.isin(y, (0, 1)).all():
        raise ContractError("fit_logistic needs at least two rows with binary labels")
    if len(np.unique(y)) < 2:
        raise ContractError("fit_logistic needs both classes present")
    if balance:
        keep = balanced_subsample(y, seed)
        x, y = x[keep], y[keep]
    y = y.astype(np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd
    n, k = xs.shape
    if lr is None:
        aug = np.hstack([xs, np.ones((n, 1))])
        top = np.linalg.eigvalsh(aug.T @ aug / n)[-1]
        lr = 1.0 / (0.25 * top + l2)
    w = np.zeros(k)
    b = 0.0
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        gw, gb = logistic_gradient(w, b, xs, y, l2)
        if math.sqrt(gw @ gw + gb * gb) < tol:
            converged = True
            it -= 1
            break
        w = w - lr * gw
        b = b - lr * gb
    loss = logistic_objective(w, b, xs, y, l2)
    weight = w / sd
    bias = float(b - weight @ mu)
    return LogisticModel(weight, bias, it, loss, l2, converged)


def fate_accuracy(transported, classifier: LogisticModel, assigned) -> float:
    """Fraction of transported cells whose classified fate equals the assigned label.

    ``assigned`` is an array of Monocyte/Neutrophil codes aligned with the
    rows of ``transported`` (or a :class:`FateLabel`); unlabeled cells must
    be dropped upstream.
    """
    labels = np.asarray(getattr(assigned, "labels", assigned))
    x = np.asarray(transported, dtype=np.float64)
    if len(labels) == 0:
        raise ContractError("no evaluable test cells")
    if len(labels) != len(x):
        raise ShapeError("need one assigned label per transported cell")
    if not np.isin(labels, (MONOCYTE, NEUTROPHIL)).all():
        raise ContractError("assigned labels must all be Monocyte or Neutrophil")
    return float((classifier.predict(x) == labels).mean())


# ---------------------------------------------------------------- t-test

def _betacf(a, b, x, max_iter=500, eps=1e-16):
    """Continued fraction for the incomplete beta (modified Lentz), vectorised over x."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < eps
        if done.all():
            break
    return h


def betainc_reg(a, b, x) -> np.ndarray:
    """Regularised incomplete beta ``I_x(a, b)`` for arrays of ``a``, ``b``, ``x``."""
    a, b, x = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(x, float))
    out = np.empty(x.shape)
    lo = x <= 0
    hi = x >= 1
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    if mid.any():
        am, bm, xm = a[mid], b[mid], x[mid]
        lg = np.frompyfunc(math.lgamma, 1, 1)
        lbeta = (lg(am + bm) - lg(am) - lg(bm)).astype(np.float64)
        front = np.exp(lbeta + am * np.log(xm) + bm * np.log1p(-xm))
        direct = xm < (am + 1.0) / (am + bm + 2.0)
        res = np.empty(xm.shape)
        if direct.any():
            res[direct] = front[direct] * _betacf(am[direct], bm[direct], xm[direct]) / am[direct]
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - front[flip] * _betacf(bm[flip], am[flip], 1.0 - xm[flip]) / bm[flip]
        out[mid] = res
    return out


def t_pvalue(t, df) -> np.ndarray:
    """Two-sided p-value of a Student t statistic: ``I_{df/(df+t^2)}(df/2, 1/2)``."""
    t = np.asarray(t, dtype=np.float64)
    df = np.broadcast_to(np.asarray(df, dtype=np.float64), t.shape)
    p = np.empty(t.shape)
    inf = np.isinf(t)
    p[inf] = 0.0
    fin = ~inf
    x = df[fin] / (df[fin] + t[fin] ** 2)
    p[fin] = betainc_reg(df[fin] / 2.0, 0.5, x)
    return np.clip(p, 0.0, 1.0)


@dataclass
class TTestResult:
    t: np.ndarray
    p: np.ndarray
    df: np.ndarray
    degenerate: np.ndarray  # zero variance in both groups


def ttest_columns(a, b, welch=False) -> TTestResult:
    """Per-column two-sample t-test of ``a`` (n_a x g) against ``b`` (n_b x g).

    Student's pooled variance by default. A column with zero variance in
    both samples gets ``t=0, p=1`` when the means agree and ``t=+-inf,
    p=0`` otherwise; such columns are flagged in ``degenerate``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractError("t-test needs at least two values per group")
    if a.shape[1] != b.shape[1]:
        raise ShapeError("t-test groups have different column counts")
    na, nb = a.shape[0], b.shape[0]
    diff = a.mean(axis=0) - b.mean(axis=0)
    va = a.var(axis=0, ddof=1)
    vb = b.var(axis=0, ddof=1)
    if welch:
        se2 = va / na + vb / nb
        with np.errstate(divide="ignore", invalid="ignore"):
            df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
        df = np.where(se2 > 0, df, float(na + nb - 2))
    else:
        sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        se2 = sp2 * (1.0 / na + 1.0 / nb)
        df = np.full(diff.shape, float(na + nb - 2))
    degenerate = se2 <= 0
    t = np.zeros(diff.shape)
    ok = ~degenerate
    t[ok] = diff[ok] / np.sqrt(se2[ok])
    t[degenerate & (diff != 0)] = np.sign(diff[degenerate & (diff != 0)]) * np.inf
    p = t_pvalue(t, df)
    p[degenerate & (diff == 0)] = 1.0
    return TTestResult(t, p, df, degenerate)


def ttest_two_sample(a, b, welch=False):
    """Two-sided two-sample t-test on 1-D samples; returns ``(t, p)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    r = ttest_columns(a, b, welch=welch)
    return float(r.t[0]), float(r.p[0])


# ---------------------------------------------------------------- differential expression

@dataclass
class DeReport:
    run_sets: list
    intersection: list
    truth: list
    precision: float | None
    recall: float | None
    p_threshold: float
    n_runs: int
    run_tests: list = field(default_factory=list, repr=False)
    truth_test: TTestResult | None = field(default=None, repr=False)

    def summary(self, planted=None):
        out = {
            "n_runs": self.n_runs, "p_threshold": self.p_threshold,
            "run_counts": [len(s) for s in self.run_sets],
            "n_predicted": len(self.intersection), "n_truth": len(self.truth),
            "precision": self.precision, "recall": self.recall,
        }
        if planted is not None:
            out["planted_recall"] = planted_recall(self, planted)
        return out


def planted_recall(report: DeReport, planted) -> float:
    planted = set(int(g) for g in planted)
    if not planted:
        raise ContractError("planted gene set is empty")
    return len(planted & set(report.intersection)) / len(planted)


def de_analysis(runs, pca: PcaModel, real_mono, real_neu, p_threshold=1e-6, welch=False) -> DeReport:
    """Genes called DE between transported Monocyte and Neutrophil sets in every run.

    Each run is a pair of PCA-space arrays, optionally followed by its own
    PCA model (runs from different splits). They are mapped back to gene
    space, tested gene by gene, and the significant sets are intersected.
    The reference set comes from the same test on real day-4/6 cells given
    in the PCA's input space. Precision is ``None`` when nothing is called.
    """
    if len(runs) == 0:
        raise ContractError("de_analysis needs at least one run")
    real_mono = np.asarray(real_mono, dtype=np.float64)
    real_neu = np.asarray(real_neu, dtype=np.float64)
    if real_mono.shape[1] != pca.n_features or real_neu.shape[1] != pca.n_features:
        raise ShapeError("real cells are not in the PCA input space")
    truth_test = ttest_columns(real_mono, real_neu, welch=welch)
    truth = np.flatnonzero(truth_test.p < p_threshold)
    run_sets, run_tests = [], []
    inter = None
    for run in runs:
        mono, neu = run[0], run[1]
        basis = run[2] if len(run) > 2 else pca
        if basis.n_features != pca.n_features:
            raise ShapeError("every run must map back to the same genes")
        res = ttest_columns(pca_inverse(basis, mono), pca_inverse(basis, neu), welch=welch)
        sig = np.flatnonzero(res.p < p_threshold)
        run_tests.append(res)
        run_sets.append(sig.tolist())
        inter = sig if inter is None else np.intersect1d(inter, sig)
    hit = len(np.intersect1d(inter, truth))
    precision = hit / len(inter) if len(inter) else None
    recall = hit / len(truth) if len(truth) else None
    return DeReport(run_sets, inter.tolist(), truth.tolist(), precision, recall, p_threshold,
                    len(runs), run_tests, truth_test)


def write_de_report(report: DeReport, gene_ids, out_dir, planted=None):
    """Per-run ``gene_id,t,p,significant`` CSVs plus ``de_summary.json``."""
    from pathlib import Path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    tables = [("truth", report.truth_test)] + [(f"run{i}", r) for i, r in enumerate(report.run_tests)]
    for name, res in tables:
        if res is None:
            continue
        path = out_dir / f"de_{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gene_id", "t", "p", "significant"])
            for g, (t, p) in enumerate(zip(res.t, res.p)):
                w.writerow([gene_ids[g], repr(float(t)), repr(float(p)), int(p < report.p_threshold)])
        paths.append(path)
    summary = report.summary(planted)
    summary["intersection"] = [gene_ids[g] for g in report.intersection]
    path = out_dir / "de_summary.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    paths.append(path)
    return paths


# ---------------------------------------------------------------- 2-D export

PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def project_2d(sets):
    """First two principal axes of the union of named point sets, centred on the union mean."""
    if not sets:
        raise ContractError("no point sets to project")
    names = list(sets)
    arrays = [np.atleast_2d(np.asarray(sets[k], dtype=np.float64)) for k in names]
    if any(len(a) == 0 for a in arrays):
        raise ContractError("empty point set")
    union = np.vstack(arrays)
    centred = union - union.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    axes = vt[:2]
    for i in range(len(axes)):
        if axes[i, np.argmax(np.abs(axes[i]))] < 0:
            axes[i] = -axes[i]
    xy = centred @ axes.T
    if xy.shape[1] < 2:
        xy = np.hstack([xy, np.zeros((len(xy), 2 - xy.shape[1]))])
    out, start = {}, 0
    for name, a in zip(names, arrays):
        out[name] = xy[start:start + len(a)]
        start += len(a)
    return out


def export_embedding_2d(sets, csv_path, svg_path=None, size=480):
    """Write ``set,x,y`` rows and an optional SVG scatter with a fixed palette."""
    proj = project_2d(sets)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "x", "y"])
        for name, xy in proj.items():
            for x, y in xy:
                w.writerow([name, repr(float(x)), repr(float(y))])
    if svg_path is not None:
        allxy = np.vstack(list(proj.values()))
        lo, hi = allxy.min(axis=0), allxy.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        pad = 20
        lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
                 f'viewBox="0 0 {size} {size}">',
                 f'<rect width="{size}" height="{size}" fill="white"/>']
        for i, (name, xy) in enumerate(proj.items()):
            colour = PALETTE[i % len(PALETTE)]
            px = pad + (xy[:, 0] - lo[0]) / span[0] * (size - 2 * pad)
            py = size - pad - (xy[:, 1] - lo[1]) / span[1] * (size - 2 * pad)
            for a, b in zip(px, py):
                lines.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2" fill="{colour}" fill-opacity="0.6"/>')
            lines.append(f'<text x="{pad}" y="{pad + 14 * i}" font-size="12" fill="{colour}">{name}</text>')
        lines.append("</svg>")
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return proj
