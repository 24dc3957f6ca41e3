"""Shared experiment plumbing: one split per seed, every method scored the same way.

For a given seed the day-2 and day-4/6 cells are split once; the
preprocessor and the fate classifier are fit on training cells only, and
every method is scored on the test day-2 cells that have a clone-majority
label.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import (
    MONOCYTE, NEUTROPHIL, UNLABELED, assign_day2_labels, build_pairs, clone_majorities, eligible_day2, split_cells,
)
from .errors import ContractError
from .evalstats import LogisticModel, fate_accuracy, fit_logistic
from .nets import TrainConfig, Trainer, TransportModel
from .preprocess import Preprocessor
from .sinkhorn import cost_matrix, coupling_fate_prediction, default_epsilon, sinkhorn_solve

log = logging.getLogger(__name__)

METHODS = ("identity", "wot", "cgan", "gan_ot", "super_ot", "supervised")
PAIR_FRACTIONS = (0.2, 0.4, 0.6)


@dataclass
class Prepared:
    """Everything a method needs for one seed, in PCA space."""

    dataset: object
    split: object
    pre: Preprocessor
    z2: np.ndarray           # all day-2 cells
    z46: np.ndarray          # all day-4/6 cells
    labels2: np.ndarray      # clone-majority fate per day-2 cell (-1 if none)
    labels46: np.ndarray
    classifier: LogisticModel
    test_idx: np.ndarray     # evaluable test day-2 cells
    n_eligible: int
    seed: int

    @property
    def test_labels(self):
        return self.labels2[self.test_idx]


def fit_preprocessor(dataset, split, n_components=20) -> Preprocessor:
    fit_on = np.vstack([dataset.day2.values[split.day2_train],
                        dataset.day46.values[split.day46_train]])
    return Preprocessor.fit(fit_on, n_components)


def prepare(dataset, seed, n_components=20, fraction=0.8, l2=1e-3, pre=None) -> Prepared:
    """Split, fit the preprocessor and the classifier on training cells only.

    A stored ``pre`` is used as given; it must have been fit on this split.
    """
    sp = split_cells(dataset.day2.n_cells, dataset.day46.n_cells, fraction, seed)
    if pre is None:
        pre = fit_preprocessor(dataset, sp, n_components)
    z2 = pre.transform(dataset.day2.values)
    z46 = pre.transform(dataset.day46.values)
    y46 = dataset.day46_labels.aligned(dataset.day46.cell_ids)
    lab2 = assign_day2_labels(dataset.clones, dataset.day46_labels, dataset.day2.cell_ids,
                              dataset.day46.cell_ids).labels
    train46 = sp.day46_train[y46[sp.day46_train] != UNLABELED]
    clf = fit_logistic(z46[train46], y46[train46], l2=l2, seed=seed)
    test_idx = sp.day2_test[lab2[sp.day2_test] != UNLABELED]
    maj = clone_majorities(dataset.clones, dataset.day46.cell_ids, dataset.day46_labels)
    maj = {k: v for k, v in maj.items() if np.isin(v[1], sp.day46_train).any()}
    n_elig = len(eligible_day2(dataset.day2.cell_ids, dataset.clones, maj, sp.day2_train))
    return Prepared(dataset, sp, pre, z2, z46, lab2, y46, clf, test_idx, n_elig, seed)


def pair_counts(n_eligible, fractions=PAIR_FRACTIONS):
    return [max(1, int(round(f * n_eligible))) for f in fractions]


def training_pairs(p: Prepared, n_pairs, seed):
    """Pairs inside the training split, re-indexed to the training arrays."""
    ds = p.dataset
    paired = build_pairs(ds.day2, ds.day46, ds.clones, ds.day46_labels, n_pairs, seed,
                         day2_subset=p.split.day2_train, day46_subset=p.split.day46_train)
    pos2 = {int(v): i for i, v in enumerate(p.split.day2_train)}
    pos46 = {int(v): i for i, v in enumerate(p.split.day46_train)}
    return np.array([[pos2[int(a)], pos46[int(b)]] for a, b in paired.pairs],
                    dtype=np.int64).reshape(-1, 2)


def build_trainer(p: Prepared, method, n_pairs, cfg: TrainConfig) -> Trainer:
    """Untrained :class:`Trainer` for one network method on the training split of ``p``."""
    if method not in ("cgan", "gan_ot", "super_ot", "supervised"):
        raise ContractError(f"{method!r} is not a trained method")
    cfg = TrainConfig.for_baseline(method, **{**cfg.__dict__, "n_pairs": int(n_pairs)})
    tr2, tr46 = p.split.day2_train, p.split.day46_train
    if method == "supervised" and n_pairs == 0:
        raise ContractError("the supervised baseline needs pairs")
    pairs = training_pairs(p, n_pairs, cfg.seed) if n_pairs else np.zeros((0, 2), dtype=np.int64)
    labels2 = labels46 = None
    if cfg.conditional:
        # conditioned cells need a fate; drop unlabelled ones
        keep2 = p.labels2[tr2] != UNLABELED
        keep46 = p.labels46[tr46] != UNLABELED
        if len(pairs):
            raise ContractError("conditional baselines do not use pairs")
        tr2, tr46 = tr2[keep2], tr46[keep46]
        labels2, labels46 = p.labels2[tr2], p.labels46[tr46]
    return Trainer(p.z2[tr2], p.z46[tr46], pairs, cfg, labels2, labels46)


def train_method(p: Prepared, method, n_pairs, cfg: TrainConfig) -> tuple[TransportModel, Trainer]:
    """Train one network method on the training split of ``p``."""
    trainer = build_trainer(p, method, n_pairs, cfg)
    model, _ = trainer.fit()
    return model, trainer


def score_model(p: Prepared, model) -> float:
    """Accuracy of a transport model (or ``None`` for identity) on the test day-2 cells."""
    x = p.z2[p.test_idx]
    moved = x if model is None else model.transport(x)
    return fate_accuracy(moved, p.classifier, p.test_labels)


def run_wot(p: Prepared, epsilon=None, kind="sq_euclidean", mode="real_labels"):
    """Entropic OT from all day-2 cells to all day-4/6 cells, scored on the test rows."""
    c = cost_matrix(p.z2, p.z46, kind)
    eps = default_epsilon(c) if epsilon is None else epsilon
    coupling = sinkhorn_solve(c, epsilon=eps)
    labels = p.labels46
    if mode == "real_labels" and np.any(labels == UNLABELED):
        raise ContractError("real_labels mode needs every day-4/6 cell labelled")
    pred = coupling_fate_prediction(coupling, labels, mode, p.classifier, p.z46)
    acc = float((pred[p.test_idx] == p.test_labels).mean())
    return acc, coupling, pred


def run_one(p: Prepared, method, n_pairs, cfg: TrainConfig):
    """Accuracy of ``method`` for this seed; trained methods use ``cfg`` with its seed."""
    if method == "identity":
        return score_model(p, None)
    if method == "wot":
        return run_wot(p)[0]
    model, _ = train_method(p, method, n_pairs, cfg)
    return score_model(p, model)


def with_seed(cfg: TrainConfig, seed) -> TrainConfig:
    return replace(cfg, seed=int(seed))


def real_fate_sets(p: Prepared):
    """Day-4/6 cells split by fate, in the preprocessor's gene space."""
    x = p.pre.to_gene_space(p.dataset.day46.values)
    return x[p.labels46 == MONOCYTE], x[p.labels46 == NEUTROPHIL]


def transported_fate_sets(p: Prepared, model):
    """Labelled day-2 cells pushed through ``model`` and grouped by clone fate.

    Returns ``(mono, neu, pca)`` in PCA space, the run format of
    :func:`de_analysis`.
    """
    lab = np.flatnonzero(p.labels2 != UNLABELED)
    x = p.z2[lab]
    moved = x if model is None else model.transport(x)
    fates = p.labels2[lab]
    return moved[fates == MONOCYTE], moved[fates == NEUTROPHIL], p.pre.pca
