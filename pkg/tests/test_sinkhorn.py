import json

import numpy as np
import pytest

from oracles import entropic_ot_newton
from superot.data import MONOCYTE, NEUTROPHIL, SynthConfig, assign_day2_labels, synth_branching
from superot.errors import ContractError, ShapeError, SolverError
from superot.preprocess import Preprocessor
from superot.sinkhorn import (
    Coupling, cost_matrix, coupling_fate_prediction, default_epsilon, export_coupling,
    sinkhorn_naive, sinkhorn_solve,
)


def test_cost_matrix_examples():
    x, y = np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])
    assert cost_matrix(x, y, "euclidean")[0, 0] == 5.0
    assert cost_matrix(x, y)[0, 0] == 25.0
    z = np.random.default_rng(0).normal(size=(5, 3))
    assert np.all(np.diag(cost_matrix(z, z)) == 0.0)
    with pytest.raises(ShapeError):
        cost_matrix(x, np.ones((1, 3)))


def test_cost_matrix_loop_oracle():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
    loop = np.array([[sum((x[i, t] - y[j, t]) ** 2 for t in range(4)) for j in range(5)]
                     for i in range(6)])
    assert np.abs(cost_matrix(x, y) - loop).max() <= 1e-12


def test_forced_and_uniform_couplings():
    assert np.allclose(sinkhorn_solve(np.array([[3.0]]), epsilon=0.1).gamma, [[1.0]])
    g = sinkhorn_solve(np.full((3, 4), 2.0), epsilon=0.5).gamma
    assert np.abs(g - 1.0 / 12).max() <= 1e-15


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.5])
def test_matches_entropic_oracle(eps):
    rng = np.random.default_rng(int(eps * 100))
    for _ in range(5):
        n, m = rng.integers(2, 6, size=2)
        c = rng.uniform(size=(n, m))
        a = rng.uniform(0.5, 1.5, size=n)
        b = rng.uniform(0.5, 1.5, size=m)
        a, b = a / a.sum(), b / b.sum()
        cp = sinkhorn_solve(c, a, b, epsilon=eps)
        ref = entropic_ot_newton(c, a, b, eps)
        assert np.abs(cp.gamma - ref).max() <= 1e-4
        assert cp.marginal_error <= 1e-8 and cp.converged


def test_monotone_in_epsilon():
    rng = np.random.default_rng(2)
    c = rng.uniform(size=(6, 7))
    costs = [sinkhorn_solve(c, epsilon=e).transport_cost(c) for e in (1.0, 0.5, 0.1, 0.05)]
    assert all(a >= b - 1e-12 for a, b in zip(costs, costs[1:]))


def test_log_domain_agrees_with_naive():
    rng = np.random.default_rng(3)
    for _ in range(10):
        c = rng.uniform(size=(5, 4))
        a = sinkhorn_solve(c, epsilon=0.2, tol=1e-12)
        b = sinkhorn_naive(c, epsilon=0.2, tol=1e-12)
        assert np.abs(a.gamma - b.gamma).max() <= 1e-8


def test_log_domain_survives_kernel_underflow():
    c = np.random.default_rng(4).uniform(size=(4, 4))
    with pytest.raises(SolverError):
        sinkhorn_naive(c + 1000.0, epsilon=0.1)
    shifted = sinkhorn_solve(c + 1000.0, epsilon=0.1)
    assert shifted.marginal_error <= 1e-8
    assert np.abs(shifted.gamma - sinkhorn_solve(c, epsilon=0.1).gamma).max() <= 1e-10


def test_permutation_equivariance():
    rng = np.random.default_rng(5)
    c = rng.uniform(size=(4, 6))
    perm = rng.permutation(6)
    g = sinkhorn_solve(c, epsilon=0.1).gamma
    gp = sinkhorn_solve(c[:, perm], epsilon=0.1).gamma
    assert np.abs(g[:, perm] - gp).max() <= 1e-12


def test_marginal_contract():
    with pytest.raises(ContractError):
        sinkhorn_solve(np.ones((2, 2)), a=np.array([1.0, 0.0]), epsilon=1.0)
    with pytest.raises(ContractError):
        sinkhorn_solve(np.ones((2, 2)), epsilon=0.0)
    with pytest.raises(ContractError):
        default_epsilon(np.zeros((2, 2)))


def _coupling(gamma):
    gamma = np.asarray(gamma, dtype=float)
    return Coupling(gamma, gamma.sum(1), gamma.sum(0), 1.0, 0, 0.0, True)


def test_fate_prediction_rules():
    cp = _coupling([[0.21, 0.09], [0.35, 0.35]])
    assert list(coupling_fate_prediction(cp, [NEUTROPHIL, MONOCYTE])) == [NEUTROPHIL, MONOCYTE]
    assert list(coupling_fate_prediction(cp, [NEUTROPHIL, NEUTROPHIL])) == [NEUTROPHIL] * 2
    with pytest.raises(ContractError):
        coupling_fate_prediction(cp, [0, 1], mode="predicted_labels")


def test_fate_prediction_on_separated_synthetic():
    cfg = SynthConfig(fate_axis_strength=1.5, priming_strength=0.0, fate_bias=1.0, seed=0,
                      n_day2=200, n_day46=600)
    ds = synth_branching(cfg)
    pre = Preprocessor.fit(np.vstack([ds.day2.values, ds.day46.values]), 10)
    z2, z46 = pre.transform(ds.day2.values), pre.transform(ds.day46.values)
    c = cost_matrix(z2, z46)
    cp = sinkhorn_solve(c, epsilon=default_epsilon(c, 0.02))
    pred = coupling_fate_prediction(cp, ds.day46_labels.labels)
    truth = assign_day2_labels(ds.clones, ds.day46_labels, ds.day2.cell_ids).labels
    assert (pred == truth).mean() >= 0.9


def test_export(tmp_path):
    cp = sinkhorn_solve(np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]), epsilon=0.5)
    export_coupling(cp, ["a", "b", "c"], ["x", "y"], tmp_path / "c.csv", tmp_path / "s.json")
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "day2_id,day46_id,mass" and len(rows) == 7
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["marginal_error"] <= 1e-8 and summary["shape"] == [3, 2]
