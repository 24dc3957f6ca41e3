import numpy as np
import pytest

from superot.errors import ContractError, DegenerateCellError, ParseError, ShapeError
from superot.preprocess import (
    PcaModel, Preprocessor, l1_normalize_rows, pca_fit, pca_inverse, pca_transform,
    reconstruction_error, scale_genes_unit,
)


def test_l1_rows():
    assert np.array_equal(l1_normalize_rows(np.array([[2.0, 2.0]])), [[0.5, 0.5]])
    assert np.array_equal(l1_normalize_rows(np.array([[1.0, 0.0, 0.0]])), [[1.0, 0.0, 0.0]])
    x = np.random.default_rng(0).uniform(0, 3, size=(5, 7))
    assert np.abs(l1_normalize_rows(x).sum(axis=1) - 1).max() <= 1e-12


def test_l1_zero_row_reports_cell():
    from superot.data import ExpressionMatrix
    m = ExpressionMatrix(np.array([[1.0, 2.0], [0.0, 0.0]]), ["a", "b"], ["g1", "g2"], "day2")
    with pytest.raises(DegenerateCellError) as err:
        l1_normalize_rows(m)
    assert err.value.cell_ids == ["b"]


def test_scale_genes():
    out, scale, zero = scale_genes_unit(np.array([[3.0, 0.0], [4.0, 0.0]]))
    assert np.allclose(out[:, 0], [0.6, 0.8], atol=1e-15)
    assert np.array_equal(out[:, 1], [0.0, 0.0])
    assert list(zero) == [1]
    x = np.random.default_rng(1).exponential(size=(9, 4))
    out, _, _ = scale_genes_unit(x)
    assert out.max() <= 1.0
    assert np.abs(np.linalg.norm(out, axis=0) - 1).max() <= 1e-12


def test_scale_genes_rejects_negative():
    with pytest.raises(ContractError):
        scale_genes_unit(np.array([[-1.0, 1.0]]))


def test_pca_line():
    t = np.linspace(-2, 2, 11)
    direction = np.array([3.0, 4.0]) / 5.0
    x = np.outer(t, direction) + np.array([1.0, -1.0])
    m = pca_fit(x, 1)
    assert np.allclose(m.components[0], direction, atol=1e-12)
    assert np.isclose(m.explained_variance[0], t.var(ddof=1))


def test_pca_full_rank_roundtrip():
    x = np.random.default_rng(2).normal(size=(20, 6))
    m = pca_fit(x, 6)
    assert np.abs(pca_inverse(m, pca_transform(m, x)) - x).max() <= 1e-8


def test_pca_reconstruction_matches_eigen_oracle():
    x = np.random.default_rng(3).normal(size=(50, 10))
    m = pca_fit(x, 3)
    evals = np.linalg.eigvalsh(np.cov(x, rowvar=False))
    assert abs(reconstruction_error(m, x) - np.sort(evals)[:7].sum()) <= 1e-8


def test_pca_structure():
    x = np.random.default_rng(4).normal(size=(30, 8))
    m = pca_fit(x, 5)
    assert np.abs(m.components @ m.components.T - np.eye(5)).max() <= 1e-8
    assert np.all(np.diff(m.explained_variance) <= 0)
    pivots = np.argmax(np.abs(m.components), axis=1)
    assert np.all(m.components[np.arange(5), pivots] > 0)


def test_pca_transform_of_mean_is_zero():
    x = np.random.default_rng(5).normal(size=(12, 4))
    m = pca_fit(x, 2)
    assert np.abs(pca_transform(m, m.mean[None, :])).max() == 0.0


def test_pca_projection_idempotent():
    x = np.random.default_rng(6).normal(size=(15, 7))
    m = pca_fit(x, 3)
    z = np.random.default_rng(7).normal(size=(4, 3))
    assert np.abs(pca_transform(m, pca_inverse(m, z)) - z).max() <= 1e-10


def test_reconstruction_error_monotone_in_k():
    x = np.random.default_rng(8).normal(size=(30, 8))
    errs = [reconstruction_error(pca_fit(x, k), x) for k in range(1, 9)]
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))


def test_pca_errors():
    x = np.random.default_rng(9).normal(size=(4, 3))
    with pytest.raises(ContractError):
        pca_fit(x, 4)
    m = pca_fit(x, 2)
    with pytest.raises(ShapeError):
        pca_transform(m, np.ones((2, 5)))
    with pytest.raises(ShapeError):
        pca_inverse(m, np.ones((2, 3)))


def test_pca_binary_roundtrip(tmp_path):
    m = pca_fit(np.random.default_rng(10).normal(size=(10, 5)), 3)
    path = tmp_path / "pca.bin"
    m.save(path)
    back = PcaModel.load(path)
    for a, b in [(m.mean, back.mean), (m.components, back.components),
                 (m.explained_variance, back.explained_variance)]:
        assert a.tobytes() == b.tobytes()
    with pytest.raises(ParseError):
        PcaModel.from_bytes(b"nope" + path.read_bytes())


def test_preprocessor_fits_on_train_only():
    rng = np.random.default_rng(11)
    train, test = rng.exponential(size=(40, 12)), rng.exponential(size=(10, 12))
    pre = Preprocessor.fit(train, 4)
    z = pre.transform(test)
    assert z.shape == (10, 4)
    # refitting on the union would give a different scale vector
    assert not np.allclose(Preprocessor.fit(np.vstack([train, test]), 4).gene_scale, pre.gene_scale)
    assert np.abs(pre.transform(train).mean(axis=0)).max() < 1e-12
