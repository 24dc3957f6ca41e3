"""Expression preprocessing: per-cell L1 normalisation, per-gene unit scaling, PCA.

The pipeline order is fixed. Scale vector and PCA basis are fitted on the
training cells only and then applied unchanged to held-out cells.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateCellError, ParseError, ShapeError

PCA_MAGIC = b"SOTPCA\x00\x01"
PCA_VERSION = 1
PREP_MAGIC = b"SOTPREP\x00"


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def _rewrap(x, values):
    if hasattr(x, "with_values"):
        return x.with_values(values)
    return values


def l1_normalize_rows(x):
    """Divide each cell by its total counts so every row sums to one."""
    v = _values(x)
    if np.any(v < 0):
        raise ContractError("expression values must be nonnegative")
    totals = v.sum(axis=1)
    zero = np.flatnonzero(totals == 0)
    if zero.size:
        ids = getattr(x, "cell_ids", None)
        raise DegenerateCellError([ids[i] for i in zero] if ids is not None else [str(i) for i in zero])
    return _rewrap(x, v / totals[:, None])


def gene_scale_vector(x) -> np.ndarray:
    """Per-gene L2 norms; zero columns get a divisor of 1 so they stay zero."""
    v = _values(x)
    if np.any(v < 0):
        raise ContractError("gene scaling expects nonnegative values")
    norms = np.sqrt((v * v).sum(axis=0))
    return np.where(norms > 0, norms, 1.0)


def scale_genes_unit(x, scale: np.ndarray | None = None):
    """Divide every gene column by its L2 norm.

    Returns ``(scaled, scale, zero_columns)``. Passing ``scale`` applies a
    previously fitted vector instead of computing one.
    """
    v = _values(x)
    if np.any(v < 0):
        raise ContractError("gene scaling expects nonnegative values")
    if scale is None:
        scale = gene_scale_vector(v)
    elif scale.shape != (v.shape[1],):
        raise ShapeError(f"scale vector has length {scale.shape}, expected {v.shape[1]}")
    zero_cols = np.flatnonzero(~np.any(v != 0, axis=0))
    return _rewrap(x, v / scale), scale, zero_cols


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]

    def transform(self, x):
        return pca_transform(self, x)

    def inverse(self, z):
        return pca_inverse(self, z)

    def to_bytes(self) -> bytes:
        k, d = self.components.shape
        head = PCA_MAGIC + struct.pack("<BQQ", PCA_VERSION, k, d)
        body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                        for a in (self.mean, self.components, self.explained_variance))
        return head + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PcaModel":
        if not raw.startswith(PCA_MAGIC):
            raise ParseError("not a PCA model file (bad magic)")
        off = len(PCA_MAGIC)
        version, k, d = struct.unpack_from("<BQQ", raw, off)
        if version != PCA_VERSION:
            raise ParseError(f"unsupported PCA model version {version}")
        off += struct.calcsize("<BQQ")
        need = 8 * (d + k * d + k)
        if len(raw) - off != need:
            raise ParseError(f"PCA model body has {len(raw) - off} bytes, expected {need}")
        arr = np.frombuffer(raw, dtype="<f8", offset=off).astype(np.float64)
        return cls(arr[:d].copy(), arr[d:d + k * d].reshape(k, d).copy(), arr[d + k * d:].copy())

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PcaModel":
        return cls.from_bytes(Path(path).read_bytes())


def pca_fit(x, k: int) -> PcaModel:
    """Top-``k`` principal axes of ``x`` via a thin SVD of the centred matrix.

    Each component is signed so that its largest-magnitude coordinate is
    positive, which makes the basis reproducible across runs.
    """
    v = _values(x)
    n, d = v.shape
    if n < 2:
        raise ContractError("PCA needs at least two rows")
    if not 1 <= k <= min(n, d):
        raise ContractError(f"n_components={k} must be in [1, {min(n, d)}]")
    mean = v.mean(axis=0)
    _, s, vt = np.linalg.svd(v - mean, full_matrices=False)
    comps = vt[:k].copy()
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivots])
    comps *= signs[:, None]
    return PcaModel(mean, comps, s[:k] ** 2 / (n - 1))


def pca_transform(m: PcaModel, x) -> np.ndarray:
    v = _values(x)
    if v.ndim != 2 or v.shape[1] != m.n_features:
        raise ShapeError(f"expected {m.n_features} features, got shape {v.shape}")
    return (v - m.mean) @ m.components.T


def pca_inverse(m: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != m.n_components:
        raise ShapeError(f"expected {m.n_components} components, got shape {z.shape}")
    return z @ m.components + m.mean


def reconstruction_error(m: PcaModel, x) -> float:
    """Total squared residual after projection, divided by ``n - 1``."""
    v = _values(x)
    resid = v - pca_inverse(m, pca_transform(m, v))
    return float((resid * resid).sum() / (v.shape[0] - 1))


@dataclass
class Preprocessor:
    """Fitted preprocessing chain; apply with :meth:`transform`."""

    gene_scale: np.ndarray
    pca: PcaModel
    zero_genes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    steps: tuple = ("l1_rows", "gene_unit_l2", "pca")

    @classmethod
    def fit(cls, x, n_components: int) -> "Preprocessor":
        normed = _values(l1_normalize_rows(x))
        scaled, scale, zero = scale_genes_unit(normed)
        return cls(scale, pca_fit(scaled, n_components), zero)

    def to_gene_space(self, x) -> np.ndarray:
        """Normalised, scaled expression (the space PCA operates in)."""
        scaled, _, _ = scale_genes_unit(_values(l1_normalize_rows(x)), self.gene_scale)
        return scaled

    def transform(self, x) -> np.ndarray:
        return pca_transform(self.pca, self.to_gene_space(x))

    def to_bytes(self) -> bytes:
        d = len(self.gene_scale)
        head = PREP_MAGIC + struct.pack("<BQQ", PCA_VERSION, d, len(self.zero_genes))
        return (head + np.ascontiguousarray(self.gene_scale, dtype="<f8").tobytes()
                + np.ascontiguousarray(self.zero_genes, dtype="<i8").tobytes() + self.pca.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Preprocessor":
        if not raw.startswith(PREP_MAGIC):
            raise ParseError("not a preprocessor file (bad magic)")
        off = len(PREP_MAGIC)
        version, d, nz = struct.unpack_from("<BQQ", raw, off)
        if version != PCA_VERSION:
            raise ParseError(f"unsupported preprocessor version {version}")
        off += struct.calcsize("<BQQ")
        if len(raw) < off + 8 * (d + nz):
            raise ParseError("truncated preprocessor file")
        scale = np.frombuffer(raw, dtype="<f8", count=d, offset=off).astype(np.float64)
        off += 8 * d
        zero = np.frombuffer(raw, dtype="<i8", count=nz, offset=off).astype(np.int64)
        off += 8 * nz
        pca = PcaModel.from_bytes(raw[off:])
        if pca.n_features != d:
            raise ParseError("preprocessor scale and PCA disagree on the gene count")
        return cls(scale, pca, zero)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Preprocessor":
        return cls.from_bytes(Path(path).read_bytes())
