"""A noiseless dataset whose day-2 to day-4/6 map is exactly linear after preprocessing.

Rows live in a rank-``r`` affine subspace and have a constant sum, and the
gene-space map ``y = x A`` uses a row-stochastic ``A``. Row normalisation is
then a constant rescale, gene scaling is diagonal and PCA with ``2 r``
components loses nothing, so the map stays affine in PCA space.
"""

import numpy as np

from superot.data import (
    DAY2, DAY46, MONOCYTE, NEUTROPHIL, CloneMatrix, Dataset, ExpressionMatrix, FateLabel,
)


def linear_dataset(n=400, d=30, r=3, seed=0):
    rng = np.random.default_rng(seed)
    basis = rng.normal(size=(r, d))
    basis -= basis.mean(axis=1, keepdims=True)          # rows of the basis sum to zero
    x = 5.0 + rng.normal(size=(n, r)) @ basis * 0.5
    perm = np.eye(d)[rng.permutation(d)]
    a = 0.5 * np.eye(d) + 0.5 * perm                    # row-stochastic
    y = x @ a
    genes = [f"g{j:03d}" for j in range(d)]
    ids2 = [f"a{i:04d}" for i in range(n)]
    ids46 = [f"b{i:04d}" for i in range(n)]
    clones = CloneMatrix.from_assignments(ids2 + ids46, [f"k{i:04d}" for i in range(n)] * 2)
    fates = np.where(np.arange(n) % 2 == 0, MONOCYTE, NEUTROPHIL)
    return Dataset(ExpressionMatrix(x, ids2, genes, DAY2), ExpressionMatrix(y, ids46, genes, DAY46),
                   clones, FateLabel(ids46, fates)), 2 * r
