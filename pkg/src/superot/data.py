"""Expression/clone data model, file formats, pairing, splitting and a synthetic generator."""

from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import CapacityError, ContractError, ParseError

log = logging.getLogger(__name__)

DAY2 = "day2"
DAY46 = "day4_6"
TIMEPOINTS = (DAY2, DAY46)

MONOCYTE = 0
NEUTROPHIL = 1
UNLABELED = -1
FATE_NAMES = ("Monocyte", "Neutrophil")

PACKED_MAGIC = b"LOTX"
PACKED_VERSION = 1


@dataclass
class ExpressionMatrix:
    values: np.ndarray
    cell_ids: list
    gene_ids: list
    timepoint: str = DAY2

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.cell_ids = [str(c) for c in self.cell_ids]
        self.gene_ids = [str(g) for g in self.gene_ids]
        if self.values.ndim != 2:
            raise ContractError("expression values must be a 2-D matrix")
        n, d = self.values.shape
        if len(self.cell_ids) != n or len(self.gene_ids) != d:
            raise ContractError(
                f"{len(self.cell_ids)} cell ids and {len(self.gene_ids)} gene ids for a {n}x{d} matrix")
        if not np.isfinite(self.values).all():
            raise ContractError("expression values must be finite")
        if self.timepoint not in TIMEPOINTS:
            raise ContractError(f"unknown timepoint {self.timepoint!r}")

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_cells(self):
        return self.values.shape[0]

    def with_values(self, values):
        return ExpressionMatrix(values, self.cell_ids, self.gene_ids, self.timepoint)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return ExpressionMatrix(self.values[idx], [self.cell_ids[i] for i in idx],
                                self.gene_ids, self.timepoint)


@dataclass
class FateLabel:
    """Per-cell fate codes: 0 Monocyte, 1 Neutrophil, -1 undefined."""

    cell_ids: list
    labels: np.ndarray

    def __post_init__(self):
        self.cell_ids = [str(c) for c in self.cell_ids]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.cell_ids) != len(self.labels):
            raise ContractError("label vector and cell ids differ in length")
        if not np.isin(self.labels, (UNLABELED, MONOCYTE, NEUTROPHIL)).all():
            raise ContractError("fate labels must be -1, 0 or 1")

    @property
    def defined(self):
        return self.labels != UNLABELED

    def as_dict(self):
        return dict(zip(self.cell_ids, self.labels.tolist()))

    def aligned(self, cell_ids):
        lookup = self.as_dict()
        return np.array([lookup.get(c, UNLABELED) for c in cell_ids], dtype=np.int64)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return FateLabel([self.cell_ids[i] for i in idx], self.labels[idx])


@dataclass
class CloneMatrix:
    """Sparse binary cell x clone membership stored as (cell, clone) triplets."""

    cell_ids: list
    clone_ids: list
    triplets: list = field(default_factory=list)

    def __post_init__(self):
        self._clone_of = {}
        self.violations = []
        for cell, clone in self.triplets:
            if cell in self._clone_of and self._clone_of[cell] != clone:
                self.violations.append(cell)
            self._clone_of.setdefault(cell, clone)
        for cell in set(self.violations):
            self._clone_of[cell] = None
        if self.violations:
            log.warning("%d cells belong to more than one clone; they are ignored for pairing",
                        len(set(self.violations)))

    @classmethod
    def from_assignments(cls, cell_ids, clone_ids_per_cell):
        trip = [(str(c), str(k)) for c, k in zip(cell_ids, clone_ids_per_cell) if k is not None]
        clones = sorted({k for _, k in trip})
        return cls([str(c) for c in cell_ids], clones, trip)

    def clone_of(self, cell_id):
        return self._clone_of.get(cell_id)

    def members(self, cell_ids):
        """Map clone id -> list of positions in ``cell_ids``."""
        out = {}
        for i, c in enumerate(cell_ids):
            k = self._clone_of.get(c)
            if k is not None:
                out.setdefault(k, []).append(i)
        return out

    def dense(self):
        rows = {c: i for i, c in enumerate(self.cell_ids)}
        cols = {k: j for j, k in enumerate(self.clone_ids)}
        m = np.zeros((len(self.cell_ids), len(self.clone_ids)), dtype=np.int8)
        for c, k in self.triplets:
            m[rows[c], cols[k]] = 1
        return m


@dataclass
class PairedDataset:
    """(day-2 index, day-4/6 index) pairs into the matrices they were built from."""

    pairs: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.pairs)

    @property
    def day2(self):
        return self.pairs[:, 0]

    @property
    def day46(self):
        return self.pairs[:, 1]


# ---------------------------------------------------------------- file formats

def _parse_float(tok, line):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"non-numeric value {tok!r}", line) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", line)
    return v


def read_expression_csv(path, timepoint=DAY2) -> ExpressionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError("empty file", 1)
        genes = header[1:]
        if not genes:
            raise ParseError("header has no gene columns", 1)
        if len(set(genes)) != len(genes):
            raise ParseError("duplicate gene ids in header", 1)
        cells, rows, seen = [], [], set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", lineno)
            if row[0] in seen:
                raise ParseError(f"duplicate cell id {row[0]!r}", lineno)
            seen.add(row[0])
            cells.append(row[0])
            rows.append([_parse_float(t, lineno) for t in row[1:]])
    if not rows:
        raise ParseError("no data rows", 2)
    m = ExpressionMatrix(np.array(rows), cells, genes, timepoint)
    log.info("read %d cells x %d genes from %s", m.n_cells, len(genes), path)
    return m


def write_expression_csv(m: ExpressionMatrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", *m.gene_ids])
        for cid, row in zip(m.cell_ids, m.values):
            w.writerow([cid, *(repr(float(v)) for v in row)])


def _pack_ids(ids):
    out = io.BytesIO()
    for s in ids:
        b = s.encode("utf-8")
        out.write(struct.pack("<I", len(b)))
        out.write(b)
    return out.getvalue()


def _unpack_ids(raw, off, count):
    ids = []
    for _ in range(count):
        if off + 4 > len(raw):
            raise ParseError("truncated id table")
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        ids.append(raw[off:off + n].decode("utf-8"))
        off += n
    return ids, off


def write_expression_packed(m: ExpressionMatrix, path):
    n, d = m.shape
    tp = TIMEPOINTS.index(m.timepoint)
    blob = (PACKED_MAGIC + struct.pack("<BBQQ", PACKED_VERSION, tp, n, d)
            + _pack_ids(m.cell_ids) + _pack_ids(m.gene_ids)
            + np.ascontiguousarray(m.values, dtype="<f8").tobytes())
    Path(path).write_bytes(blob)


def read_expression_packed(path) -> ExpressionMatrix:
    raw = Path(path).read_bytes()
    if not raw:
        raise ParseError("empty file")
    if not raw.startswith(PACKED_MAGIC):
        raise ParseError("bad magic; not a packed expression file")
    off = len(PACKED_MAGIC)
    version, tp, n, d = struct.unpack_from("<BBQQ", raw, off)
    if version != PACKED_VERSION:
        raise ParseError(f"unsupported packed version {version}")
    off += struct.calcsize("<BBQQ")
    cells, off = _unpack_ids(raw, off, n)
    genes, off = _unpack_ids(raw, off, d)
    if len(raw) - off != 8 * n * d:
        raise ParseError("value block length does not match dimensions")
    values = np.frombuffer(raw, dtype="<f8", offset=off).reshape(n, d).astype(np.float64)
    if len(set(cells)) != n or len(set(genes)) != d:
        raise ParseError("duplicate ids in packed file")
    return ExpressionMatrix(values, cells, genes, TIMEPOINTS[tp])


def load_expression(path, format="csv", timepoint=DAY2) -> ExpressionMatrix:
    if format == "csv":
        return read_expression_csv(path, timepoint)
    if format in ("packed", "packed-binary", "bin"):
        return read_expression_packed(path)
    raise ContractError(f"unknown expression format {format!r}")


def write_clones_csv(clones: CloneMatrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for cell, clone in clones.triplets:
            w.writerow([cell, clone, 1])


def read_clones_csv(path, cell_ids=None) -> CloneMatrix:
    trip = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected cell_id,clone_id,1 triplet, found {len(row)} fields", lineno)
            if lineno == 1 and row[2] not in ("0", "1"):
                continue  # header
            if row[2] not in ("0", "1"):
                raise ParseError(f"clone membership must be 0 or 1, got {row[2]!r}", lineno)
            if row[2] == "1":
                trip.append((row[0], row[1]))
    if cell_ids is None:
        cell_ids = list(dict.fromkeys(c for c, _ in trip))
    return CloneMatrix(list(cell_ids), sorted({k for _, k in trip}), trip)


def write_labels_csv(labels: FateLabel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "fate"])
        for c, v in zip(labels.cell_ids, labels.labels):
            w.writerow([c, FATE_NAMES[v] if v >= 0 else ""])


def read_labels_csv(path) -> FateLabel:
    cells, codes = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError("expected cell_id,fate", lineno)
            name = row[1].strip()
            if name == "":
                codes.append(UNLABELED)
            elif name in FATE_NAMES:
                codes.append(FATE_NAMES.index(name))
            else:
                raise ParseError(f"unknown fate {name!r}", lineno)
            cells.append(row[0])
    return FateLabel(cells, np.array(codes, dtype=np.int64))


# ---------------------------------------------------------------- pairing

def clone_majorities(clones: CloneMatrix, day46_ids, day46_labels: FateLabel):
    """Majority fate per clone over its labelled day-4/6 members.

    Returns ``{clone: (majority_code, member_positions_of_that_class)}``;
    evenly split clones are omitted.
    """
    codes = day46_labels.aligned(day46_ids)
    out = {}
    for clone, pos in clones.members(day46_ids).items():
        pos = np.asarray(pos)
        lab = codes[pos]
        n_mono = int((lab == MONOCYTE).sum())
        n_neu = int((lab == NEUTROPHIL).sum())
        if n_mono == n_neu:
            continue
        maj = MONOCYTE if n_mono > n_neu else NEUTROPHIL
        out[clone] = (maj, pos[lab == maj])
    return out


def eligible_day2(day2_ids, clones, majorities, subset=None):
    idx = range(len(day2_ids)) if subset is None else sorted(int(i) for i in subset)
    return [i for i in idx if clones.clone_of(day2_ids[i]) in majorities]


def build_pairs(day2: ExpressionMatrix, day46: ExpressionMatrix, clones: CloneMatrix,
                labels: FateLabel, n_pairs: int, seed: int,
                day2_subset=None, day46_subset=None) -> PairedDataset:
    """Pair day-2 cells with same-clone day-4/6 cells of the clone's majority fate.

    Each selected day-2 cell gets one partner drawn uniformly from its
    clone's majority-class members. Clones with a tied vote are excluded.
    For a fixed seed the pair sets are nested: a smaller ``n_pairs`` gives a
    subset of the pairs of a larger one.
    ``day2_subset``/``day46_subset`` restrict both sides (e.g. to a
    training split).
    """
    if n_pairs < 0:
        raise ContractError("n_pairs must be nonnegative")
    keep46 = None if day46_subset is None else set(int(i) for i in day46_subset)
    maj = {}
    for clone, (code, pos) in clone_majorities(clones, day46.cell_ids, labels).items():
        if keep46 is not None:
            pos = np.array([p for p in pos if p in keep46], dtype=np.int64)
        if len(pos):
            maj[clone] = (code, pos)
    eligible = eligible_day2(day2.cell_ids, clones, maj, day2_subset)
    if n_pairs > len(eligible):
        raise CapacityError(n_pairs, len(eligible))
    # every eligible cell gets a rank and a partner, and the first n_pairs by
    # rank are kept, so for one seed a smaller pair set is a subset of a larger one
    rng = np.random.default_rng(seed)
    order = rng.permutation(np.array(eligible, dtype=np.int64))
    partner = {}
    for i in order:
        _, pos = maj[clones.clone_of(day2.cell_ids[i])]
        partner[int(i)] = int(pos[rng.integers(len(pos))])
    pairs = [(int(i), partner[int(i)]) for i in np.sort(order[:n_pairs])]
    ds = PairedDataset(np.array(pairs, dtype=np.int64).reshape(-1, 2),
                       {"rule": "same-clone majority-class partner, uniform", "seed": int(seed),
                        "n_eligible": len(eligible)})
    check_pairs(ds, day2, day46, clones, labels)
    return ds


def check_pairs(ds: PairedDataset, day2, day46, clones, labels):
    """Raise if any pair crosses clones or uses a minority-class partner."""
    maj = clone_majorities(clones, day46.cell_ids, labels)
    codes = labels.aligned(day46.cell_ids)
    for i, j in ds.pairs:
        if not (0 <= i < day2.n_cells and 0 <= j < day46.n_cells):
            raise ContractError(f"pair ({i}, {j}) out of range")
        k = clones.clone_of(day2.cell_ids[i])
        if k is None or clones.clone_of(day46.cell_ids[j]) != k:
            raise ContractError(f"pair ({i}, {j}) crosses clones")
        if k not in maj or codes[j] != maj[k][0]:
            raise ContractError(f"pair ({i}, {j}) partner is not of the clone majority class")


def assign_day2_labels(clones: CloneMatrix, day46_labels: FateLabel, day2_ids, day46_ids=None) -> FateLabel:
    """Clone-majority fate for each day-2 cell; ties and unlabelled clones give -1."""
    if day46_ids is None:
        day46_ids = day46_labels.cell_ids
    maj = clone_majorities(clones, day46_ids, day46_labels)
    out = np.full(len(day2_ids), UNLABELED, dtype=np.int64)
    missing = 0
    for i, c in enumerate(day2_ids):
        k = clones.clone_of(c)
        if k in maj:
            out[i] = maj[k][0]
        else:
            missing += 1
    if missing:
        log.warning("%d day-2 cells have no clone majority (tie or no labelled members); excluded",
                    missing)
    return FateLabel(list(day2_ids), out)


# ---------------------------------------------------------------- splitting

def split_train_test(n, fraction=0.8, seed=0):
    """Seeded shuffle of ``range(n)`` into sorted train/test index arrays."""
    if not 0.0 < fraction < 1.0:
        raise ContractError("fraction must lie strictly between 0 and 1")
    n = int(n)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class Split:
    day2_train: np.ndarray
    day2_test: np.ndarray
    day46_train: np.ndarray
    day46_test: np.ndarray


def split_cells(n_day2, n_day46, fraction=0.8, seed=0) -> Split:
    ss = np.random.SeedSequence(seed).spawn(2)
    s2 = int(ss[0].generate_state(1)[0])
    s46 = int(ss[1].generate_state(1)[0])
    a, b = split_train_test(n_day2, fraction, s2)
    c, d = split_train_test(n_day46, fraction, s46)
    return Split(a, b, c, d)


def pairs_in_train(ds: PairedDataset, day2_train) -> PairedDataset:
    keep = np.isin(ds.day2, day2_train)
    return PairedDataset(ds.pairs[keep], dict(ds.provenance))


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthConfig:
    n_genes: int = 200
    n_pca_informative: int = 20
    n_day2: int = 400
    n_day46: int = 2000
    n_clones: int = 100
    de_gene_fraction: float = 0.1
    noise_scale: float = 0.5
    fate_bias: float = 0.9
    seed: int = 0
    base_low: float = 2.0
    base_high: float = 4.0
    de_shift: float = 1.5
    fate_axis_strength: float = 0.1
    priming_strength: float = 1.0
    maturation_fraction: float = 0.1
    maturation_shift: float = 1.0
    maturation_spread: float = 1.0
    priming_spread: float = 2.0
    clone_purity: float = 0.8

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class SynthDataset:
    day2: ExpressionMatrix
    day46: ExpressionMatrix
    clones: CloneMatrix
    day46_labels: FateLabel
    planted_de_genes: list
    clone_fates: dict
    fate_centroids: np.ndarray
    progenitor_latent: dict


def _balanced_signs(rng, n):
    return rng.permutation(np.where(np.arange(n) < (n + 1) // 2, 1.0, -1.0))


def synth_branching(cfg: SynthConfig) -> SynthDataset:
    """Two-fate branching differentiation with clonal structure.

    Every clone carries a latent fate propensity ``z``. Its progenitor
    centre moves by ``fate_axis_strength * z`` along the fate (DE) axis and
    by ``priming_strength * z`` along a separate set of priming genes that
    the differentiated cells do not express differently. The clone's fate is
    the one whose centroid is nearer its progenitor (sign of ``z``) with
    probability ``fate_bias``. Day-4/6 members follow the clone fate except
    for a minority fixed by ``clone_purity``, so the clone majority always
    equals the planted fate.
    """
    if cfg.n_day2 < 2 * cfg.n_clones or cfg.n_day46 < 2 * cfg.n_clones:
        raise ContractError("need at least two day-2 and two day-4/6 cells per clone")
    if not 0.0 < cfg.de_gene_fraction < 1.0:
        raise ContractError("de_gene_fraction must lie in (0, 1)")
    if not 0.5 < cfg.clone_purity <= 1.0:
        raise ContractError("clone_purity must lie in (0.5, 1]")
    if not 0.0 <= cfg.fate_bias <= 1.0:
        raise ContractError("fate_bias must lie in [0, 1]")
    n_de = int(round(cfg.de_gene_fraction * cfg.n_genes))
    if n_de < 1 or n_de + cfg.n_pca_informative > cfg.n_genes:
        raise ContractError("gene budget too small for DE and priming sets")
    if cfg.noise_scale < 0:
        raise ContractError("noise_scale must be nonnegative")

    rng = np.random.default_rng(cfg.seed)
    d = cfg.n_genes
    genes = [f"g{i:05d}" for i in range(d)]
    order = rng.permutation(d)
    de = np.sort(order[:n_de])
    prime = np.sort(order[n_de:n_de + cfg.n_pca_informative])
    n_mat = int(round(cfg.maturation_fraction * d))
    mature = np.sort(rng.permutation(order[n_de:])[:n_mat])

    base = rng.uniform(cfg.base_low, cfg.base_high, size=d)
    # balanced signs keep total expression equal across fates, so per-cell
    # normalisation does not shift one population towards a fate
    de_sign = _balanced_signs(rng, n_de)
    prime_sign = _balanced_signs(rng, cfg.n_pca_informative)
    fate_axis = np.zeros(d)
    fate_axis[de] = de_sign
    prime_axis = np.zeros(d)
    prime_axis[prime] = prime_sign
    matured = base.copy()
    matured[mature] += cfg.maturation_shift
    centroids = np.stack([matured + cfg.de_shift * fate_axis,    # Monocyte
                          matured - cfg.de_shift * fate_axis])   # Neutrophil

    z = rng.normal(size=cfg.n_clones)
    nearest = np.where(z > 0, MONOCYTE, NEUTROPHIL)
    keep = rng.uniform(size=cfg.n_clones) < cfg.fate_bias
    fate = np.where(keep, nearest, 1 - nearest)
    centers = base + np.outer(z, cfg.fate_axis_strength * fate_axis + cfg.priming_strength * prime_axis)

    def allot(n):
        owner = np.concatenate([np.repeat(np.arange(cfg.n_clones), 2),
                                rng.integers(cfg.n_clones, size=n - 2 * cfg.n_clones)])
        return np.sort(owner)

    own2 = allot(cfg.n_day2)
    x2 = centers[own2] + cfg.noise_scale * rng.normal(size=(cfg.n_day2, d))

    own46 = allot(cfg.n_day46)
    lab46 = fate[own46].copy()
    for k in range(cfg.n_clones):
        pos = np.flatnonzero(own46 == k)
        n_off = int(np.floor((1.0 - cfg.clone_purity) * len(pos)))
        n_off = min(n_off, (len(pos) - 1) // 2)
        if n_off:
            flip = rng.choice(pos, size=n_off, replace=False)
            lab46[flip] = 1 - fate[k]
    x46 = centroids[lab46] + cfg.noise_scale * rng.normal(size=(cfg.n_day46, d))
    # fate-independent spread along the maturation and priming directions, in
    # units of noise_scale; a classifier fit on these cells then sees both vary
    # and puts little weight on them instead of extrapolating to day-2 cells
    het = cfg.noise_scale
    x46 += np.outer(het * cfg.maturation_spread * rng.normal(size=cfg.n_day46), matured - base)
    x46 += np.outer(het * cfg.priming_spread * rng.normal(size=cfg.n_clones)[own46],
                    cfg.priming_strength * prime_axis)

    np.maximum(x2, 0.0, out=x2)
    np.maximum(x46, 0.0, out=x46)
    ids2 = [f"d2_{i:05d}" for i in range(cfg.n_day2)]
    ids46 = [f"d46_{i:05d}" for i in range(cfg.n_day46)]
    clone_names = [f"clone{k:04d}" for k in range(cfg.n_clones)]
    clones = CloneMatrix.from_assignments(
        ids2 + ids46, [clone_names[k] for k in own2] + [clone_names[k] for k in own46])
    return SynthDataset(
        day2=ExpressionMatrix(x2, ids2, genes, DAY2),
        day46=ExpressionMatrix(x46, ids46, genes, DAY46),
        clones=clones,
        day46_labels=FateLabel(ids46, lab46),
        planted_de_genes=[genes[i] for i in de],
        clone_fates={clone_names[k]: int(fate[k]) for k in range(cfg.n_clones)},
        fate_centroids=centroids,
        progenitor_latent={clone_names[k]: float(z[k]) for k in range(cfg.n_clones)},
    )


# ---------------------------------------------------------------- dataset directories

DATASET_FILES = {"csv": ("day2.csv", "day46.csv"), "packed": ("day2.lotx", "day46.lotx")}
CLONES_FILE = "clones.csv"
LABELS_FILE = "labels.csv"
PLANTED_FILE = "planted_de_genes.txt"


@dataclass
class Dataset:
    """The inputs every command needs; ``planted_de_genes`` only exists for synthetic data."""

    day2: ExpressionMatrix
    day46: ExpressionMatrix
    clones: CloneMatrix
    day46_labels: FateLabel
    planted_de_genes: list | None = None


def write_dataset(ds, out_dir, format="csv") -> list:
    """Write a dataset directory; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if format not in DATASET_FILES:
        raise ContractError(f"unknown expression format {format!r}")
    writer = write_expression_csv if format == "csv" else write_expression_packed
    names = DATASET_FILES[format]
    paths = [out_dir / names[0], out_dir / names[1], out_dir / CLONES_FILE, out_dir / LABELS_FILE]
    writer(ds.day2, paths[0])
    writer(ds.day46, paths[1])
    write_clones_csv(ds.clones, paths[2])
    write_labels_csv(ds.day46_labels, paths[3])
    if ds.planted_de_genes is not None:
        paths.append(out_dir / PLANTED_FILE)
        paths[-1].write_text("".join(f"{g}\n" for g in ds.planted_de_genes), encoding="utf-8")
    return paths


def dataset_paths(data_dir) -> list:
    data_dir = Path(data_dir)
    for names in DATASET_FILES.values():
        if (data_dir / names[0]).exists():
            found = [data_dir / n for n in names] + [data_dir / CLONES_FILE, data_dir / LABELS_FILE]
            if (data_dir / PLANTED_FILE).exists():
                found.append(data_dir / PLANTED_FILE)
            return found
    raise ParseError(f"no day2.csv or day2.lotx in {data_dir}")


def read_dataset(data_dir) -> Dataset:
    """Load a directory written by :func:`write_dataset` (or laid out the same way)."""
    paths = dataset_paths(data_dir)
    fmt = "csv" if paths[0].suffix == ".csv" else "packed"
    for p in paths[1:4]:
        if not p.exists():
            raise ParseError(f"missing dataset file {p}")
    day2 = load_expression(paths[0], fmt, DAY2)
    day46 = load_expression(paths[1], fmt, DAY46)
    if day2.gene_ids != day46.gene_ids:
        raise ParseError("day-2 and day-4/6 files list different genes")
    clones = read_clones_csv(paths[2])
    labels = read_labels_csv(paths[3])
    missing = set(day46.cell_ids) - set(labels.cell_ids)
    if missing:
        raise ParseError(f"{len(missing)} day-4/6 cells have no row in {LABELS_FILE}")
    planted = None
    if len(paths) > 4:
        planted = [g for g in paths[4].read_text(encoding="utf-8").split() if g]
    return Dataset(day2, day46, clones, labels, planted)
