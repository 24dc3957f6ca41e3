"""Transport/discriminator networks, losses and training loops.

Super-OT minimises ``lambda_trans * L_trans + L_gan + lambda_super * L_super``
over the transport network while the discriminator is trained on the GAN
objective plus a gradient penalty. The learned baselines are configurations
of the same loop:

* ``cgan``       conditional GAN only
* ``gan_ot``     conditional GAN plus transport cost
* ``supervised`` pairing loss only, using every available pair

Networks operate on PCA coordinates divided by a single global scale factor
(``TransportModel.scale``) so that loss weights do not depend on the
absolute magnitude of the preprocessed data.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import core
from .core import Adam, Tensor, grad, no_grad
from .errors import ContractError, DomainError, NonFiniteError, ParseError, TrainingError

log = logging.getLogger(__name__)

N_CLASSES = 2
NEUTRAL_CONDITION = np.full(N_CLASSES, 1.0 / N_CLASSES)


@dataclass
class TrainConfig:
    lambda_trans: float = 0.6
    lambda_super: float = 1.0
    lambda_gp: float = 10.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 2000
    hidden: int = 128
    n_pairs: int = 0
    seed: int = 0
    use_transport_cost: bool = True
    use_supervised: bool = True
    use_gan: bool = True
    conditional: bool = False
    converge_tol: float = 1e-4
    converge_window: int = 50
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    prob_eps: float = 1e-7

    def __post_init__(self):
        for name in ("lambda_trans", "lambda_super", "lambda_gp"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if self.batch_size < 2:
            raise ContractError("batch_size must be at least 2 (batch normalisation)")
        if self.max_epochs < 0 or self.hidden < 1:
            raise ContractError("max_epochs must be >= 0 and hidden >= 1")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def for_baseline(cls, kind, **overrides):
        presets = {
            "super_ot": {},
            "cgan": dict(conditional=True, use_transport_cost=False, use_supervised=False),
            "gan_ot": dict(conditional=True, use_supervised=False),
            "supervised": dict(use_gan=False, use_transport_cost=False, lambda_gp=0.0),
        }
        if kind not in presets:
            raise ContractError(f"unknown method {kind!r}")
        return cls(**{**overrides, **presets[kind]})


# ---------------------------------------------------------------- layers

class Linear:
    """Affine layer; an optional condition block adds ``c @ Wc`` to the output."""

    def __init__(self, n_in, n_out, rng, n_cond=0):
        bound = 1.0 / np.sqrt(n_in + n_cond)
        self.W = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, size=n_out), requires_grad=True)
        self.Wc = (Tensor(rng.uniform(-bound, bound, size=(n_cond, n_out)), requires_grad=True)
                   if n_cond else None)

    def params(self):
        return [self.W, self.b] + ([self.Wc] if self.Wc is not None else [])

    def __call__(self, x, cond=None):
        out = core.affine(x, self.W, self.b)
        if self.Wc is not None:
            if cond is None:
                raise ContractError("conditional layer called without a condition")
            out = core.add(out, core.matmul(Tensor(cond), self.Wc))
        return out


class BatchNorm:
    def __init__(self, n, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(n), requires_grad=True)
        self.beta = Tensor(np.zeros(n), requires_grad=True)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return [self.gamma, self.beta]

    def __call__(self, x, training=True, update_stats=True):
        if training and update_stats:
            return core.batchnorm(x, self.gamma, self.beta, self.eps, True,
                                  self.running_mean, self.running_var, self.momentum)
        if training:
            return core.batchnorm(x, self.gamma, self.beta, self.eps, True)
        return core.batchnorm(x, self.gamma, self.beta, self.eps, False,
                              self.running_mean, self.running_var)


class Network:
    def params(self):
        raise NotImplementedError

    def buffers(self):
        return []

    def get_state(self):
        return [p.data.copy() for p in self.params()] + [b.copy() for b in self.buffers()]

    def set_state(self, arrays):
        ps, bs = self.params(), self.buffers()
        if len(arrays) != len(ps) + len(bs):
            raise ContractError("state does not match network layout")
        for p, a in zip(ps, arrays[:len(ps)]):
            if p.data.shape != a.shape:
                raise ContractError(f"parameter shape {p.data.shape} vs stored {a.shape}")
            p.data = np.array(a, dtype=np.float64)
        for b, a in zip(bs, arrays[len(ps):]):
            b[...] = a


class TransportNet(Network):
    """Four affine layers, ReLU between: dim -> h -> h -> h -> dim."""

    def __init__(self, dim, hidden, rng, n_cond=0):
        self.dim, self.hidden, self.n_cond = dim, hidden, n_cond
        self.layers = [Linear(dim, hidden, rng, n_cond), Linear(hidden, hidden, rng),
                       Linear(hidden, hidden, rng), Linear(hidden, dim, rng)]

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def __call__(self, x, cond=None):
        h = self.layers[0](x, cond)
        for layer in self.layers[1:]:
            h = layer(core.relu(h))
        return h


class DiscriminatorNet(Network):
    """Four affine layers with batch norm + ReLU between, sigmoid output."""

    def __init__(self, dim, hidden, rng, n_cond=0, bn_momentum=0.1, bn_eps=1e-5):
        self.dim, self.hidden, self.n_cond = dim, hidden, n_cond
        self.layers = [Linear(dim, hidden, rng, n_cond), Linear(hidden, hidden, rng),
                       Linear(hidden, hidden, rng), Linear(hidden, 1, rng)]
        self.norms = [BatchNorm(hidden, bn_momentum, bn_eps) for _ in range(3)]

    def params(self):
        return [p for layer in self.layers for p in layer.params()] + \
               [p for bn in self.norms for p in bn.params()]

    def buffers(self):
        return [a for bn in self.norms for a in (bn.running_mean, bn.running_var)]

    def __call__(self, x, cond=None, training=True, update_stats=True):
        h = self.layers[0](x, cond)
        for bn, layer in zip(self.norms, self.layers[1:]):
            h = layer(core.relu(bn(h, training, update_stats)))
        return core.reshape(core.sigmoid(h), (-1,))


# ---------------------------------------------------------------- losses

def loss_trans(x, tx):
    """Mean Euclidean (not squared) distance between each cell and its image."""
    x, tx = core.as_tensor(x), core.as_tensor(tx)
    if x.shape != tx.shape:
        raise ContractError(f"loss_trans: shapes {x.shape} and {tx.shape} differ")
    return core.mean(core.row_norm(core.sub(tx, x)))


def loss_gan(d_real, d_fake, prob_eps=1e-7):
    """Return ``(disc_loss, gen_loss)``; the generator uses the non-saturating form."""
    lo, hi = prob_eps, 1.0 - prob_eps
    d_real = core.clamp(core.as_tensor(d_real), lo, hi)
    d_fake = core.clamp(core.as_tensor(d_fake), lo, hi)
    disc = core.neg(core.add(core.mean(core.log(d_real)),
                             core.mean(core.log(core.sub(1.0, d_fake)))))
    gen = core.neg(core.mean(core.log(d_fake)))
    return disc, gen


def loss_super(t_x, partners):
    """Mean squared Euclidean distance between transported cells and their partners."""
    t_x, partners = core.as_tensor(t_x), core.as_tensor(partners)
    if t_x.shape[0] == 0:
        raise ContractError("supervised loss needs at least one pair")
    if t_x.shape != partners.shape:
        raise ContractError(f"loss_super: shapes {t_x.shape} and {partners.shape} differ")
    diff = core.sub(t_x, partners)
    return core.mean(core.tsum(core.mul(diff, diff), axis=1))


def gradient_penalty(d, real, fake, rng, cond=None):
    """Mean of ``(||grad_x D(x_hat)|| - 1)^2`` at random real/fake interpolates.

    ``d`` is any callable mapping a batch tensor (and optional condition) to
    per-row probabilities. The input gradient is taken with
    ``create_graph=True``, so the penalty is differentiable with respect to
    the discriminator parameters.
    """
    real = np.asarray(getattr(real, "data", real))
    fake = np.asarray(getattr(fake, "data", fake))
    if real.shape != fake.shape:
        raise ContractError("gradient_penalty needs equal real and fake batch shapes")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    u = rng.uniform(size=(real.shape[0], 1))
    x_hat = Tensor(u * real + (1.0 - u) * fake, requires_grad=True)
    with core.set_grad_enabled(True):
        out = _call_disc(d, x_hat, cond)
        g = grad(core.tsum(out), x_hat, create_graph=True)
        return core.mean(core.square(core.sub(core.row_norm(g), 1.0)))


def _call_disc(d, x, cond):
    if isinstance(d, DiscriminatorNet):
        return d(x, cond, training=True, update_stats=False)
    return d(x) if cond is None else d(x, cond)


# ---------------------------------------------------------------- trained model

@dataclass
class TransportModel:
    net: TransportNet
    scale: float
    conditional: bool = False

    def transport(self, x, cond=None):
        """Map PCA-space cells forward. Conditional models default to a neutral condition."""
        x = np.asarray(x, dtype=np.float64)
        if self.conditional and cond is None:
            cond = np.tile(NEUTRAL_CONDITION, (x.shape[0], 1))
        with no_grad():
            out = self.net(Tensor(x / self.scale), cond if self.conditional else None)
        return out.data * self.scale


@dataclass
class History:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "l_trans", "l_gan_d", "l_gan_g", "l_super", "gp", "total")

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join(str(int(r["epoch"])) if c == "epoch" else repr(float(r[c]))
                                  for c in self.COLUMNS) + "\n")


def one_hot(codes, n=N_CLASSES):
    codes = np.asarray(codes, dtype=np.int64)
    if np.any((codes < 0) | (codes >= n)):
        raise ContractError("condition labels must be defined for every conditioned cell")
    out = np.zeros((len(codes), n))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def data_scale(*arrays):
    """RMS per-coordinate magnitude of the centred training data."""
    x = np.vstack([np.asarray(a, dtype=np.float64) for a in arrays])
    s = float(np.sqrt(((x - x.mean(axis=0)) ** 2).mean()))
    return s if s > 0 else 1.0


# ---------------------------------------------------------------- training

class Trainer:
    """Alternating discriminator / transport updates with full checkpointable state.

    Parameters
    ----------
    x2, x46 : arrays
        Training day-2 and day-4/6 cells in PCA space.
    pairs : (n, 2) int array
        Rows index ``x2`` and ``x46``.
    labels2, labels46 : int arrays, optional
        Fate codes, required when ``cfg.conditional``.
    """

    def __init__(self, x2, x46, pairs, cfg: TrainConfig, labels2=None, labels46=None, scale=None):
        self.cfg = cfg
        self.x2 = np.asarray(x2, dtype=np.float64)
        self.x46 = np.asarray(x46, dtype=np.float64)
        if self.x2.shape[1] != self.x46.shape[1]:
            raise ContractError("day-2 and day-4/6 cells must share the PCA dimension")
        self.pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self.scale = float(scale) if scale is not None else data_scale(self.x2, self.x46)
        self.z2 = self.x2 / self.scale
        self.z46 = self.x46 / self.scale
        n_cond = 0
        if cfg.conditional:
            if labels2 is None or labels46 is None:
                raise ContractError("conditional training needs fate labels for both timepoints")
            self.labels2 = np.asarray(labels2, dtype=np.int64)
            self.labels46 = np.asarray(labels46, dtype=np.int64)
            self.c2 = one_hot(self.labels2)
            self.by_class46 = [np.flatnonzero(self.labels46 == k) for k in range(N_CLASSES)]
            if any(len(ix) == 0 for ix in self.by_class46):
                raise ContractError("conditional training needs day-4/6 cells of both fates")
            n_cond = N_CLASSES
        self.supervised_on = cfg.use_supervised and cfg.lambda_super > 0 and len(self.pairs) > 0
        if cfg.use_supervised and cfg.lambda_super > 0 and not cfg.use_gan and not len(self.pairs):
            raise ContractError("supervised-only training needs at least one pair")

        ss = np.random.SeedSequence(cfg.seed)
        init_t, init_d, loop = [np.random.default_rng(s) for s in ss.spawn(3)]
        dim = self.x2.shape[1]
        self.T = TransportNet(dim, cfg.hidden, init_t, n_cond)
        self.D = DiscriminatorNet(dim, cfg.hidden, init_d, n_cond, cfg.bn_momentum, cfg.bn_eps)
        self.opt_t = Adam(self.T.params(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
        self.opt_d = Adam(self.D.params(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
        self.rng = loop
        self.epoch = 0
        self.history = History()
        self.converged = False
        self.checkpoint_extra = {}

    # -- one step ---------------------------------------------------------
    def _real_batch(self, src_idx):
        if self.cfg.conditional:
            out = np.empty(len(src_idx), dtype=np.int64)
            for k, pool in enumerate(self.by_class46):
                sel = self.labels2[src_idx] == k
                if sel.any():
                    out[sel] = self.rng.choice(pool, size=int(sel.sum()), replace=len(pool) < sel.sum())
            return out
        n = len(self.z46)
        return self.rng.choice(n, size=len(src_idx), replace=n < len(src_idx))

    def step(self, src_idx):
        cfg = self.cfg
        x = Tensor(self.z2[src_idx])
        c_src = self.c2[src_idx] if cfg.conditional else None
        rec = {"l_trans": 0.0, "l_gan_d": 0.0, "l_gan_g": 0.0, "l_super": 0.0, "gp": 0.0}

        if cfg.use_gan:
            real = self.z46[self._real_batch(src_idx)]
            with no_grad():
                fake = self.T(x, c_src).data
            d_real = self.D(Tensor(real), c_src)
            d_fake = self.D(Tensor(fake), c_src)
            disc, _ = loss_gan(d_real, d_fake, cfg.prob_eps)
            loss_d = disc
            rec["l_gan_d"] = disc.item()
            if cfg.lambda_gp > 0:
                gp = gradient_penalty(self.D, real, fake, self.rng, c_src)
                loss_d = core.add(loss_d, core.mul(gp, cfg.lambda_gp))
                rec["gp"] = gp.item()
            self.opt_d.step([g.data for g in grad(loss_d, self.D.params())])

        tx = self.T(x, c_src)
        terms = []
        if cfg.use_transport_cost and cfg.lambda_trans > 0:
            lt = loss_trans(x, tx)
            terms.append(core.mul(lt, cfg.lambda_trans))
            rec["l_trans"] = lt.item()
        if cfg.use_gan:
            d_fake = self.D(tx, c_src, training=True, update_stats=False)
            _, gen = loss_gan(Tensor(np.full(len(src_idx), 0.5)), d_fake, cfg.prob_eps)
            terms.append(gen)
            rec["l_gan_g"] = gen.item()
        if self.supervised_on:
            take = min(cfg.batch_size, len(self.pairs))
            pb = self.pairs[self.rng.choice(len(self.pairs), size=take, replace=False)]
            c_pair = self.c2[pb[:, 0]] if cfg.conditional else None
            ls = loss_super(self.T(Tensor(self.z2[pb[:, 0]]), c_pair), self.z46[pb[:, 1]])
            terms.append(core.mul(ls, cfg.lambda_super))
            rec["l_super"] = ls.item()
        if terms:
            total = terms[0]
            for t in terms[1:]:
                total = core.add(total, t)
            self.opt_t.step([g.data for g in grad(total, self.T.params())])
        rec["total"] = (self.weight("trans") * rec["l_trans"] + rec["l_gan_g"]
                        + self.weight("super") * rec["l_super"])
        return rec

    def weight(self, term):
        cfg = self.cfg
        if term == "trans":
            return cfg.lambda_trans if cfg.use_transport_cost else 0.0
        if term == "super":
            return cfg.lambda_super if self.supervised_on else 0.0
        raise KeyError(term)

    def batches(self):
        n = len(self.z2)
        perm = self.rng.permutation(n)
        bs = self.cfg.batch_size
        out = [perm[i:i + bs] for i in range(0, n, bs)]
        if len(out) > 1 and len(out[-1]) < 2:
            out[-2] = np.concatenate([out[-2], out[-1]])
            out.pop()
        return out

    def run_epoch(self):
        recs = [self.step(b) for b in self.batches()]
        self.epoch += 1
        row = {"epoch": self.epoch}
        for key in ("l_trans", "l_gan_d", "l_gan_g", "l_super", "gp", "total"):
            row[key] = float(np.mean([r[key] for r in recs]))
        self.history.rows.append(row)
        return row

    def _has_converged(self):
        w = self.cfg.converge_window
        tot = self.history.column("total") if self.history.rows else np.zeros(0)
        if w <= 0 or len(tot) < 2 * w:
            return False
        prev, last = tot[-2 * w:-w].mean(), tot[-w:].mean()
        return abs(last - prev) <= self.cfg.converge_tol * max(abs(prev), 1e-12)

    def fit(self, max_epochs=None, checkpoint_path=None, checkpoint_every=0, stop_after=None):
        """Train until ``max_epochs`` or convergence.

        ``stop_after`` halts after that many epochs in this call (used to
        simulate an interrupted run); the state can be resumed from the
        checkpoint.
        """
        limit = self.cfg.max_epochs if max_epochs is None else max_epochs
        done_here = 0
        while self.epoch < limit and not self.converged:
            # the history only grows, so its length is enough to roll it back
            snapshot = self.state_dict(with_history=False)
            n_rows = len(self.history.rows)
            try:
                self.run_epoch()
            except (NonFiniteError, DomainError) as exc:
                self.load_state_dict(snapshot)
                del self.history.rows[n_rows:]
                raise TrainingError(f"training diverged in epoch {self.epoch + 1}: {exc}",
                                    checkpoint=self.state_dict()) from exc
            done_here += 1
            self.converged = self._has_converged()
            if checkpoint_path and checkpoint_every and self.epoch % checkpoint_every == 0:
                save_checkpoint(self, checkpoint_path)
            if stop_after is not None and done_here >= stop_after:
                break
        if checkpoint_path:
            save_checkpoint(self, checkpoint_path)
        return self.model(), self.history

    def model(self) -> TransportModel:
        return TransportModel(self.T, self.scale, self.cfg.conditional)

    # -- state ------------------------------------------------------------
    def state_dict(self, with_history=True):
        return {
            "epoch": self.epoch,
            "converged": self.converged,
            "history": copy.deepcopy(self.history.rows) if with_history else None,
            "rng": copy.deepcopy(self.rng.bit_generator.state),
            "T": self.T.get_state(),
            "D": self.D.get_state(),
            "opt_t": _opt_state(self.opt_t),
            "opt_d": _opt_state(self.opt_d),
        }

    def load_state_dict(self, st):
        self.epoch = st["epoch"]
        self.converged = st["converged"]
        if st["history"] is not None:
            self.history = History(copy.deepcopy(st["history"]))
        self.rng.bit_generator.state = copy.deepcopy(st["rng"])
        self.T.set_state(st["T"])
        self.D.set_state(st["D"])
        _set_opt_state(self.opt_t, st["opt_t"])
        _set_opt_state(self.opt_d, st["opt_d"])


def _opt_state(opt):
    s = opt.state
    return {"t": s.t, "m": [a.copy() for a in s.m], "v": [a.copy() for a in s.v]}


def _set_opt_state(opt, st):
    opt.state.t = st["t"]
    opt.state.m = [np.array(a) for a in st["m"]]
    opt.state.v = [np.array(a) for a in st["v"]]


def train_super_ot(x2, x46, pairs, cfg: TrainConfig, labels2=None, labels46=None, **fit_kw):
    """Train a transport map with the full objective; returns ``(TransportModel, History)``."""
    trainer = Trainer(x2, x46, pairs, cfg, labels2, labels46)
    return trainer.fit(**fit_kw)


def train_baseline(kind, x2, x46, pairs=None, cfg: TrainConfig | None = None,
                   labels2=None, labels46=None, **fit_kw):
    """Train ``cgan``, ``gan_ot`` or ``supervised``; see the module docstring."""
    base = asdict(cfg) if cfg is not None else {}
    cfg = TrainConfig.for_baseline(kind, **base)
    if kind in ("cgan", "gan_ot") and (labels2 is None or labels46 is None):
        raise ContractError(f"{kind} needs fate labels for conditioning")
    if kind == "supervised" and (pairs is None or len(pairs) == 0):
        raise ContractError("the supervised baseline needs the full pair set")
    if pairs is None:
        pairs = np.zeros((0, 2), dtype=np.int64)
    trainer = Trainer(x2, x46, pairs, cfg, labels2, labels46)
    return trainer.fit(**fit_kw)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"SOTCKPT\x00"
CKPT_VERSION = 1


def _flatten_state(st):
    arrays, meta = [], {}
    for key in ("T", "D"):
        meta[key] = [list(a.shape) for a in st[key]]
        arrays.extend(st[key])
    for key in ("opt_t", "opt_d"):
        meta[key] = {"t": st[key]["t"], "m": [list(a.shape) for a in st[key]["m"]],
                     "v": [list(a.shape) for a in st[key]["v"]]}
        arrays.extend(st[key]["m"])
        arrays.extend(st[key]["v"])
    return arrays, meta


def save_checkpoint(trainer: Trainer, path, extra=None):
    st = trainer.state_dict()
    arrays, layout = _flatten_state(st)
    header = {
        "version": CKPT_VERSION,
        "cfg": asdict(trainer.cfg),
        "dim": trainer.x2.shape[1],
        "scale": trainer.scale,
        "epoch": st["epoch"],
        "converged": st["converged"],
        "history": st["history"],
        "rng": st["rng"],
        "layout": layout,
        "extra": extra if extra is not None else trainer.checkpoint_extra,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(CKPT_MAGIC + struct.pack("<BQ", CKPT_VERSION, len(hbytes)) + hbytes + blob)
    tmp.replace(path)


def read_checkpoint(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise ParseError(f"{path} is not a checkpoint file")
    off = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<BQ", raw, off)
    if version != CKPT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<BQ")
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    flat = np.frombuffer(raw, dtype="<f8", offset=off)
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape)) if shape else 1
        a = flat[pos:pos + n].reshape(shape).astype(np.float64)
        pos += n
        return a

    lay = header["layout"]
    st = {"epoch": header["epoch"], "converged": header["converged"],
          "history": header["history"], "rng": header["rng"]}
    for key in ("T", "D"):
        st[key] = [take(s) for s in lay[key]]
    for key in ("opt_t", "opt_d"):
        st[key] = {"t": lay[key]["t"], "m": [take(s) for s in lay[key]["m"]],
                   "v": [take(s) for s in lay[key]["v"]]}
    if pos != flat.size:
        raise ParseError("checkpoint payload size mismatch")
    return header, st


def resume_trainer(path, x2, x46, pairs, labels2=None, labels46=None) -> Trainer:
    header, st = read_checkpoint(path)
    cfg = TrainConfig(**header["cfg"])
    trainer = Trainer(x2, x46, pairs, cfg, labels2, labels46, scale=header["scale"])
    trainer.load_state_dict(st)
    return trainer


def load_model(path) -> TransportModel:
    header, st = read_checkpoint(path)
    cfg = TrainConfig(**header["cfg"])
    n_cond = N_CLASSES if cfg.conditional else 0
    net = TransportNet(header["dim"], cfg.hidden, np.random.default_rng(0), n_cond)
    net.set_state(st["T"])
    return TransportModel(net, header["scale"], cfg.conditional)
