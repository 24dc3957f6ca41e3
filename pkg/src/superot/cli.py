"""Command-line interface: ``superot <command> [options]``.

Commands
--------
synth       write a synthetic dataset directory
preprocess  fit the preprocessor and classifier on one seed's training split
train       train super_ot, cgan, gan_ot or supervised
sinkhorn    entropic OT baseline with fate predictions in both label modes
eval        accuracy rows, DE report and 2-D embedding for trained artifacts
ablate      accuracy with and without the transport cost over pair counts and seeds

Every command writes a ``manifest.json`` into its output directory holding
the materialised config, seed, versions, input and output digests and the
wall-clock time. Exit codes: 0 success, 1 usage or schema error, 2 data
error, 3 numerical or training error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

ENV_OUT = "SUPEROT_OUT"
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TRAINED = ("super_ot", "cgan", "gan_ot", "supervised")
MANIFEST = "manifest.json"
PREP_FILE = "preprocessor.bin"

log = logging.getLogger("superot")


# ---------------------------------------------------------------- manifests

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, cfg, inputs, started, extra=None):
    """Record config, inputs and every file in ``out_dir`` (except the manifest)."""
    import numpy as np

    from . import __version__

    out_dir = Path(out_dir)
    outputs = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != MANIFEST)
    doc = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "versions": {"superot": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p.relative_to(out_dir)): sha256(p) for p in outputs},
        "wall_clock_s": round(time.time() - started, 3),
        "extra": extra or {},
    }
    (out_dir / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return doc


def read_manifest(out_dir) -> dict:
    from .errors import IntegrityError

    path = Path(out_dir) / MANIFEST
    if not path.exists():
        raise IntegrityError(f"{out_dir} has no {MANIFEST}")
    return json.loads(path.read_text(encoding="utf-8"))


def _out_dir(args, command) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(ENV_OUT, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- shared steps

def _data_digests(data_dir):
    from .data import dataset_paths

    return {p.name: sha256(p) for p in dataset_paths(data_dir)}


def _run_preprocess(cfg, data_dir, out_dir):
    """Fit preprocessor and classifier for ``cfg['seed']``; write them to ``out_dir``."""
    from .data import read_dataset
    from .experiment import prepare

    ds = read_dataset(data_dir)
    p = prepare(ds, cfg["seed"], cfg["preprocess"]["n_components"], cfg["data"]["fraction"],
                cfg["eval"]["l2"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p.pre.save(out_dir / PREP_FILE)
    sp = p.split
    split = {"day2_train": [ds.day2.cell_ids[i] for i in sp.day2_train],
             "day2_test": [ds.day2.cell_ids[i] for i in sp.day2_test],
             "day46_train": [ds.day46.cell_ids[i] for i in sp.day46_train],
             "day46_test": [ds.day46.cell_ids[i] for i in sp.day46_test]}
    (out_dir / "split.json").write_text(json.dumps(split, indent=1) + "\n", encoding="utf-8")
    clf = p.classifier
    (out_dir / "classifier.json").write_text(json.dumps({
        "weight": [float(w) for w in clf.weight], "bias": float(clf.bias), "l2": clf.l2,
        "iterations": int(clf.iterations), "converged": bool(clf.converged),
    }, indent=2) + "\n", encoding="utf-8")
    ev = p.pre.pca.explained_variance
    _write_rows(out_dir / "explained_variance.csv", ["component", "variance"],
                [[i, _fmt(v)] for i, v in enumerate(ev)])
    return p


def _prepared(args, cfg, out_dir):
    """Load (or create and record) the preprocessing for this seed.

    Returns ``(Prepared, info)`` where ``info`` goes into the manifest.
    """
    from .data import read_dataset
    from .errors import IntegrityError
    from .experiment import prepare
    from .preprocess import Preprocessor

    data_dir = Path(args.data)
    prep_dir = Path(args.prep) if args.prep else data_dir / "preprocess"
    digests = _data_digests(data_dir)
    if not (prep_dir / PREP_FILE).exists():
        if args.prep:
            raise IntegrityError(f"{prep_dir} holds no {PREP_FILE}")
        prep_dir = out_dir / "preprocess"
        started = time.time()
        _run_preprocess(cfg, data_dir, prep_dir)
        write_manifest(prep_dir, "preprocess", cfg, _dataset_inputs(data_dir), started,
                       {"data_digests": digests, "automatic": True})
        log.info("no preprocessing found; ran it into %s", prep_dir)
    man = read_manifest(prep_dir)
    if man["extra"].get("data_digests") != digests:
        raise IntegrityError(f"{prep_dir} was fit on different data files")
    if man["seed"] != cfg["seed"]:
        raise IntegrityError(f"{prep_dir} was fit for seed {man['seed']}, not {cfg['seed']}")
    for key in ("n_components",):
        if man["config"]["preprocess"][key] != cfg["preprocess"][key]:
            raise IntegrityError(f"{prep_dir} used preprocess.{key}="
                                 f"{man['config']['preprocess'][key]}")
    if man["config"]["data"]["fraction"] != cfg["data"]["fraction"]:
        raise IntegrityError(f"{prep_dir} used a different data.fraction")
    pre = Preprocessor.load(prep_dir / PREP_FILE)
    ds = read_dataset(data_dir)
    p = prepare(ds, cfg["seed"], cfg["preprocess"]["n_components"], cfg["data"]["fraction"],
                cfg["eval"]["l2"], pre=pre)
    info = {"preprocess_dir": str(prep_dir), "preprocessor_sha256": sha256(prep_dir / PREP_FILE),
            "data_digests": digests}
    return p, info


def _dataset_inputs(data_dir):
    from .data import dataset_paths

    return dataset_paths(data_dir)


def _default_pairs(method, p, cfg):
    from .experiment import pair_counts

    if method == "supervised":
        return p.n_eligible
    if method == "super_ot":
        return pair_counts(p.n_eligible, cfg["train"]["pair_fractions"])[-1]
    return 0


def _evaluable_ids(p):
    return [p.dataset.day2.cell_ids[i] for i in p.test_idx]


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    from .config import synth_config
    from .data import synth_branching, write_dataset

    started = time.time()
    out = _out_dir(args, "synth")
    ds = synth_branching(synth_config(cfg))
    write_dataset(ds, out, cfg["data"]["format"])
    write_manifest(out, "synth", cfg, [], started,
                   {"n_day2": ds.day2.n_cells, "n_day46": ds.day46.n_cells,
                    "n_genes": len(ds.day2.gene_ids), "n_planted": len(ds.planted_de_genes)})
    print(f"wrote synthetic dataset to {out}")
    return EXIT_OK


def cmd_preprocess(args, cfg):
    started = time.time()
    out = _out_dir(args, "preprocess")
    p = _run_preprocess(cfg, args.data, out)
    write_manifest(out, "preprocess", cfg, _dataset_inputs(args.data), started,
                   {"data_digests": _data_digests(args.data), "n_eligible": p.n_eligible,
                    "n_evaluable_test": len(p.test_idx)})
    print(f"preprocessed {args.data} into {out}")
    return EXIT_OK


def cmd_train(args, cfg):
    from .config import train_config
    from .errors import IntegrityError
    from .experiment import build_trainer, score_model
    from .nets import read_checkpoint

    started = time.time()
    out = _out_dir(args, f"train_{args.method}")
    p, info = _prepared(args, cfg, out)
    n_pairs = _default_pairs(args.method, p, cfg) if args.pairs is None else args.pairs
    trainer = build_trainer(p, args.method, n_pairs, train_config(cfg, n_pairs=n_pairs))
    ckpt = out / "model.ckpt"
    extra = {"method": args.method, "n_pairs": int(n_pairs), "seed": cfg["seed"], **info}
    if args.resume and ckpt.exists():
        header, state = read_checkpoint(ckpt)
        if header["extra"].get("preprocessor_sha256") != info["preprocessor_sha256"]:
            raise IntegrityError("checkpoint was trained on a different preprocessing")
        if header["cfg"] != {**trainer.cfg.__dict__}:
            raise IntegrityError("checkpoint was trained with a different config")
        trainer.load_state_dict(state)
        log.info("resumed %s at epoch %d", ckpt, trainer.epoch)
    # the checkpoint names its preprocessing by digest only, so it does not depend on paths
    trainer.checkpoint_extra = {k: v for k, v in extra.items() if k != "preprocess_dir"}
    model, hist = trainer.fit(checkpoint_path=ckpt, checkpoint_every=cfg["train"]["checkpoint_every"],
                              stop_after=args.stop_after)
    hist.to_csv(out / "history.csv")
    acc = score_model(p, model)
    (out / "score.json").write_text(json.dumps({
        "method": args.method, "n_pairs": int(n_pairs), "seed": cfg["seed"], "accuracy": acc,
        "epochs": trainer.epoch, "converged": bool(trainer.converged)}, indent=2) + "\n",
        encoding="utf-8")
    write_manifest(out, "train", cfg, _dataset_inputs(args.data), started, extra)
    print(f"{args.method}: {trainer.epoch} epochs, test accuracy {acc:.4f}")
    return EXIT_OK


def cmd_sinkhorn(args, cfg):
    import numpy as np

    from .data import FATE_NAMES, UNLABELED
    from .errors import SolverError
    from .sinkhorn import cost_matrix, coupling_fate_prediction, default_epsilon, export_coupling
    from .sinkhorn import sinkhorn_solve

    started = time.time()
    out = _out_dir(args, "sinkhorn")
    p, info = _prepared(args, cfg, out)
    sc = cfg["sinkhorn"]
    c = cost_matrix(p.z2, p.z46, sc["cost"])
    eps = sc["epsilon"] if sc["epsilon"] is not None else default_epsilon(c, sc["epsilon_factor"])
    try:
        coupling = sinkhorn_solve(c, epsilon=eps, tol=sc["tol"], max_iter=sc["max_iter"])
    except SolverError as exc:
        raise SolverError(f"{exc}; try a larger sinkhorn.epsilon (was {eps:.4g})") from exc
    if not coupling.converged:
        raise SolverError(f"no convergence in {sc['max_iter']} iterations (marginal error "
                          f"{coupling.marginal_error:.3g}); try a larger sinkhorn.epsilon "
                          f"(was {eps:.4g}) or a larger sinkhorn.max_iter")
    ds = p.dataset
    export_coupling(coupling, ds.day2.cell_ids, ds.day46.cell_ids, out / "coupling.csv",
                    out / "coupling_summary.json", sc["mass_floor"])
    modes = {}
    if not np.any(p.labels46 == UNLABELED):
        modes["real_labels"] = coupling_fate_prediction(coupling, p.labels46, "real_labels")
    else:
        log.warning("some day-4/6 cells are unlabelled; real_labels mode skipped")
    modes["predicted_labels"] = coupling_fate_prediction(coupling, p.labels46, "predicted_labels",
                                                         p.classifier, p.z46)
    names = list(modes)
    _write_rows(out / "predictions.csv", ["cell_id"] + names,
                [[cid] + [FATE_NAMES[modes[m][i]] for m in names]
                 for i, cid in enumerate(ds.day2.cell_ids)])
    acc = {m: float((modes[m][p.test_idx] == p.test_labels).mean()) for m in names}
    (out / "score.json").write_text(json.dumps({"epsilon": eps, "accuracy": acc,
                                                "seed": cfg["seed"]}, indent=2) + "\n",
                                    encoding="utf-8")
    write_manifest(out, "sinkhorn", cfg, _dataset_inputs(args.data), started,
                   {**info, "epsilon": eps, "converged": coupling.converged})
    print("sinkhorn accuracy: " + ", ".join(f"{m} {a:.4f}" for m, a in acc.items()))
    return EXIT_OK


def _load_artifact(spec, p, info):
    """``identity``, ``oracle``, a checkpoint file or a sinkhorn output directory."""
    from .errors import IntegrityError
    from .nets import load_model, read_checkpoint

    if spec in ("identity", "oracle"):
        return {"kind": spec, "method": spec, "n_pairs": 0}
    path = Path(spec)
    if path.is_dir():
        man = read_manifest(path)
        if man["command"] != "sinkhorn":
            raise IntegrityError(f"{path} is not a sinkhorn output directory")
        if man["extra"].get("preprocessor_sha256") != info["preprocessor_sha256"]:
            raise IntegrityError(f"{path} was computed on a different preprocessing")
        return {"kind": "coupling", "method": "wot", "n_pairs": 0, "path": path}
    header, _ = read_checkpoint(path)
    extra = header["extra"]
    if extra.get("preprocessor_sha256") != info["preprocessor_sha256"]:
        raise IntegrityError(f"{path} was trained on a different PCA model")
    return {"kind": "model", "method": extra["method"], "n_pairs": extra["n_pairs"],
            "model": load_model(path)}


def cmd_eval(args, cfg):
    import numpy as np

    from .data import FATE_NAMES, MONOCYTE, NEUTROPHIL
    from .evalstats import de_analysis, export_embedding_2d, planted_recall, write_de_report
    from .experiment import real_fate_sets, score_model, transported_fate_sets

    started = time.time()
    out = _out_dir(args, "eval")
    p, info = _prepared(args, cfg, out)
    arts = [_load_artifact(a, p, info) for a in args.artifacts]
    rows, runs = [], []
    for art in arts:
        if art["kind"] == "coupling":
            with open(art["path"] / "predictions.csv", newline="", encoding="utf-8") as fh:
                pred = {r["cell_id"]: r for r in csv.DictReader(fh)}
            mode = "real_labels" if "real_labels" in next(iter(pred.values())) else "predicted_labels"
            guess = np.array([FATE_NAMES.index(pred[c][mode]) for c in _evaluable_ids(p)])
            acc = float((guess == p.test_labels).mean())
        elif art["kind"] == "oracle":
            acc = None
        else:
            acc = score_model(p, art.get("model"))
        if acc is not None:
            rows.append([art["method"], art["n_pairs"], cfg["seed"], _fmt(acc)])
        if art["kind"] == "model":
            runs.append(transported_fate_sets(p, art["model"]))
        elif art["kind"] == "oracle":
            lab46 = p.labels46
            runs.append((p.z46[lab46 == MONOCYTE], p.z46[lab46 == NEUTROPHIL], p.pre.pca))
    _write_rows(out / "accuracy.csv", ["method", "n_pairs", "seed", "accuracy"], rows)
    extra = {**info, "artifacts": list(args.artifacts)}
    if runs:
        real_mono, real_neu = real_fate_sets(p)
        ev = cfg["eval"]
        rep = de_analysis(runs, p.pre.pca, real_mono, real_neu, ev["p_threshold"], ev["welch"])
        genes = p.dataset.day2.gene_ids
        planted = None
        if p.dataset.planted_de_genes:
            planted = [genes.index(g) for g in p.dataset.planted_de_genes]
        write_de_report(rep, genes, out / "de", planted)
        extra["de"] = rep.summary(planted)
        if planted:
            extra["de"]["planted_recall"] = planted_recall(rep, planted)
    if cfg["eval"]["embedding"]:
        sets = {"day2": p.z2[p.test_idx],
                "day46_mono": p.z46[p.labels46 == MONOCYTE],
                "day46_neu": p.z46[p.labels46 == NEUTROPHIL]}
        for i, art in enumerate(arts):
            if art["kind"] == "model":
                sets[f"{art['method']}_{i}"] = art["model"].transport(p.z2[p.test_idx])
        export_embedding_2d(sets, out / "embedding.csv", out / "embedding.svg")
    write_manifest(out, "eval", cfg, _dataset_inputs(args.data), started, extra)
    for r in rows:
        print(",".join(str(v) for v in r))
    return EXIT_OK


def cmd_ablate(args, cfg):
    from dataclasses import replace

    import numpy as np

    from .config import train_config
    from .data import read_dataset
    from .experiment import pair_counts, prepare, run_one

    started = time.time()
    out = _out_dir(args, "ablate")
    ds = read_dataset(args.data)
    seeds = cfg["eval"]["seeds"]
    preps = [prepare(ds, s, cfg["preprocess"]["n_components"], cfg["data"]["fraction"],
                     cfg["eval"]["l2"]) for s in seeds]
    counts = pair_counts(min(p.n_eligible for p in preps), cfg["train"]["pair_fractions"])
    per_seed = []
    for p, seed in zip(preps, seeds):
        base = train_config(cfg, seed=seed)
        for n in counts:
            for tc in (True, False):
                acc = run_one(p, "super_ot", n, replace(base, use_transport_cost=tc))
                per_seed.append([n, str(tc).lower(), seed, acc])
                log.info("pairs %d transport_cost %s seed %d: %.4f", n, tc, seed, acc)
    _write_rows(out / "ablation_runs.csv", ["n_pairs", "use_transport_cost", "seed", "accuracy"],
                [[n, tc, s, _fmt(a)] for n, tc, s, a in per_seed])
    means = []
    for n in counts:
        for tc in ("true", "false"):
            accs = [a for m, t, _, a in per_seed if m == n and t == tc]
            means.append([n, tc, len(accs), _fmt(np.mean(accs))])
    _write_rows(out / "ablation.csv", ["n_pairs", "use_transport_cost", "n_seeds",
                                       "mean_accuracy"], means)
    write_manifest(out, "ablate", cfg, _dataset_inputs(args.data), started,
                   {"pair_counts": counts, "seeds": seeds})
    for r in means:
        print(",".join(str(v) for v in r))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
            "sinkhorn": cmd_sinkhorn, "eval": cmd_eval, "ablate": cmd_ablate}


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--preset", help="named preset applied before the config file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<command>)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, help="dataset directory")
    data.add_argument("--prep", help="preprocess output directory (default <data>/preprocess)")

    parser = argparse.ArgumentParser(prog="superot", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    pp = sub.add_parser("preprocess", parents=[common], help="fit preprocessing for one seed")
    pp.add_argument("--data", required=True, help="dataset directory")
    tr = sub.add_parser("train", parents=[common, data], help="train one method")
    tr.add_argument("method", choices=TRAINED)
    tr.add_argument("--pairs", type=int, help="number of supervised pairs")
    tr.add_argument("--resume", action="store_true", help="continue from <out>/model.ckpt")
    tr.add_argument("--stop-after", type=int, help="stop after this many epochs (for testing)")
    sub.add_parser("sinkhorn", parents=[common, data], help="entropic OT baseline")
    ev = sub.add_parser("eval", parents=[common, data], help="score trained artifacts")
    ev.add_argument("artifacts", nargs="+",
                    help="checkpoint files, sinkhorn output dirs, 'identity' or 'oracle'")
    sub.add_parser("ablate", parents=[common, data], help="transport-cost ablation grid")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    for var in THREAD_VARS:
        os.environ.setdefault(var, str(args.threads))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from .config import load_config
    from .errors import SuperOTError

    try:
        cfg = load_config(args.config, args.preset, args.overrides, args.seed)
        return COMMANDS[args.command](args, cfg)
    except SuperOTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
