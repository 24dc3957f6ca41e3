import csv
import json

import pytest

from superot.cli import main, sha256
from superot.config import PRESETS, build_config, load_config

SMALL = ["--set", "data.n_genes=40", "--set", "data.n_day2=120", "--set", "data.n_day46=300",
         "--set", "data.n_clones=30", "--set", "data.n_pca_informative=5",
         "--set", "preprocess.n_components=8", "--set", "train.max_epochs=3",
         "--set", "train.hidden=16"]


def _outputs(path):
    return json.loads((path / "manifest.json").read_text())["outputs"]


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data")] + SMALL) == 0
    return root / "data"


def test_synth_default_counts_and_digests(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--out", str(tmp_path / "b")]) == 0
    with open(tmp_path / "a" / "day2.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 401 and len(rows[0]) == 201
    with open(tmp_path / "a" / "day46.csv") as fh:
        assert sum(1 for _ in fh) == 2001
    assert len((tmp_path / "a" / "planted_de_genes.txt").read_text().split()) == 20
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")
    assert main(["synth", "--out", str(tmp_path / "c"), "--seed", "1"]) == 0
    assert _outputs(tmp_path / "a") != _outputs(tmp_path / "c")


def test_schema_errors_name_the_key(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--set", "data.n_day2=0"]) == 1
    assert "data.n_day2" in capsys.readouterr().err
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("train:\n  lamda_trans: 0.5\n")
    assert main(["synth", "--out", str(tmp_path), "--config", str(cfg)]) == 1
    assert "train.lamda_trans" in capsys.readouterr().err
    cfg.write_text("train: [unclosed\n")
    assert main(["synth", "--out", str(tmp_path), "--config", str(cfg)]) == 1
    assert main(["frobnicate"]) == 1


def test_config_layering(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("preset: fast\ntrain:\n  hidden: 32\nseed: 4\n")
    cfg = load_config(path, overrides=["train.hidden=64"])
    assert cfg["preset"] == "fast" and cfg["train"]["max_epochs"] == 300
    assert cfg["train"]["hidden"] == 64 and cfg["seed"] == 4
    assert load_config(path, seed=9)["seed"] == 9


def test_exponent_without_dot_is_a_number(tmp_path):
    assert build_config(overrides=["train.lr=1e-3"])["train"]["lr"] == 1e-3
    path = tmp_path / "c.yaml"
    path.write_text("train:\n  lr: 5e-4\n")
    assert load_config(path)["train"]["lr"] == 5e-4


def test_paper_preset_values():
    cfg = build_config(preset="paper")
    assert cfg["train"]["hidden"] == 1000 and cfg["preprocess"]["n_components"] == 100
    assert cfg["train"]["lambda_trans"] == 0.6 and cfg["train"]["lr"] == 1e-4
    assert set(PRESETS) >= {"desk", "fast", "paper"}


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("SUPEROT_OUT", str(tmp_path / "root"))
    assert main(["synth"] + SMALL) == 0
    assert (tmp_path / "root" / "synth" / "manifest.json").exists()


def test_data_errors_exit_2(tmp_path, small_data):
    assert main(["sinkhorn", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]
                + SMALL) == 2
    assert main(["train", "super_ot", "--data", str(small_data), "--out", str(tmp_path / "t"),
                 "--pairs", "100000"] + SMALL) == 2


def test_solver_failure_exit_3(tmp_path, small_data, capsys):
    rc = main(["sinkhorn", "--data", str(small_data), "--out", str(tmp_path / "s"),
               "--set", "sinkhorn.max_iter=1"] + SMALL)
    assert rc == 3 and "epsilon" in capsys.readouterr().err


def test_commands_are_deterministic(tmp_path, small_data):
    for run in ("r1", "r2"):
        out = tmp_path / run
        assert main(["preprocess", "--data", str(small_data), "--out", str(out / "prep")] + SMALL) == 0
        prep = ["--prep", str(out / "prep")]
        assert main(["train", "super_ot", "--data", str(small_data), "--out", str(out / "train")]
                    + prep + SMALL) == 0
        assert main(["sinkhorn", "--data", str(small_data), "--out", str(out / "sk")]
                    + prep + SMALL) == 0
        assert main(["eval", str(out / "train" / "model.ckpt"), str(out / "sk"), "identity",
                     "--data", str(small_data), "--out", str(out / "ev")] + prep + SMALL) == 0
    for sub in ("prep", "train", "sk", "ev"):
        assert _outputs(tmp_path / "r1" / sub) == _outputs(tmp_path / "r2" / sub)
    with open(tmp_path / "r1" / "ev" / "accuracy.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "n_pairs", "seed", "accuracy"]
    assert [r[0] for r in rows[1:]] == ["super_ot", "wot", "identity"]


def test_train_runs_preprocess_when_absent(tmp_path, small_data):
    out = tmp_path / "t"
    assert main(["train", "gan_ot", "--data", str(small_data), "--out", str(out)] + SMALL) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["extra"]["preprocess_dir"] == str(out / "preprocess")
    assert "preprocess/preprocessor.bin" in man["outputs"]


def test_resume_reproduces_uninterrupted_run(tmp_path, small_data):
    args = ["--data", str(small_data)] + SMALL + ["--set", "train.max_epochs=4",
                                                  "--set", "train.checkpoint_every=1"]
    assert main(["train", "super_ot", "--out", str(tmp_path / "full")] + args) == 0
    assert main(["train", "super_ot", "--out", str(tmp_path / "cut"), "--stop-after", "2"] + args) == 0
    assert main(["train", "super_ot", "--out", str(tmp_path / "cut"), "--resume"] + args) == 0
    for name in ("model.ckpt", "history.csv"):
        assert sha256(tmp_path / "full" / name) == sha256(tmp_path / "cut" / name)


def test_eval_refuses_other_preprocessing(tmp_path, small_data):
    assert main(["train", "super_ot", "--data", str(small_data), "--out", str(tmp_path / "t")]
                + SMALL) == 0
    rc = main(["eval", str(tmp_path / "t" / "model.ckpt"), "--data", str(small_data),
               "--out", str(tmp_path / "e"), "--seed", "1"] + SMALL)
    assert rc == 2


def test_sinkhorn_emits_both_modes(tmp_path, small_data):
    out = tmp_path / "s"
    assert main(["sinkhorn", "--data", str(small_data), "--out", str(out)] + SMALL) == 0
    with open(out / "predictions.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["cell_id", "real_labels", "predicted_labels"]
    with open(small_data / "day2.csv") as fh:
        ids = [r[0] for r in csv.reader(fh)][1:]
    assert [r[0] for r in rows[1:]] == ids
    summary = json.loads((out / "coupling_summary.json").read_text())
    assert summary["marginal_error"] <= 1e-8


def test_eval_oracle_de_is_perfect(tmp_path, small_data):
    full = SMALL + ["--set", "preprocess.n_components=40"]
    out = tmp_path / "e"
    assert main(["eval", "oracle", "--data", str(small_data), "--out", str(out)] + full) == 0
    de = json.loads((out / "manifest.json").read_text())["extra"]["de"]
    assert de["precision"] == 1.0 and de["recall"] == 1.0
    assert (out / "de" / "de_summary.json").exists() and (out / "embedding.svg").exists()


def test_ablate_row_count(tmp_path, small_data):
    out = tmp_path / "a"
    rc = main(["ablate", "--data", str(small_data), "--out", str(out), "--set", "eval.seeds=[0]",
               "--set", "train.pair_fractions=[0.2, 0.6]"] + SMALL)
    assert rc == 0
    with open(out / "ablation.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n_pairs", "use_transport_cost", "n_seeds", "mean_accuracy"]
    assert len(rows) == 1 + 2 * 2


def test_train_supervised_on_linear_data(tmp_path):
    from linear_data import linear_dataset
    from superot.data import write_dataset

    ds, k = linear_dataset()
    write_dataset(ds, tmp_path / "lin", "csv")
    rc = main(["train", "supervised", "--data", str(tmp_path / "lin"), "--out", str(tmp_path / "t"),
               "--set", f"preprocess.n_components={k}", "--set", "train.max_epochs=400",
               "--set", "train.lr=1e-3", "--set", "train.converge_window=0"])
    assert rc == 0
    with open(tmp_path / "t" / "history.csv") as fh:
        last = list(csv.DictReader(fh))[-1]
    assert float(last["l_super"]) <= 1e-3
