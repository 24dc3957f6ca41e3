"""The method-comparison runs shared by the ordering, ablation and DE acceptance checks.

One default synthetic dataset, three seeds. Each seed fixes the train/test
split, the pair draw and the network initialisation.
"""

import time
from dataclasses import replace

from superot.config import build_config, synth_config, train_config
from superot.data import synth_branching
from superot.experiment import pair_counts, prepare, score_model, train_method

SEEDS = (0, 1, 2)
ORDER = ("gan_ot", "small", "medium", "large", "supervised")


def table_runs(seeds=SEEDS, preset="fast", overrides=()):
    cfg = build_config(preset=preset, overrides=overrides)
    ds = synth_branching(synth_config(cfg))
    runs = []
    for seed in seeds:
        t0 = time.time()
        p = prepare(ds, seed, cfg["preprocess"]["n_components"], cfg["data"]["fraction"],
                    cfg["eval"]["l2"])
        small, medium, large = pair_counts(p.n_eligible, cfg["train"]["pair_fractions"])
        acc, models = {"identity": score_model(p, None)}, {}
        for name, method, n in [("gan_ot", "gan_ot", 0), ("small", "super_ot", small),
                                ("medium", "super_ot", medium), ("large", "super_ot", large),
                                ("supervised", "supervised", p.n_eligible)]:
            models[name], _ = train_method(p, method, n, train_config(cfg, seed, n))
            acc[name] = score_model(p, models[name])
        no_tc = replace(train_config(cfg, seed, large), use_transport_cost=False)
        acc["large_no_tc"] = score_model(p, train_method(p, "super_ot", large, no_tc)[0])
        runs.append({"seed": seed, "prepared": p, "accuracy": acc, "models": models,
                     "pairs": (small, medium, large), "seconds": time.time() - t0})
    return ds, runs


if __name__ == "__main__":
    import sys

    for seed in SEEDS:
        r = table_runs(seeds=(seed,), overrides=sys.argv[1:])[1][0]
        print(r["seed"], r["pairs"], {k: round(v, 3) for k, v in r["accuracy"].items()},
              round(r["seconds"], 1), flush=True)
