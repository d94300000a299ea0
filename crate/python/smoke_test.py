"""Quick end-to-end check of the anchorda_py extension on a tiny dataset."""

import tempfile
from pathlib import Path

import anchorda_py as ad

SMALL = """
models = ["nt", "lada"]
fractions = [0.0, 1.0]
seeds = [0]
alpha_grid = [0.5, 1.0]

[generator]
n_partners = 40
n_users = 400
train_day_impressions = 4000
eval_day_impressions = 4000
seed = 5

[train]
hidden_width = 8
latent_width = 6
epochs = 1
batch_size = 128
"""


def main():
    cfg = ad.ExperimentConfig(SMALL)
    prepared = ad.Prepared.generate(cfg)
    assert prepared.n_partners == 40
    assert 0.02 < prepared.positive_rate("train") < 0.1

    train = cfg.train_config("lada").with_alpha(0.9)
    base = ad.train_base("lada", prepared, train)
    assert base.kind == "lada" and base.fraction is None

    tune = prepared.fine_tune_data(1.0, 0)
    tuned = base.fine_tune(tune, 1.0)
    assert tuned.fraction == 1.0

    clone = ad.Checkpoint.from_bytes(tuned.to_bytes())
    rows = tune.features()[:5]
    assert clone.predict(rows) == tuned.predict(rows)
    assert all(0.0 < p < 1.0 for p in tuned.predict(rows, view="target"))

    cold = base.evaluate(prepared, fraction=0.0, k=5)
    assert 0.0 <= cold["macro_auc"] <= 1.0, cold

    assert ad.auc_roc([0.9, 0.1, 0.5], [True, False, False]) == 1.0
    assert ad.precision_at_k([0.9, 0.1], [False, True], 1) == 0.0
    assert ad.roc_points([0.2, 0.8], [False, True])[-1] == (1.0, 1.0)

    try:
        ad.train_base("cnn", prepared, train)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown kind accepted")

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "results"
        n_rows, failures = ad.run_journey(prepared, cfg, out)
        assert failures == [] and n_rows == 2 * 2 * 2 * 4
        gains = ad.write_report(out)
        assert any(model == "lada" for _, _, model, _ in gains)
    print("smoke test passed")


if __name__ == "__main__":
    main()
