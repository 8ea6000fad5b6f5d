"""Smoke test for the pydualreply bindings on a tiny synthetic run."""

import json
import math
import tempfile
from pathlib import Path

import pydualreply as dr

TINY = {
    "seed": 5,
    "corpus": {"synth": {"conversations": 60, "intents": 4, "noise_rate": 0.1}},
    "model": {
        "embedding": {"dim": 8, "buckets": 4096},
        "encoder": {"cell": "sru", "layers": 1, "input_dim": 8, "hidden_dim": 8, "heads": 2, "attention_dim": 4},
    },
    "training": {"batch_size": 8, "negatives": 8, "epochs": 1, "warmup_steps": 5, "validation_negatives": 5},
    "whitelist": {"frequency_sizes": [10], "clustering_sizes": [5]},
    "eval": {"recall_ns": [5]},
    "serve": {"whitelist": "frequency-10"},
}


def main() -> None:
    assert dr.auc([0.1, 0.9, 0.5], [False, True, False]) == 1.0
    assert dr.auc([0.5, 0.5], [True, False]) == 0.5
    assert dr.bleu(["a b c d"], ["a b c d"]) == 1.0
    assert math.isclose(dr.bleu(["a b c d e"], ["a b c d"]), math.exp(-0.25), rel_tol=1e-9)
    assert dr.derive_seed(0, "train") == dr.derive_seed(0, "train") != dr.derive_seed(1, "train")

    with tempfile.TemporaryDirectory() as tmp:
        config = Path(tmp) / "tiny.json"
        config.write_text(json.dumps(TINY))
        run = dr.Run(Path(tmp) / "run", config=str(config))
        run.synth_data()
        assert run.stats()["conversations"] == 60
        run.split()
        run.train()
        assert run.whitelist("frequency", 10) == "frequency-10"
        assert run.whitelist("clustering", 5) == "clustering-5"
        report = run.eval()
        assert 0.0 <= report["auc"]["auc"] <= 1.0

        s = run.suggester()
        resp = s.suggest([("customer", "hi, my bill is wrong")], top_k=3)
        scores = [x["score"] for x in resp["suggestions"]]
        assert len(scores) == min(3, len(s))
        assert scores == sorted(scores, reverse=True)
        assert s.health()["whitelist_size"] == len(s)

        try:
            s.suggest([], top_k=3)
        except ValueError:
            pass
        else:
            raise AssertionError("empty turns accepted")

    print("pydualreply smoke test passed")


if __name__ == "__main__":
    main()
