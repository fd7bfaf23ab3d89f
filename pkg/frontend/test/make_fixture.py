"""Build the synthetic AL fixture the integration test runs against.

Usage: python3 make_fixture.py OUTDIR
Writes labeled/unlabeled/test JSONL pools and a trained model artifact.
"""

import sys
from pathlib import Path

repo_root = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(repo_root / "tests"))

from synthetic import SYNTH_HYPERPARAMS, SYNTH_TOKENIZER, al_pools, pooled_corpus

from sfw_guard.corpus import save_dataset
from sfw_guard.model import save_classifier, train


def main() -> int:
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = pooled_corpus(seed=0)
    d_l, d_u, _ = al_pools(train_set, 0.2)
    save_dataset(d_l, out / "labeled.jsonl")
    save_dataset(d_u, out / "unlabeled.jsonl")
    save_dataset(test_set, out / "test.jsonl")
    save_classifier(train(d_l, SYNTH_TOKENIZER, SYNTH_HYPERPARAMS), out / "model.json")
    print(f"fixture ready in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
