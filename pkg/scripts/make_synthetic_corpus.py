"""Regenerate the bundled 3-language synthetic corpus under src/accentlid/data/."""
import argparse
from pathlib import Path

from accentlid.corpus import save_dataset
from accentlid.synth import SynthConfig, generate_corpus

DATA = Path(__file__).resolve().parents[1] / "src" / "accentlid" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-train", type=int, default=200, help="utterances per language")
    ap.add_argument("--n-test", type=int, default=100, help="utterances per language")
    ap.add_argument("--seed", type=int, default=SynthConfig.seed)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()

    train, test = generate_corpus(args.n_train, args.n_test, SynthConfig(seed=args.seed))
    save_dataset(args.out / "synth3_train.jsonl", train)
    save_dataset(args.out / "synth3_test.jsonl", test)
    print(f"wrote {len(train)} train / {len(test)} test utterances to {args.out}")


if __name__ == "__main__":
    main()
