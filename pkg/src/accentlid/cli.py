"""Command-line entry point: one subcommand per pipeline stage.

Any option can also come from a JSON ``--config`` file whose keys are the
option names with dashes replaced by underscores; flags win over the file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np
from scipy.special import logsumexp

from . import convnet
from .backend import Backend, fit_backend
from .corpus import (FormatError, LabelSet, ScoreVector, atomic_write_text,
                     load_dataset, load_embeddings, load_scores, require_labels, save_dataset,
                     save_embeddings, save_scores)
from .evalsim import (AccentNoiseConfig, NBBackendRoute, NBRoute, SimulatedAcousticRoute,
                      degradation_experiment, evaluate, relative_error_reduction,
                      simulate_accent, unigram_distribution)
from .fusion import FusionConfig, fuse_systems, log_prob_features
from .ngram_nb import NGramFeatureConfig, NGramProfile, score_utterances, train_nb
from .synth import load_bundled

log = logging.getLogger("accentlid")


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _names(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _labels(args, data=None) -> LabelSet:
    if getattr(args, "labels", None):
        return LabelSet.load(args.labels)
    if data is None:
        raise ValueError("--labels is required here")
    return LabelSet.from_utterances(data)


def _manifest(path) -> list:
    return load_bundled(path[len("bundled:"):]) if str(path).startswith("bundled:") else load_dataset(path)


def _load_features(path, labels: LabelSet | None):
    """Embedding file, or a log-posterior score file used as log-prob features."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("#space"):
        scores, labels = load_scores(path, labels)
        return [log_prob_features(s) for s in scores]
    return load_embeddings(path)


# -- subcommands ------------------------------------------------------------

def cmd_train_nb(args):
    data = _manifest(args.manifest)
    cfg = NGramFeatureConfig(n=args.order, lowercase=not args.keep_case)
    labels = _labels(args, data)
    profile = train_nb(data, args.asr, cfg, args.alpha, args.priors, labels=labels)
    profile.save(args.out)
    log.info("NB profile: %d languages, %d n-grams -> %s", len(labels), len(profile.vocab), args.out)


def cmd_score(args):
    if args.backend:
        return cmd_backend_score(args)
    if not (args.profile and args.asr and args.manifest):
        raise ValueError("score needs --profile, --asr and --manifest (or --backend and --features)")
    profile = NGramProfile.load(args.profile)
    data = _manifest(args.manifest)
    scores = score_utterances(profile, data, args.asr)
    save_scores(args.out, scores, profile.labels)


def cmd_fuse(args):
    labels = LabelSet.load(args.labels) if args.labels else None
    systems = []
    for path in args.inputs:
        scores, labels = load_scores(path, labels)
        systems.append(scores)
    weights = _floats(args.weights) if args.weights else [1.0 / len(systems)] * len(systems)
    cfg = FusionConfig(tuple(weights), domain=args.domain)
    save_scores(args.out, fuse_systems(systems, cfg), labels)


def cmd_backend_fit(args):
    data = _manifest(args.manifest)
    require_labels(data)
    labels = _labels(args, data)
    feats = _load_features(args.features, labels)
    by_id = {u.id: u for u in data}
    missing = [e.utterance_id for e in feats if e.utterance_id not in by_id]
    if missing:
        raise ValueError(f"features for utterance {missing[0]!r} not in manifest")
    X = np.array([e.values for e in feats])
    backend = fit_backend(X, [by_id[e.utterance_id].label for e in feats], labels, args.lda_dim)
    backend.save(args.out)
    log.info("backend: LDA %d -> %d, PLDA EM %d iterations -> %s",
             X.shape[1], backend.lda.d, backend.plda.n_iter, args.out)


def cmd_backend_score(args):
    backend = Backend.load(args.backend)
    feats = _load_features(args.features, backend.labels)
    ll = backend.score(np.array([e.values for e in feats]))
    if args.space == "log_posterior":
        scores = [ScoreVector(e.utterance_id, r - logsumexp(r), "log_posterior") for e, r in zip(feats, ll)]
    else:
        scores = [ScoreVector(e.utterance_id, r, "log_likelihood") for e, r in zip(feats, ll)]
    save_scores(args.out, scores, backend.labels)


def cmd_convnet_train(args):
    data = _manifest(args.manifest)
    labels = _labels(args, data)
    spec = convnet.ConvNetSpec.from_data(
        data, _names(args.branches), labels, embed_dim=args.embed_dim,
        conv_kernels=tuple(_ints(args.kernels)), channels=args.channels, fc1_dim=args.fc1_dim)
    params = convnet.train(spec, data, lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed)
    convnet.save_checkpoint(args.out, params, spec)
    if args.embeddings_out:
        save_embeddings(args.embeddings_out, convnet.extract_embeddings(params, spec, data))
    log.info("convnet: final loss %.4f -> %s", params.loss_trace[-1], args.out)


def cmd_convnet_embed(args):
    params, spec = convnet.load_checkpoint(args.checkpoint)
    data = _manifest(args.manifest)
    save_embeddings(args.out, convnet.extract_embeddings(params, spec, data))


def _read_predictions(path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise FormatError(f"{path}: line {lineno}: expected 'id<TAB>code'")
            out.append((cols[0], cols[1]))
    return out


def cmd_eval(args):
    if args.rer:
        base, improved = args.rer
        print(f"relative error reduction {relative_error_reduction(base, improved):.4f}")
        if not args.manifest:
            return
    if not args.manifest or not (args.scores or args.predictions):
        raise ValueError("eval needs --manifest and one of --scores / --predictions")
    truth = _manifest(args.manifest)
    labels = _labels(args, truth)
    if args.scores:
        scores, labels = load_scores(args.scores, labels)
        preds = [(s.utterance_id, labels.codes[s.argmax()]) for s in scores]
    else:
        preds = _read_predictions(args.predictions)
    report = evaluate(preds, truth, labels)
    text = report.to_text()
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.json_out:
        atomic_write_text(args.json_out, report.to_json())
    if args.csv_out:
        atomic_write_text(args.csv_out, report.groups_csv())


def cmd_simulate(args):
    data = _manifest(args.manifest)
    source = None
    if args.confusion_manifest:
        ref = _manifest(args.confusion_manifest)
        if args.confusion_lang:
            ref = [u for u in ref if u.label == args.confusion_lang]
            if not ref:
                raise ValueError(f"no utterances labeled {args.confusion_lang!r} in confusion manifest")
        source = unigram_distribution([t for u in ref for t in u.transcripts.values()])
    cfg = AccentNoiseConfig(args.rho, args.sub_rate, args.del_rate, args.ins_rate, source, args.seed)
    noisy = [simulate_accent(u, cfg) for u in data]
    save_dataset(args.out, noisy)
    if args.acoustic_out:
        require_labels(noisy)
        labels = _labels(args, noisy)
        route = SimulatedAcousticRoute(args.acoustic_strength, args.acoustic_decay)
        save_scores(args.acoustic_out, route.score(noisy, labels, args.rho, args.seed), labels)
    if args.csv_out:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["id", "asr", "rho", "orig_len", "new_len", "unchanged"])
        for u, v in zip(data, noisy):
            for name in sorted(u.transcripts):
                wr.writerow([u.id, name, repr(args.rho), len(u.transcripts[name]),
                             len(v.transcripts[name]), int(u.transcripts[name] == v.transcripts[name])])
        atomic_write_text(args.csv_out, buf.getvalue())


def cmd_experiment(args):
    train = _manifest(args.train)
    test = _manifest(args.test)
    asr = _names(args.asr) if args.asr else sorted(train[0].transcripts)
    if args.route == "nb":
        pipeline = lambda: NBRoute(asr, args.alpha)  # noqa: E731
    else:
        pipeline = lambda: NBBackendRoute(asr, args.alpha)  # noqa: E731
    acoustic = None if args.no_acoustic else SimulatedAcousticRoute(args.acoustic_strength, args.acoustic_decay)
    weights = _floats(args.weights) if args.weights else [0.5, 0.5]
    noise = AccentNoiseConfig(0.0, args.sub_rate, args.del_rate, args.ins_rate)
    res = degradation_experiment(train, test, _floats(args.rho_grid), _ints(args.seeds), pipeline,
                                 noise, acoustic, FusionConfig(tuple(weights)))
    atomic_write_text(args.out, res.to_csv())
    for route in ("text", "acoustic", "fused"):
        summ = res.summary(route)
        if summ:
            cells = "  ".join(f"{rho:g}:{m:.3f}±{se:.3f}" for rho, (m, se) in sorted(summ.items()))
            log.info("%-8s %s", route, cells)


# -- parser -----------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    ap = argparse.ArgumentParser(prog="accentlid", description="Transcript-based language identification toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--config", help="JSON file of option defaults")
    sub = ap.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=fn)
        subs[name] = p
        return p

    p = add("train-nb", cmd_train_nb, "train a character n-gram NB profile")
    p.add_argument("--manifest", required=True)
    p.add_argument("--asr", required=True, help="ASR system whose transcripts are used")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.95)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--priors", choices=("uniform", "empirical"), default="uniform")
    p.add_argument("--keep-case", action="store_true")

    p = add("score", cmd_score, "NB scoring of a manifest (or PLDA scoring with --backend)")
    p.add_argument("--manifest")
    p.add_argument("--profile")
    p.add_argument("--asr")
    p.add_argument("--backend")
    p.add_argument("--features")
    p.add_argument("--space", choices=("log_likelihood", "log_posterior"), default="log_likelihood",
                   help="output space for backend scores")
    p.add_argument("--out", required=True)

    p = add("fuse", cmd_fuse, "linear interpolation of score files")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--weights", help="comma-separated, one per input; default uniform")
    p.add_argument("--domain", choices=("prob", "log"), default="prob")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)

    p = add("backend-fit", cmd_backend_fit, "fit LDA+PLDA on embeddings or log-prob features")
    p.add_argument("--manifest", required=True, help="provides the training labels")
    p.add_argument("--features", required=True, help="embedding file or log-posterior score file")
    p.add_argument("--labels")
    p.add_argument("--lda-dim", type=int, default=108)
    p.add_argument("--out", required=True)

    p = add("backend-score", cmd_backend_score, "PLDA scores for embeddings or log-prob features")
    p.add_argument("--backend", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--space", choices=("log_likelihood", "log_posterior"), default="log_likelihood")
    p.add_argument("--out", required=True)

    p = add("convnet-train", cmd_convnet_train, "train the character ConvNet")
    p.add_argument("--manifest", required=True)
    p.add_argument("--branches", required=True, help="comma-separated ASR system names")
    p.add_argument("--labels")
    p.add_argument("--embed-dim", type=int, default=20)
    p.add_argument("--kernels", default="3,1,3,1")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--fc1-dim", type=int)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings-out")

    p = add("convnet-embed", cmd_convnet_embed, "extract fc1 embeddings with a trained ConvNet")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "accuracy report, per-group breakdown, relative error reduction")
    p.add_argument("--manifest")
    p.add_argument("--scores")
    p.add_argument("--predictions", help="TSV of id<TAB>code")
    p.add_argument("--labels")
    p.add_argument("--rer", nargs=2, type=float, metavar=("BASELINE", "IMPROVED"))
    p.add_argument("--out")
    p.add_argument("--json-out")
    p.add_argument("--csv-out")

    p = add("simulate", cmd_simulate, "apply synthetic accent noise to a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--sub-rate", type=float, default=0.5)
    p.add_argument("--del-rate", type=float, default=0.1)
    p.add_argument("--ins-rate", type=float, default=0.1)
    p.add_argument("--confusion-manifest", help="manifest whose characters feed substitutions")
    p.add_argument("--confusion-lang", help="restrict the confusion manifest to one label")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv-out", help="per-utterance edit summary")
    p.add_argument("--acoustic-out", help="also write simulated acoustic-route scores")
    p.add_argument("--acoustic-strength", type=float, default=3.0)
    p.add_argument("--acoustic-decay", type=float, default=1.2)
    p.add_argument("--labels")

    p = add("experiment", cmd_experiment, "accent degradation experiment (CSV: rho,seed,route,accuracy)")
    p.add_argument("--train", default="bundled:train")
    p.add_argument("--test", default="bundled:test")
    p.add_argument("--asr", help="comma-separated ASR systems; default all in the training data")
    p.add_argument("--route", choices=("nb", "nb-plda"), default="nb")
    p.add_argument("--alpha", type=float, default=0.95)
    p.add_argument("--rho-grid", default="0,0.15,0.3,0.45,0.6")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--seed", type=int, help="shorthand for a single seed")
    p.add_argument("--sub-rate", type=float, default=0.5)
    p.add_argument("--del-rate", type=float, default=0.1)
    p.add_argument("--ins-rate", type=float, default=0.1)
    p.add_argument("--weights", help="acoustic,text fusion weights; default 0.5,0.5")
    p.add_argument("--acoustic-strength", type=float, default=3.0)
    p.add_argument("--acoustic-decay", type=float, default=1.2)
    p.add_argument("--no-acoustic", action="store_true")
    p.add_argument("--out", required=True)
    return ap, subs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    ap, subs = build_parser()
    if known.config:
        try:
            with open(known.config, encoding="utf-8") as fh:
                defaults = json.load(fh)
        except (OSError, ValueError) as e:
            print(f"accentlid: error: cannot read config: {e}", file=sys.stderr)
            return 2
        for p in subs.values():
            for action in p._actions:
                if action.dest in defaults:
                    action.required = False
            p.set_defaults(**defaults)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "seed", None) is not None and args.command == "experiment":
        args.seeds = str(args.seed)
    try:
        args.func(args)
    except (ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"accentlid {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
