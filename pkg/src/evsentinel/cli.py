"""Command-line entry point: gen, train, detect, eval, project.

Configuration resolution: package defaults, overridden by a flat JSON
config file (--config), overridden by explicit command-line flags.  The
fully resolved configuration is echoed into every output directory as
config.json together with its digest so any run can be reproduced
bit-for-bit.

Exit codes: 0 success, 2 configuration, 3 data, 4 I/O, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

from . import data as data_mod
from .detector import DetectorConfig, WindowScore, detect_stream, write_alerts_jsonl, write_scores_csv
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateInputError,
    DomainError,
    NumericError,
    ShapeError,
)
from .evaluation import evaluate_run, export_report, project_2d
from .model import encode_batch
from .numerics import SeededRng
from .training import Checkpoint, TrainConfig, train, write_epoch_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IO = 4
EXIT_NUMERIC = 5

DEFAULTS = {
    # generator
    "population": 200,
    "insider_fraction": 0.05,
    "intensity_scale": 1.0,
    "window_duration": 86400.0,
    # training (reference setup)
    "epochs": 200,
    "learning_rate": 0.001,
    "batch_size": 128,
    "dropout_p": 0.3,
    "n_clusters": 5,
    "hidden": 64,
    "t_len": 100,
    "input_dim": 12,
    "n_layers": 2,
    "lambda_max": 0.1,
    "anneal_epochs": 10,
    "warmup_epochs": 5,
    "refresh_period": 5,
    # detector thresholds
    "tau_u": 0.4,
    "tau_d": 1.5,
    "beta": 0.7,
    "drift_reference": "baseline",
    "order_policy": "reject",
    # evaluation
    "baseline_quantile": 0.95,
    # shared
    "seed": 0,
}


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags, in increasing precedence."""
    merged = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys in {config_path}: {sorted(unknown)}")
        merged.update(loaded)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def echo_config(config: dict, out_dir: Path) -> str:
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config)
    payload = dict(config)
    payload["config_digest"] = digest
    (out_dir / "config.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return digest


def _train_config(config: dict) -> TrainConfig:
    fields = ("epochs", "learning_rate", "batch_size", "dropout_p", "n_clusters",
              "hidden", "t_len", "input_dim", "n_layers", "lambda_max",
              "anneal_epochs", "warmup_epochs", "refresh_period", "seed")
    return TrainConfig(**{k: config[k] for k in fields})


def _detector_config(config: dict) -> DetectorConfig:
    return DetectorConfig(tau_u=config["tau_u"], tau_d=config["tau_d"],
                          beta=config["beta"],
                          drift_reference=config["drift_reference"],
                          order_policy=config["order_policy"])


# -- subcommands ---------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if not (0.0 <= config["insider_fraction"] <= 1.0):
        raise ConfigError(
            f"--insider-fraction must be in [0, 1], got {config['insider_fraction']}")
    out_dir = Path(args.out)
    corpus = data_mod.generate(
        population=int(config["population"]),
        insider_fraction=float(config["insider_fraction"]),
        rng=SeededRng(int(config["seed"])),
        t_len=int(config["t_len"]),
        window_duration=float(config["window_duration"]),
        intensity_scale=float(config["intensity_scale"]),
    )
    digest = data_mod.save_corpus(corpus, out_dir)
    echo_config(config, out_dir)
    n_insiders = sum(1 for s in corpus.sequences if s.label != "benign")
    print(f"gen: {len(corpus.sequences)} users ({n_insiders} insiders), "
          f"{len(corpus.records)} events, corpus digest {digest[:16]}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    corpus = data_mod.load_corpus(Path(args.corpus))
    # corpus geometry wins unless the caller explicitly pinned it
    if getattr(args, "t_len", None) is None:
        config["t_len"] = corpus.t_len
    if corpus.sequences and getattr(args, "input_dim", None) is None:
        config["input_dim"] = corpus.sequences[0].features.shape[1]
    out_dir = Path(args.out)
    tconf = _train_config(config)
    checkpoint, metrics = train(tconf, corpus)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = checkpoint.save(out_dir / "checkpoint.ckpt")
    write_epoch_log(metrics, out_dir / "epochs.csv")
    echo_config(config, out_dir)
    last = metrics[-1]
    print(f"train: {tconf.epochs} epochs, final total {last.total_loss:.4f} "
          f"(ce {last.ce_loss:.4f}, kl {last.kl_loss:.4f}), "
          f"pseudo-accuracy {last.pseudo_accuracy:.3f}, checkpoint digest {digest[:16]}")
    return EXIT_OK


def _load_detect_source(path: Path, checkpoint: Checkpoint):
    if path.is_dir():
        if (path / "sequences.bin").exists():
            return data_mod.load_corpus(path)
        records, malformed = data_mod.ingest_cert(path)
        if malformed:
            print(f"detect: skipped {malformed} malformed CERT rows", file=sys.stderr)
        return records
    if path.is_file():
        return data_mod.load_raw_log(path)
    raise FileNotFoundError(f"detect input not found: {path}")


def cmd_detect(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    checkpoint = Checkpoint.load(Path(args.checkpoint))
    source = _load_detect_source(Path(args.input), checkpoint)
    dconf = _detector_config(config)
    result = detect_stream(checkpoint, source, dconf)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scores_csv(result, out_dir / "scores.csv")
    write_alerts_jsonl(result.alerts, out_dir / "alerts.jsonl")
    echo_config(config, out_dir)
    print(f"detect: {result.windows_processed} windows, {len(result.alerts)} alerts, "
          f"mean u {result.mean_uncertainty:.4f}")
    return EXIT_OK


def read_scores_csv(path: Path) -> list[WindowScore]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(WindowScore(
                user=row["user"], window_end=float(row["window_end"]),
                u=float(row["u"]), d=float(row["d"]), s=float(row["s"]),
                alert=row["alert"] == "1", trigger=row["trigger"],
                cluster=int(row["cluster"])))
    return rows


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    checkpoint = Checkpoint.load(Path(args.checkpoint))
    corpus = data_mod.load_corpus(Path(args.corpus))
    window_scores = read_scores_csv(Path(args.scores))

    score_users = {w.user for w in window_scores}
    missing = sorted(u for u in corpus.users if u not in score_users)
    if missing:
        raise DataError(f"scores cover {len(score_users)} users but corpus has "
                        f"{len(corpus.users)}; missing {missing[:5]}")

    embeddings = _corpus_embeddings(checkpoint, corpus)
    report = evaluate_run(window_scores, corpus.sequences, embeddings,
                          n_clusters=checkpoint.config.n_clusters,
                          seed=int(config["seed"]),
                          config_digest=config_digest(config),
                          baseline_quantile=float(config["baseline_quantile"]))
    out_dir = Path(args.out)
    epoch_metrics = None
    payload = export_report(report, out_dir, epoch_metrics=epoch_metrics)
    if args.epochs_log:
        import shutil

        shutil.copyfile(args.epochs_log, out_dir / "epochs.csv")
    echo_config(config, out_dir)
    fpr = payload["fpr"]
    print(f"eval: auc {payload['auc']:.4f}, fpr {fpr if fpr is None else round(fpr, 4)}, "
          f"baseline fpr {payload['baseline_fpr']}, accuracy {payload['accuracy']}")
    return EXIT_OK


def _corpus_embeddings(checkpoint: Checkpoint, corpus) -> dict:
    import numpy as np

    seqs = corpus.sequences
    feats = np.stack([checkpoint.scaler.transform(s.features) for s in seqs])
    z = encode_batch(checkpoint.encoder, feats)
    return {s.user: z[i] for i, s in enumerate(seqs)}


def cmd_project(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    checkpoint = Checkpoint.load(Path(args.checkpoint))
    corpus = data_mod.load_corpus(Path(args.corpus))
    embeddings = _corpus_embeddings(checkpoint, corpus)
    users = sorted(embeddings)
    import numpy as np

    proj = project_2d(np.stack([embeddings[u] for u in users]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "projection.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "x", "y"])
        for user, (px, py) in zip(users, proj.coords):
            writer.writerow([user, repr(float(px)), repr(float(py))])
    echo_config(config, out_dir)
    print(f"project: {len(users)} users, explained variance "
          f"{proj.variances[0]:.4f} / {proj.variances[1]:.4f}")
    return EXIT_OK


# -- argument wiring --------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument("--config", type=str, default=None,
                        help="flat JSON config file; flags override it")
    parser.add_argument("--out", type=str, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsentinel",
        description="Evidential clustering insider-threat detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled synthetic corpus")
    _add_common(p)
    p.add_argument("--population", type=int, default=None, help="number of users")
    p.add_argument("--insider-fraction", dest="insider_fraction", type=float,
                   default=None, help="fraction of users that are insiders")
    p.add_argument("--t-len", dest="t_len", type=int, default=None,
                   help="windows per sequence")
    p.add_argument("--window-duration", dest="window_duration", type=float,
                   default=None, help="window length in seconds")
    p.add_argument("--intensity-scale", dest="intensity_scale", type=float,
                   default=None, help="attack intensity scale (1 = defaults)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train encoder and evidential head")
    _add_common(p)
    p.add_argument("--corpus", type=str, required=True, help="corpus directory")
    p.add_argument("--epochs", type=int, default=None, help="training epochs")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None,
                   help="Adam learning rate")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None,
                   help="mini-batch size")
    p.add_argument("--dropout-p", dest="dropout_p", type=float, default=None,
                   help="dropout probability")
    p.add_argument("--n-clusters", dest="n_clusters", type=int, default=None,
                   help="number of clusters K")
    p.add_argument("--hidden", type=int, default=None, help="GRU hidden size")
    p.add_argument("--t-len", dest="t_len", type=int, default=None,
                   help="sequence length (defaults to the corpus value)")
    p.add_argument("--lambda-max", dest="lambda_max", type=float, default=None,
                   help="final KL weight")
    p.add_argument("--anneal-epochs", dest="anneal_epochs", type=int, default=None,
                   help="epochs to ramp the KL weight")
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int, default=None,
                   help="reconstruction warm-up epochs")
    p.add_argument("--refresh-period", dest="refresh_period", type=int, default=None,
                   help="pseudo-label refresh period in epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="stream detection over a corpus or log")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True, help="trained checkpoint")
    p.add_argument("--input", type=str, required=True,
                   help="corpus directory, raw log CSV, or CERT directory")
    p.add_argument("--tau-u", dest="tau_u", type=float, default=None,
                   help="uncertainty threshold")
    p.add_argument("--tau-d", dest="tau_d", type=float, default=None,
                   help="drift threshold")
    p.add_argument("--beta", type=float, default=None, help="EWMA smoothing")
    p.add_argument("--drift-reference", dest="drift_reference", type=str, default=None,
                   choices=["baseline", "previous"],
                   help="drift reference vector")
    p.add_argument("--order-policy", dest="order_policy", type=str, default=None,
                   choices=["reject", "reorder"],
                   help="out-of-order record handling")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a detection run against ground truth")
    _add_common(p)
    p.add_argument("--scores", type=str, required=True, help="detector scores.csv")
    p.add_argument("--corpus", type=str, required=True,
                   help="corpus directory with labels.csv")
    p.add_argument("--checkpoint", type=str, required=True, help="trained checkpoint")
    p.add_argument("--epochs-log", dest="epochs_log", type=str, default=None,
                   help="epochs.csv from training to copy into the report")
    p.add_argument("--baseline-quantile", dest="baseline_quantile", type=float,
                   default=None, help="distance quantile for the k-means baseline")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="2-D latent projection of corpus embeddings")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True, help="trained checkpoint")
    p.add_argument("--corpus", type=str, required=True, help="corpus directory")
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DegenerateInputError) as exc:
        print(f"error (data): {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, ShapeError, DomainError) as exc:
        print(f"error (numeric): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
