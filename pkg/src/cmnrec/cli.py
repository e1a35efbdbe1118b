"""Command-line entry point: ``cmnrec <subcommand> [flags]``.

Configuration precedence is built-in defaults < ``--config`` TOML file <
explicit flags.  Every subcommand except ``schedule`` writes its artifacts
plus a ``manifest.json`` into ``<out>/<timestamp>-seed<seed>/``.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .chunking import ChunkRule, ScheduleError, make_schedule

log = logging.getLogger("cmnrec")

DEFAULTS = {
    "seed": 0,
    "out": "runs",
    # data
    "L": 100,
    "l_min": 20,
    "min_count": 20,
    "ratios": [0.8, 0.02, 0.18],
    "items": 500,
    "sequences": 2000,
    "noise": 0.02,
    # model
    "T": None,
    "M": 4,
    "rule": "tsc",
    "variant": "cmnrec",
    "embed_dim": 128,
    "hidden_dim": 256,
    "slot_dim": 256,
    "attn_dim": 64,
    # training / evaluation
    "epochs": 20,
    "batch": 32,
    "lr": 1e-3,
    "patience": 5,
    "topn": 5,
    # bench
    "reps": 5,
    "bench_rules": ["tsc"],
    "scalarize": "sum",
}


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file of option defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="base directory for run artifacts")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--T", type=int, help="sequence length (default: from data)")
    p.add_argument("--M", type=int, help="memory slots / chunk count")
    p.add_argument("--rule", choices=[r.value for r in ChunkRule])
    p.add_argument("--variant", choices=["cmnrec", "srmn", "lstm"])
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--slot-dim", dest="slot_dim", type=int)
    p.add_argument("--attn-dim", dest="attn_dim", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmnrec", description="Chunk-accelerated memory network recommender")
    parser.add_argument("--version", action="version", version=f"cmnrec {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="print chunk time steps")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--rule", choices=[r.value for r in ChunkRule], default="tsc")

    p = sub.add_parser("preprocess", help="user,item,timestamp CSV -> padded sequence files")
    _common(p)
    p.add_argument("--events", required=True, help="CSV of user,item,timestamp")
    p.add_argument("--L", type=int)
    p.add_argument("--l-min", dest="l_min", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)

    p = sub.add_parser("synth", help="generate a seeded Markov-chain dataset")
    _common(p)
    p.add_argument("--items", type=int)
    p.add_argument("--sequences", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--noise", type=float)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _common(p)
    _model_flags(p)
    p.add_argument("--data", help="dataset directory with train.txt, valid.txt, meta.json")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--topn", type=int)

    p = sub.add_parser("eval", help="top-N metrics of a checkpoint on a sequence file")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="sequence file or dataset directory (uses test.txt)")
    p.add_argument("--topn", type=int)

    p = sub.add_parser("bench", help="epoch and inference timing: chunk rules vs every-step baseline")
    _common(p)
    _model_flags(p)
    p.add_argument("--data", help="dataset directory (default: synthetic)")
    p.add_argument("--items", type=int)
    p.add_argument("--sequences", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--with-lstm", action="store_true", help="also time the memory-free controller")

    p = sub.add_parser("analyze", help="position correlation profile and contribution norms")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="sequence file or dataset directory (uses test.txt)")
    p.add_argument("--scalarize", choices=["sum", "max"])
    p.add_argument("--max-sequences", dest="max_sequences", type=int, default=20)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, "rb") as fh:
                loaded = tomllib.load(fh)
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {path}") from None
        for key, value in loaded.items():
            if isinstance(value, dict):  # allow [model], [train] ... tables
                cfg.update(value)
            else:
                cfg[key] = value
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "verbose"):
            cfg[key] = value
    return cfg


def version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run_dir(cfg: dict) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(cfg["out"])
    path = base / f"{stamp}-seed{cfg['seed']}"
    n = 1
    while path.exists():
        n += 1
        path = base / f"{stamp}-seed{cfg['seed']}-{n}"
    path.mkdir(parents=True)
    return path


def write_manifest(path: Path, command: str, cfg: dict, **extra) -> None:
    manifest = {"command": command, "version": version_string(), "seed": cfg["seed"], "config": cfg}
    manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def _load_split(data: str, name: str):
    from .data import read_sequences

    p = Path(data)
    return read_sequences(p / f"{name}.txt" if p.is_dir() else p)


def _dataset_meta(data_dir: Path) -> dict:
    meta = data_dir / "meta.json"
    return json.loads(meta.read_text()) if meta.exists() else {}


def _write_dataset(out: Path, sequences, n_items: int, seq_len: int, ratios, seed: int) -> dict:
    from .data import split_dataset, write_sequences

    train, valid, test = split_dataset(sequences, ratios, seed)
    write_sequences(out / "all.txt", sequences)
    write_sequences(out / "train.txt", train)
    write_sequences(out / "valid.txt", valid)
    write_sequences(out / "test.txt", test)
    meta = {"n_items": n_items, "seq_len": seq_len, "counts": [len(train), len(valid), len(test)]}
    (out / "meta.json").write_text(json.dumps(meta))
    return meta


def _model_config(cfg: dict, n_items: int, seq_len: int):
    from .model import ModelConfig

    if cfg["variant"] != "lstm":  # fail early with the schedule's own message
        make_schedule(seq_len, cfg["M"], cfg["rule"] if cfg["variant"] != "srmn" else "every-step")
    return ModelConfig(
        n_items=n_items,
        seq_len=seq_len,
        embed_dim=cfg["embed_dim"],
        hidden_dim=cfg["hidden_dim"],
        n_slots=cfg["M"],
        slot_dim=cfg["slot_dim"],
        attn_dim=cfg["attn_dim"],
        rule=cfg["rule"],
        variant=cfg["variant"],
    )


# -- subcommands ------------------------------------------------------------


def cmd_schedule(args, cfg) -> int:
    M = args.M if args.M is not None else args.T
    if args.rule != "every-step" and args.M is None:
        raise UsageError("--M is required for rule " + args.rule)
    sched = make_schedule(args.T, M, args.rule)
    print(",".join(str(t) for t in sched.times))
    return 0


def cmd_preprocess(args, cfg) -> int:
    from .data import DatasetSpec, preprocess, read_events_csv, write_vocab

    spec = DatasetSpec(L=cfg["L"], l_min=cfg["l_min"], min_item_count=cfg["min_count"], ratios=tuple(cfg["ratios"]))
    sequences, vocab = preprocess(read_events_csv(args.events), spec)
    out = run_dir(cfg)
    meta = _write_dataset(out, sequences, len(vocab), spec.L, spec.ratios, cfg["seed"])
    write_vocab(out / "vocab.json", vocab)
    write_manifest(out, "preprocess", cfg, dataset=meta)
    print(out)
    return 0


def cmd_synth(args, cfg) -> int:
    from .data import ItemSequence, markov_sequences

    T = cfg["T"] or 100
    arr = markov_sequences(cfg["items"], cfg["sequences"], T, cfg["seed"], noise=cfg["noise"])
    out = run_dir(cfg)
    meta = _write_dataset(out, [ItemSequence(tuple(r)) for r in arr], cfg["items"], T, cfg["ratios"], cfg["seed"])
    write_manifest(out, "synth", cfg, dataset=meta)
    print(out)
    return 0


def cmd_train(args, cfg) -> int:
    from .data import as_array
    from .evaluation import evaluate
    from .model import CmnRec
    from .training import TrainConfig, train

    if not cfg.get("data"):
        raise UsageError("train needs --data (or 'data' in the config file)")
    data_dir = Path(cfg["data"])
    train_arr = as_array(_load_split(cfg["data"], "train"))
    valid_arr = as_array(_load_split(cfg["data"], "valid"))
    meta = _dataset_meta(data_dir)
    seq_len = train_arr.shape[1]
    if cfg["T"] is not None and cfg["T"] != seq_len:
        raise ValueError(f"--T {cfg['T']} does not match data sequence length {seq_len}")
    n_items = int(meta.get("n_items", max(train_arr.max(), valid_arr.max())))
    mcfg = _model_config(cfg, n_items, seq_len)
    tcfg = TrainConfig(
        batch_size=cfg["batch"],
        learning_rate=cfg["lr"],
        max_epochs=cfg["epochs"],
        patience=cfg["patience"],
        seed=cfg["seed"],
        eval_n=cfg["topn"],
    )
    out = run_dir(cfg)
    write_manifest(out, "train", cfg, model=mcfg.to_dict())
    result = train(CmnRec(mcfg, seed=cfg["seed"]), train_arr, valid_arr, tcfg, history_path=out / "history.csv")
    result.model.save(out / "checkpoint.npz")
    if (data_dir / "test.txt").exists():
        report = evaluate(result.model, _load_split(cfg["data"], "test"), cfg["topn"])
        (out / "test_metrics.json").write_text(report.to_json())
    write_manifest(out, "train", cfg, model=mcfg.to_dict(), best_epoch=result.best_epoch)
    print(out)
    return 0


def cmd_eval(args, cfg) -> int:
    from .evaluation import evaluate
    from .model import CmnRec

    model = CmnRec.load(args.checkpoint)
    report = evaluate(model, _load_split(args.data, "test"), cfg["topn"])
    out = run_dir(cfg)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.csv").write_text(report.to_csv_row(header=True))
    write_manifest(out, "eval", cfg, checkpoint=str(args.checkpoint))
    print(report.to_json())
    return 0


def cmd_bench(args, cfg) -> int:
    from .bench import CostModel, analytic_costs, cost_model_note, speedup_report, time_epoch
    from .bench import write_bench_json, write_speedup_csv
    from .data import as_array, markov_sequences
    from .training import TrainConfig

    if cfg.get("data"):
        data = as_array(_load_split(cfg["data"], "train"))
        n_items = int(_dataset_meta(Path(cfg["data"])).get("n_items", data.max()))
    else:
        T = cfg["T"] or 100
        data = markov_sequences(cfg["items"], cfg["sequences"], T, cfg["seed"], noise=cfg["noise"])
        n_items = cfg["items"]
    T = data.shape[1]
    tcfg = TrainConfig(batch_size=cfg["batch"], seed=cfg["seed"])
    rules = [cfg["rule"]] if args.rule else list(cfg["bench_rules"])
    runs = [("srmn", "every-step")] + [("cmnrec", r) for r in rules]
    if args.with_lstm:
        runs.append(("lstm", rules[0]))
    reports = []
    for variant, rule in runs:
        mcfg = _model_config({**cfg, "variant": variant, "rule": rule}, n_items, T)
        log.info("timing %s/%s", variant, rule)
        reports.append(time_epoch(mcfg, data, tcfg, cfg["reps"], label=f"{variant}-{rule}"))
    rows = speedup_report(reports, "srmn-every-step")
    h, k, M = cfg["hidden_dim"], cfg["embed_dim"], cfg["M"]
    costs = analytic_costs(CostModel(h=h, k=k, T=T, M=M))
    analytic = {
        "h": h, "k": k, "T": T, "M": M,
        "mnr_total": costs.mnr_total, "cmn_total": costs.cmn_total, "ratio": costs.ratio,
        "h_equals_2k": cost_model_note(M, T),
    }
    out = run_dir(cfg)
    write_speedup_csv(out / "speedup.csv", rows)
    write_bench_json(out / "bench.json", reports, rows, {"analytic_cost_model": analytic})
    write_manifest(out, "bench", cfg)
    for row in rows:
        print(f"{row['label']:>20}  train x{row['train_speedup']:.2f}  infer x{row['inference_speedup']:.2f}"
              f"  memory ops/seq {row['memory_ops_per_sequence']}")
    print(out)
    return 0


def cmd_analyze(args, cfg) -> int:
    from .analysis import contribution_norms, position_correlation_profile
    from .data import as_array
    from .model import CmnRec

    model = CmnRec.load(args.checkpoint)
    data = as_array(_load_split(args.data, "test"))
    out = run_dir(cfg)
    profile = position_correlation_profile(model.params["embedding"], data)
    profile.write_csv(out / "position_cosine.csv")
    usable = [row for row in data if np.count_nonzero(row) >= 2][: args.max_sequences]
    if usable:
        series = [contribution_norms(model, row, cfg["scalarize"]) for row in usable]
        q = np.mean([s.q for s in series], axis=0)
        p = np.mean([s.p for s in series], axis=0)
        with open(out / "contributions.csv", "w") as fh:
            fh.write("position,q_input,p_hidden\n")
            for i, (qi, pi) in enumerate(zip(q, p), 1):
                fh.write(f"{i},{qi!r},{pi!r}\n")
    write_manifest(out, "analyze", cfg, checkpoint=str(args.checkpoint))
    print(out)
    return 0


COMMANDS = {
    "schedule": cmd_schedule,
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cmnrec: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"cmnrec: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
