"""``mgccf`` command line: prepare, build-graphs, train, evaluate, sweep,
export-embeddings.

Settings resolve as flags over ``--config`` JSON over built-in defaults, and
every command writes the resolved configuration beside its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bundle import BundleError, file_sha256
from .dataset import DatasetError, load_snapshot, prepare, save_snapshot
from .evaluation import evaluate, export_embeddings
from .graphs import build_graphs, load_graphs, save_graphs
from .model import BPRMF, BPRMFConfig, ConfigError, ModelConfig, MultiGCCF, load_model, warm_start_from_bprmf
from .numerics import NumericsError
from .trainer import TrainConfig, TrainingError, train

logger = logging.getLogger("multigccf")

EXIT_MISSING_INPUT = 2
EXIT_FAILURE = 1


class MissingInputError(FileNotFoundError):
    pass


@dataclass
class GraphParams:
    sample_sizes: tuple[int, ...] = (15, 10)
    num_sets: int = 30
    target_avg_degree: float = 10.0
    max_mge_degree: int = 64
    exact_cutoff: int = 20000
    sample_size: int = 2000

    def __post_init__(self):
        self.sample_sizes = tuple(int(s) for s in self.sample_sizes)


@dataclass
class RunConfig:
    """Everything a ``train`` run depends on; ``to_dict`` output fed back through
    ``--config`` reproduces the run."""

    dataset: str | None = None
    graphs: str | None = None
    out_dir: str | None = None
    pretrained: str | None = None
    model_kind: str = "multigccf"
    seed: int = 0
    cutoffs: tuple[int, ...] = (20,)
    log_timing: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    graph: GraphParams = field(default_factory=GraphParams)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("model", "train", "graph")}
        d["cutoffs"] = list(self.cutoffs)
        d["model"] = self.model.to_dict()
        d["train"] = self.train.to_dict()
        g = asdict(self.graph)
        g["sample_sizes"] = list(self.graph.sample_sizes)
        d["graph"] = g
        return d


# -- config resolution ------------------------------------------------------------------

# argparse dest -> key inside the matching config section
_MODEL_FLAGS = {
    "input_dim": "input_dim",
    "layer1_dim": "layer1_dim",
    "output_dim": "output_dim",
    "bipar_hops": "num_gcn_layers",
    "fusion": "fusion",
    "dropout": "dropout_rate",
    "reg_lambda": "reg_lambda",
    "reg_beta": "reg_beta",
    "use_mge": "use_mge",
    "use_skip": "use_skip",
    "use_bipar": "use_bipar",
    "eval_neighbors": "eval_neighbors",
    "max_eval_neighbors": "max_eval_neighbors",
    "attention_dim": "attention_dim",
}
_TRAIN_FLAGS = {
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "max_epochs": "max_epochs",
    "patience": "early_stop_patience",
    "eval_every": "eval_every",
    "validation_users": "validation_users",
}
_GRAPH_FLAGS = {
    "sample_sizes": "sample_sizes",
    "num_sets": "num_sets",
    "target_degree": "target_avg_degree",
    "max_mge_degree": "max_mge_degree",
    "exact_cutoff": "exact_cutoff",
    "degree_sample_size": "sample_size",
}
_TOP_FLAGS = ("dataset", "graphs", "out_dir", "pretrained", "model_kind", "seed", "cutoffs", "log_timing")


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    _require(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(data) - set(_TOP_FLAGS) - {"model", "train", "graph"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the JSON config file and explicit flags, then validate."""
    file = _read_config_file(getattr(args, "config", None))
    given = {k: v for k, v in vars(args).items() if v is not None}

    model = dict(file.get("model", {}))
    model.update({dst: given[src] for src, dst in _MODEL_FLAGS.items() if src in given})
    trn = dict(file.get("train", {}))
    trn.update({dst: given[src] for src, dst in _TRAIN_FLAGS.items() if src in given})
    graph = dict(file.get("graph", {}))
    graph.update({dst: given[src] for src, dst in _GRAPH_FLAGS.items() if src in given})
    top = {k: file[k] for k in _TOP_FLAGS if k in file}
    top.update({k: given[k] for k in _TOP_FLAGS if k in given})

    seed = int(top.get("seed", 0))
    trn["seed"] = seed
    # the encoder needs one sample size per layer
    if "sample_sizes" in graph and "sample_sizes" not in model:
        model["sample_sizes"] = graph["sample_sizes"]
    if "sample_sizes" in model and "sample_sizes" not in graph:
        graph["sample_sizes"] = model["sample_sizes"]
    try:
        gp = GraphParams(**graph)
    except TypeError as exc:
        raise ConfigError(f"graph config: {exc}") from exc
    trn.setdefault("num_presample_sets", gp.num_sets)
    cfg = RunConfig(
        model=ModelConfig.from_dict(model),
        train=TrainConfig.from_dict(trn),
        graph=gp,
        **top,
    )
    cfg.cutoffs = tuple(int(k) for k in cfg.cutoffs)
    if cfg.model_kind not in ("multigccf", "bprmf"):
        raise ConfigError(f"model kind must be 'multigccf' or 'bprmf', got {cfg.model_kind!r}")
    if min(cfg.cutoffs) < 1:
        raise ConfigError("cutoffs must be >= 1")
    if cfg.pretrained and cfg.model_kind != "multigccf":
        raise ConfigError("--pretrained only applies to the multigccf model")
    return cfg


# -- helpers ---------------------------------------------------------------------------------


def _require(path, what: str = "input") -> Path:
    if path is None:
        raise MissingInputError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"input not found: {path}")
    return p


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("MGCCF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"MGCCF_THREADS must be an integer, got {env!r}") from exc
    return 1


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _label(cfg: RunConfig) -> str:
    if cfg.model_kind == "bprmf":
        return "bprmf"
    m = cfg.model
    parts = [f"fusion={m.fusion}"]
    if m.use_bipar:
        parts.append(f"bipar{m.num_gcn_layers}")
    parts += [b for b in ("mge", "skip") if getattr(m, f"use_{b}")]
    if cfg.pretrained:
        parts.append("pretrained")
    return "multigccf[" + ",".join(parts) + "]"


def _load_graphs_for(cfg: RunConfig, dataset):
    if cfg.graphs:
        graphs = load_graphs(_require(cfg.graphs))
        if (graphs.bipartite.num_users, graphs.bipartite.num_items) != (dataset.num_users, dataset.num_items):
            raise ConfigError("graph bundle does not match the dataset snapshot's user/item counts")
        if len(graphs.table.sizes) < cfg.model.num_gcn_layers:
            raise ConfigError(f"graph bundle has {len(graphs.table.sizes)} sample sizes, model needs {cfg.model.num_gcn_layers}")
        return graphs
    g = cfg.graph
    return build_graphs(
        dataset, g.sample_sizes, g.num_sets, g.target_avg_degree, g.max_mge_degree, cfg.seed, g.exact_cutoff, g.sample_size
    )


def _new_model(cfg: RunConfig, dataset, graphs):
    if cfg.model_kind == "bprmf":
        return BPRMF(BPRMFConfig(cfg.model.output_dim, cfg.model.reg_lambda), dataset.num_users, dataset.num_items, seed=cfg.seed)
    model = MultiGCCF(cfg.model, graphs, seed=cfg.seed)
    if cfg.pretrained:
        source = load_model(_require(cfg.pretrained))
        if not isinstance(source, BPRMF):
            raise ConfigError(f"{cfg.pretrained} is not a BPRMF checkpoint")
        warm_start_from_bprmf(model, source)
    return model


def run_training(cfg: RunConfig, threads: int = 1):
    """Train per ``cfg`` and write checkpoint, log, report and resolved config into ``cfg.out_dir``."""
    _require(cfg.dataset, "dataset snapshot (--dataset)")
    if not cfg.out_dir:
        raise ConfigError("an output directory is required (--out-dir)")
    for extra in (cfg.graphs, cfg.pretrained):
        if extra:
            _require(extra)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())

    dataset = load_snapshot(cfg.dataset)
    graphs = None
    if cfg.model_kind == "multigccf":
        graphs = _load_graphs_for(cfg, dataset)
    model = _new_model(cfg, dataset, graphs)
    with open(out / "train_log.csv", "w", encoding="utf-8") as log:
        model, state, report = train(
            dataset, model, cfg.train, log=log, checkpoint_path=out / "model.ckpt", cutoffs=cfg.cutoffs, log_timing=cfg.log_timing
        )
    if threads > 1:
        report = evaluate(model, dataset, cfg.cutoffs, "test", threads=threads)
    report.label = _label(cfg)
    report.config = cfg.to_dict()
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    return model, state, report


# -- subcommands ------------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    _require(args.input)
    ratios = tuple(args.ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError("--ratios needs three non-negative values summing to 1")
    ds = prepare(args.input, args.min_interactions, ratios, args.seed, args.format)
    settings = {
        "input": str(args.input),
        "min_interactions": args.min_interactions,
        "ratios": list(ratios),
        "seed": args.seed,
        "format": args.format,
    }
    sha = save_snapshot(ds, args.output, settings)
    summary = ds.summary()
    summary["sha256"] = sha
    _write_json(f"{args.output}.config.json", settings)
    _write_json(f"{args.output}.summary.json", summary)
    print(
        f"users {summary['users']}  items {summary['items']}  interactions {summary['interactions']}  "
        f"density {summary['density_percent']}  sha256 {sha}"
    )
    return 0


def cmd_build_graphs(args) -> int:
    cfg = resolve_run_config(args)
    _require(cfg.dataset, "dataset snapshot (--dataset)")
    ds = load_snapshot(cfg.dataset)
    g = cfg.graph
    bundle = build_graphs(ds, g.sample_sizes, g.num_sets, g.target_avg_degree, g.max_mge_degree, cfg.seed, g.exact_cutoff, g.sample_size)
    sha = save_graphs(bundle, args.output, file_sha256(cfg.dataset))
    _write_json(f"{args.output}.config.json", {"dataset": cfg.dataset, "seed": cfg.seed, "graph": cfg.to_dict()["graph"]})
    for side in ("user", "item"):
        sg = bundle.similarity(side)
        flag = "" if sg.reachable else " (target unreachable)"
        print(f"{side}-{side} graph: threshold {sg.threshold:.6f}  avg degree {sg.avg_degree:.2f}{flag}")
    print(f"sha256 {sha}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_run_config(args)
    _, state, report = run_training(cfg, _threads(args))
    stop = "early stop" if state.stopped_early else "max epochs"
    print(f"{report.label}: best epoch {state.best_epoch} ({stop} after {state.epoch})")
    print(report.to_csv(), end="")
    return 0


def cmd_evaluate(args) -> int:
    _require(args.checkpoint)
    _require(args.dataset)
    dataset = load_snapshot(args.dataset)
    graphs = load_graphs(_require(args.graphs)) if args.graphs else None
    model = load_model(args.checkpoint, graphs)
    report = evaluate(
        model, dataset, tuple(args.cutoffs), args.split, threads=_threads(args), label=args.label or model.kind, keep_per_user=args.per_user
    )
    if args.output:
        Path(f"{args.output}.json").write_text(report.to_json() + "\n", encoding="utf-8")
        Path(f"{args.output}.csv").write_text(report.to_csv(), encoding="utf-8")
        _write_json(
            f"{args.output}.config.json",
            {"checkpoint": args.checkpoint, "dataset": args.dataset, "graphs": args.graphs, "cutoffs": list(args.cutoffs), "split": args.split},
        )
    print(report.to_csv(), end="")
    return 0


def cmd_sweep(args) -> int:
    base = resolve_run_config(args)
    if not base.out_dir:
        raise ConfigError("an output directory is required (--out-dir)")
    lrs = args.lrs or [1e-4, 1e-3, 1e-2, 1e-1]
    lambdas = args.reg_lambdas or [base.model.reg_lambda]
    rows = []
    for n, (lr, lam) in enumerate((lr, lam) for lr in lrs for lam in lambdas):
        cfg = resolve_run_config(args)
        cfg.train.learning_rate = lr
        cfg.model.reg_lambda = lam
        cfg.out_dir = str(Path(base.out_dir) / f"run{n:02d}")
        _, state, report = run_training(cfg, _threads(args))
        row = {"run": n, "learning_rate": lr, "reg_lambda": lam, "best_epoch": state.best_epoch}
        row["val_recall@20"] = f"{state.best_validation_recall:.6f}"
        row.update({k: v for k, v in report.csv_row().items() if "@" in k})
        rows.append(row)
    best = max(range(len(rows)), key=lambda r: (float(rows[r]["val_recall@20"]), -r))
    for r, row in enumerate(rows):
        row["best"] = int(r == best)
    path = Path(base.out_dir) / "sweep.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _write_json(Path(base.out_dir) / "config.json", {**base.to_dict(), "sweep": {"lrs": lrs, "reg_lambdas": lambdas}})
    print(path.read_text(), end="")
    return 0


def cmd_export_embeddings(args) -> int:
    _require(args.checkpoint)
    graphs = load_graphs(_require(args.graphs)) if args.graphs else None
    model = load_model(args.checkpoint, graphs)
    n = export_embeddings(model, args.output, args.side)
    print(f"wrote {n} {args.side} embeddings to {args.output}")
    return 0


# -- parser -----------------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed for all randomness (default 0)")
    p.add_argument("--threads", type=int, help="worker cap; falls back to MGCCF_THREADS")
    p.add_argument("--config", help="JSON run config; explicit flags override it")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_graph_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("graphs")
    g.add_argument("--sample-sizes", type=int, nargs="+", help="per-hop neighbor sample sizes (default 15 10)")
    g.add_argument("--num-sets", type=int, help="pre-sampled neighbor sets (default 30)")
    g.add_argument("--target-degree", type=float, help="similarity-graph average degree (default 10)")
    g.add_argument("--max-mge-degree", type=int, help="similarity-graph degree cap (default 64)")
    g.add_argument("--exact-cutoff", type=int, help="node count above which degrees are estimated (default 20000)")
    g.add_argument("--degree-sample-size", type=int, help="nodes sampled for the estimate (default 2000)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    m = p.add_argument_group("model")
    m.add_argument("--model", dest="model_kind", choices=("multigccf", "bprmf"))
    m.add_argument("--input-dim", type=int)
    m.add_argument("--layer1-dim", type=int)
    m.add_argument("--output-dim", type=int, help="output dim; also the BPRMF embedding dim")
    m.add_argument("--bipar-hops", type=int, choices=(1, 2))
    m.add_argument("--fusion", choices=("sum", "concat", "attention"))
    m.add_argument("--attention-dim", type=int)
    m.add_argument("--no-mge", dest="use_mge", action="store_const", const=False)
    m.add_argument("--no-skip", dest="use_skip", action="store_const", const=False)
    m.add_argument("--no-bipar", dest="use_bipar", action="store_const", const=False)
    m.add_argument("--dropout", type=float)
    m.add_argument("--reg-lambda", type=float)
    m.add_argument("--reg-beta", type=float)
    m.add_argument("--eval-neighbors", choices=("full", "sampled"))
    m.add_argument("--max-eval-neighbors", type=int)
    m.add_argument("--pretrained", help="BPRMF checkpoint whose embeddings become frozen inputs")
    t = p.add_argument_group("training")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--validation-users", type=int)
    t.add_argument("--cutoffs", type=int, nargs="+")
    t.add_argument("--no-timing", dest="log_timing", action="store_const", const=False, help="leave the seconds column empty")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgccf", description="Multi-graph convolution collaborative filtering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter, index and split a raw interaction file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-interactions", type=int, default=10)
    p.add_argument("--ratios", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--format", choices=("auto", "whitespace", "comma"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("build-graphs", help="build and save the graph bundle")
    p.add_argument("--dataset")
    p.add_argument("--output", required=True)
    _add_graph_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_build_graphs)

    for name, func, text in (("train", cmd_train, "train one model"), ("sweep", cmd_sweep, "grid over learning rate x lambda")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--dataset")
        p.add_argument("--graphs", help="graph bundle; built in-process when omitted")
        p.add_argument("--out-dir")
        _add_model_flags(p)
        _add_graph_flags(p)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--lrs", type=float, nargs="+")
            p.add_argument("--reg-lambdas", type=float, nargs="+")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="full-ranking evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--graphs")
    p.add_argument("--cutoffs", type=int, nargs="+", default=[20])
    p.add_argument("--split", choices=("test", "validation"), default="test")
    p.add_argument("--label")
    p.add_argument("--per-user", action="store_true")
    p.add_argument("--output", help="path prefix for .json and .csv reports")
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="dump fused embeddings as index<TAB>v1,...")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graphs")
    p.add_argument("--side", choices=("user", "item"), default="item")
    p.add_argument("--output", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"mgccf {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ConfigError, DatasetError, BundleError, TrainingError, NumericsError, ValueError) as exc:
        print(f"mgccf {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
