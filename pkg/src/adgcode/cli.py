"""Command-line pipeline: graph building, training, generation, evaluation,
ablation sweeps, and synthetic corpus generation.

Exit codes: 0 success, 2 usage/configuration, 3 data/format, 4 training
divergence.  All commands are deterministic given --seed and never mutate
their input files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import metrics as metrics_mod
from .embedder import EmbedderConfig
from .graph import GraphError, build_adg, dump_graph, load_graph
from .model import (
    CheckpointFormatError,
    ModelConfig,
    Seq2SeqModel,
    TrainConfig,
    TrainingDivergedError,
    Vocabulary,
    beam_search,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .signatures import (
    DataFormatError,
    SignatureError,
    parse_signatures,
    read_pairs,
    tokenize_description,
    write_pairs,
)
from .synthetic import SyntheticGenerationError, SyntheticSpec, generate, split_pairs

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

ABLATION_AXES = {
    "aggregator": ("mean", "pooling", "lstm"),
    "hops": ("1", "2"),
    "direction": ("on", "off"),
    "labels": ("on", "off"),
}


class ConfigError(ValueError):
    """Missing or inconsistent pipeline configuration."""


@dataclass
class PipelineConfig:
    signatures: Optional[str] = None
    graph: Optional[str] = None
    train_data: Optional[str] = None
    valid_data: Optional[str] = None
    test_data: Optional[str] = None
    checkpoint: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    embedder_hops: int = 2
    embedder_aggregator: str = "lstm"
    embedder_virtualization: str = "mean"
    embedder_direction: bool = True
    embedder_labels: bool = True
    embedder_concat_cap: Optional[int] = None
    embedder_activation: str = "tanh"
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    workers: int = 1

    def embedder_config(self) -> EmbedderConfig:
        return EmbedderConfig(
            dim=self.model.code_dim,
            hops=self.embedder_hops,
            aggregator=self.embedder_aggregator,
            virtualization=self.embedder_virtualization,
            use_edge_direction=self.embedder_direction,
            use_edge_labels=self.embedder_labels,
            concat_cap=self.embedder_concat_cap,
            activation=self.embedder_activation,
        )

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"configuration is missing {name!r}")
            if name.endswith(("signatures", "graph", "_data", "checkpoint")):
                if name in ("checkpoint", "graph"):
                    continue  # output paths need not exist yet
                if not os.path.exists(value):
                    raise ConfigError(f"{name} path does not exist: {value}")


def _load_config(path: Optional[str]) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    try:
        paths = raw.get("paths", {})
        cfg.signatures = paths.get("signatures", cfg.signatures)
        cfg.graph = paths.get("graph", cfg.graph)
        cfg.train_data = paths.get("train", cfg.train_data)
        cfg.valid_data = paths.get("valid", cfg.valid_data)
        cfg.test_data = paths.get("test", cfg.test_data)
        cfg.checkpoint = paths.get("checkpoint", cfg.checkpoint)
        if "model" in raw:
            cfg.model = ModelConfig(**raw["model"])
        emb = raw.get("embedder", {})
        cfg.embedder_hops = emb.get("hops", cfg.embedder_hops)
        cfg.embedder_aggregator = emb.get("aggregator", cfg.embedder_aggregator)
        cfg.embedder_virtualization = emb.get("virtualization", cfg.embedder_virtualization)
        cfg.embedder_direction = emb.get("direction", cfg.embedder_direction)
        cfg.embedder_labels = emb.get("labels", cfg.embedder_labels)
        cfg.embedder_concat_cap = emb.get("concat_cap", cfg.embedder_concat_cap)
        cfg.embedder_activation = emb.get("activation", cfg.embedder_activation)
        if "train" in raw:
            tr = dict(raw["train"])
            if "initial_types" in tr:
                tr["initial_types"] = tuple(tr["initial_types"])
            cfg.train_cfg = TrainConfig(**tr)
        cfg.seed = raw.get("seed", cfg.seed)
        cfg.workers = raw.get("workers", cfg.workers)
    except TypeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    return cfg


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train_cfg = replace(cfg.train_cfg, seed=args.seed)
    if getattr(args, "beam", None) is not None:
        cfg.model = replace(cfg.model, beam_width=args.beam)
    if getattr(args, "max_len", None) is not None:
        cfg.model = replace(cfg.model, max_len=args.max_len)
    if getattr(args, "reach_filter", False):
        cfg.train_cfg = replace(cfg.train_cfg, reach_filter=True)
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def _read_signature_file(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_signatures(fh.read())


def _load_graph_file(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return load_graph(fh.read())


def _graph_stats(adg) -> list[tuple[str, str]]:
    n = adg.num_nodes
    e = adg.num_edges
    max_in = max((adg.degree_stats(m).indegree for m in range(n)), default=0)
    max_out = max((adg.degree_stats(m).outdegree for m in range(n)), default=0)
    avg = e / n if n else 0.0
    return [
        ("Nodes", str(n)),
        ("Edges", str(e)),
        ("Max.in", str(max_in)),
        ("Avg.in", f"{avg:.2f}"),
        ("Max.out", str(max_out)),
        ("Avg.out", f"{avg:.2f}"),
    ]


def cmd_build_graph(cfg: PipelineConfig, out) -> int:
    cfg.require("signatures", "graph")
    corpus = _read_signature_file(cfg.signatures)
    adg = build_adg(corpus.nodes(), corpus.hierarchy())
    with open(cfg.graph, "w", encoding="utf-8") as fh:
        fh.write(dump_graph(adg))
    for key, value in _graph_stats(adg):
        print(f"{key} {value}", file=out)
    return EXIT_OK


def _build_model(cfg: PipelineConfig, adg, train_pairs) -> Seq2SeqModel:
    desc_vocab = Vocabulary.from_sequences(d for d, _ in train_pairs)
    code_vocab = Vocabulary.from_sequences(c for _, c in train_pairs)
    return Seq2SeqModel(
        desc_vocab=desc_vocab,
        code_vocab=code_vocab,
        adg=adg,
        config=cfg.model,
        embedder_config=cfg.embedder_config(),
        seed=cfg.seed,
    )


def cmd_train(cfg: PipelineConfig, out) -> int:
    cfg.require("graph", "train_data", "checkpoint")
    if not os.path.exists(cfg.graph):
        raise ConfigError(f"graph path does not exist: {cfg.graph}")
    adg = _load_graph_file(cfg.graph)
    train_pairs = read_pairs(cfg.train_data)
    valid_pairs = read_pairs(cfg.valid_data) if cfg.valid_data else []
    model = _build_model(cfg, adg, train_pairs)
    history = train(model, train_pairs, valid_pairs, cfg.train_cfg)
    data = save_checkpoint(model)
    with open(cfg.checkpoint, "wb") as fh:
        fh.write(data)
    history_path = cfg.checkpoint + ".history"
    with open(history_path, "w", encoding="utf-8") as fh:
        for rec in history:
            entry = {"step": rec.step, "loss": rec.loss, "lrate": rec.lrate}
            if rec.val_bleu is not None:
                entry["val_bleu"] = rec.val_bleu
            fh.write(json.dumps(entry) + "\n")
    print(f"trained {history[-1].step} steps; checkpoint {cfg.checkpoint}", file=out)
    return EXIT_OK


def _load_model(cfg: PipelineConfig) -> Seq2SeqModel:
    cfg.require("checkpoint")
    if not os.path.exists(cfg.checkpoint):
        raise ConfigError(f"checkpoint path does not exist: {cfg.checkpoint}")
    with open(cfg.checkpoint, "rb") as fh:
        return load_checkpoint(fh.read())


def cmd_generate(cfg: PipelineConfig, description: str, out) -> int:
    tokens = tokenize_description(description)
    if not tokens:
        raise ConfigError("description is empty after preprocessing")
    model = _load_model(cfg)
    result = beam_search(
        model,
        tokens,
        width=cfg.model.beam_width,
        max_len=cfg.model.max_len,
        reach_filter=cfg.train_cfg.reach_filter,
        initial_types=cfg.train_cfg.initial_types,
    )
    print(" ".join(result), file=out)
    return EXIT_OK


def _evaluate_model(cfg: PipelineConfig, model: Seq2SeqModel, pairs) -> metrics_mod.MetricReport:
    node_embeddings = model.embed_nodes()

    def generate_one(desc):
        return beam_search(
            model,
            desc,
            width=cfg.model.beam_width,
            max_len=cfg.model.max_len,
            node_embeddings=node_embeddings,
            reach_filter=cfg.train_cfg.reach_filter,
            initial_types=cfg.train_cfg.initial_types,
        )

    descriptions = [d for d, _ in pairs]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            candidates = list(pool.map(generate_one, descriptions))
    else:
        candidates = [generate_one(d) for d in descriptions]
    eval_pairs = metrics_mod.make_pairs(candidates, [c for _, c in pairs])
    return metrics_mod.evaluate_pairs(eval_pairs)


def cmd_evaluate(cfg: PipelineConfig, out) -> int:
    cfg.require("test_data")
    model = _load_model(cfg)
    pairs = read_pairs(cfg.test_data)
    report = _evaluate_model(cfg, model, pairs)
    print(metrics_mod.format_report(report), file=out)
    return EXIT_OK


def _parse_axes(specs: Sequence[str]) -> list[tuple[str, str]]:
    variants: list[tuple[str, str]] = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"bad axis {spec!r}; expected axis=value[,value...]")
        axis, _, values = spec.partition("=")
        axis = axis.strip()
        if axis not in ABLATION_AXES:
            raise ConfigError(
                f"unknown ablation axis {axis!r}; valid: {', '.join(sorted(ABLATION_AXES))}"
            )
        for value in values.split(","):
            value = value.strip()
            if value not in ABLATION_AXES[axis]:
                raise ConfigError(f"axis {axis!r} does not accept value {value!r}")
            variants.append((axis, value))
    if not variants:
        raise ConfigError("no ablation axes given")
    return variants


def _variant_config(cfg: PipelineConfig, axis: str, value: str) -> PipelineConfig:
    out = replace(cfg)
    if axis == "aggregator":
        out.embedder_aggregator = value
    elif axis == "hops":
        out.embedder_hops = int(value)
    elif axis == "direction":
        out.embedder_direction = value == "on"
    elif axis == "labels":
        out.embedder_labels = value == "on"
    return out


def cmd_ablate(cfg: PipelineConfig, axes: Sequence[str], out) -> int:
    cfg.require("graph", "train_data", "test_data")
    if not os.path.exists(cfg.graph):
        raise ConfigError(f"graph path does not exist: {cfg.graph}")
    variants = _parse_axes(axes)
    adg = _load_graph_file(cfg.graph)
    train_pairs = read_pairs(cfg.train_data)
    valid_pairs = read_pairs(cfg.valid_data) if cfg.valid_data else []
    test_pairs = read_pairs(cfg.test_data)
    rows = []
    for axis, value in variants:
        vcfg = _variant_config(cfg, axis, value)
        model = _build_model(vcfg, adg, train_pairs)
        train(model, train_pairs, valid_pairs, vcfg.train_cfg)
        report = _evaluate_model(vcfg, model, test_pairs)
        rows.append((f"{axis}={value}", report))
    header = "\t".join(("variant",) + metrics_mod.COLUMN_ORDER)
    print(header, file=out)
    for label, report in rows:
        values = report.as_dict()
        cells = [label]
        for col in metrics_mod.COLUMN_ORDER:
            v = values[col]
            if v is None:
                cells.append("-")
            elif col == "CIDEr":
                cells.append(f"{v:.3f}")
            else:
                cells.append(f"{100.0 * v:.2f}")
        print("\t".join(cells), file=out)
    return EXIT_OK


def cmd_gen_synthetic(args: argparse.Namespace, out) -> int:
    spec = SyntheticSpec(
        n_types=args.types,
        n_methods=args.methods,
        max_chain_len=args.max_chain,
        corpus_size=args.size,
        seed=args.seed if args.seed is not None else 0,
        min_chain_len=args.min_chain,
        order_sensitive=args.order_sensitive,
    )
    corpus = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    sig_path = os.path.join(args.out, "signatures.sig")
    with open(sig_path, "w", encoding="utf-8") as fh:
        fh.write(corpus.signature_text)
    train_part, valid_part, test_part = split_pairs(corpus.pairs)
    paths = []
    for name, part in (("train", train_part), ("valid", valid_part), ("test", test_part)):
        path = os.path.join(args.out, f"{name}.tsv")
        write_pairs(path, part)
        paths.append(path)
    print(f"wrote {sig_path} and {', '.join(paths)}", file=out)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adgcode",
        description="API dependency graphs and graph-aware code generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--beam", type=int, help="beam width override")
        p.add_argument("--max-len", type=int, dest="max_len", help="generation length cap")
        p.add_argument("--reach-filter", action="store_true", dest="reach_filter",
                       help="mask methods whose inputs are not yet available")
        p.add_argument("--workers", type=int, help="evaluation worker threads")

    p = sub.add_parser("build-graph", help="build and dump the dependency graph")
    common(p)
    p.add_argument("--signatures", help="signature corpus path override")
    p.add_argument("--graph", help="graph dump output path override")

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    common(p)

    p = sub.add_parser("generate", help="generate code for one description")
    common(p)
    p.add_argument("description", nargs="?", default="", help="textual program description")

    p = sub.add_parser("evaluate", help="score generations on the test set")
    common(p)

    p = sub.add_parser("ablate", help="train/evaluate embedder variants side by side")
    common(p)
    p.add_argument("--axis", action="append", default=[], dest="axes",
                   help="axis=value[,value...]; axes: aggregator, hops, direction, labels")

    p = sub.add_parser("gen-synthetic", help="emit a synthetic signature corpus and datasets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--types", type=int, default=6)
    p.add_argument("--methods", type=int, default=12)
    p.add_argument("--max-chain", type=int, default=4, dest="max_chain")
    p.add_argument("--min-chain", type=int, default=1, dest="min_chain")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order-sensitive", action="store_true", dest="order_sensitive")
    return parser


def run(argv: Sequence[str], out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "gen-synthetic":
            return cmd_gen_synthetic(args, out)
        cfg = _apply_overrides(_load_config(args.config), args)
        if args.command == "build-graph":
            if args.signatures:
                cfg.signatures = args.signatures
            if args.graph:
                cfg.graph = args.graph
            return cmd_build_graph(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "generate":
            if not args.description.strip():
                raise ConfigError("a non-empty description is required")
            return cmd_generate(cfg, args.description, out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.axes, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, SyntheticGenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SignatureError, DataFormatError, GraphError, CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
