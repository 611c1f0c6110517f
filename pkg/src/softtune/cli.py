"""Command-line entry points and the end-to-end pipeline.

Every subcommand is a thin wrapper over one module operation; the only
logic living here is wiring, file naming, and error-to-exit-code mapping
(0 success, 1 computation error, 2 usage or I/O error). Pipeline stages
write each output to ``<name>.partial`` and rename on success, so an
interrupted run leaves its incomplete files clearly marked.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import corpus, evalkit, experts, pairgen, trainer
from .synthetic import SyntheticWorld, synth

DEFAULT_EVALS = ("heldout", "retrieval", "dist")


class UsageError(Exception):
    """Bad invocation shape; maps to exit code 2."""


# --- shared helpers ---------------------------------------------------------


def _require_files(*paths: Path | None) -> None:
    for path in paths:
        if path is not None and not path.exists():
            raise FileNotFoundError(str(path))


def _submatrix(matrix: corpus.EmbeddingMatrix, ids: Sequence[str], model_id: str) -> corpus.EmbeddingMatrix:
    return corpus.EmbeddingMatrix(
        model_id=model_id, dim=matrix.dim, rows={tid: matrix.vector(tid) for tid in ids}
    )


def _heldout_run(
    matrix: corpus.EmbeddingMatrix, split: corpus.DatasetSplit
) -> tuple[evalkit.RunRanking, evalkit.QrelSet]:
    """Rank every group passage for every held-out query by cosine."""
    passage_ids = [g.passage_id for g in split.groups]
    scores = {}
    qrels = {}
    for group in split.groups:
        for qid in group.heldout_ids:
            qvec = matrix.vector(qid)
            scores[qid] = [
                (pid, corpus.cosine(qvec, matrix.vector(pid))) for pid in passage_ids
            ]
            qrels[qid] = {group.passage_id}
    return evalkit.RunRanking.from_scores(scores), evalkit.QrelSet.from_dict(qrels)


def _heldout_samples(
    matrix: corpus.EmbeddingMatrix,
    split: corpus.DatasetSplit,
    grouping: dict[str, int],
) -> list[evalkit.SimilaritySample]:
    heldout_ids = [qid for g in split.groups for qid in g.heldout_ids]
    passage_ids = [g.passage_id for g in split.groups]
    return evalkit.intra_inter(
        _submatrix(matrix, heldout_ids, "queries"),
        _submatrix(matrix, passage_ids, "passages"),
        grouping,
    )


def _print_active_sets(labeled: list[experts.LabeledPair], model_ids: list[str]) -> None:
    fractions = experts.active_set_fractions(labeled)
    print("active-set fractions (share of pairs where the expert sets Soft-1):")
    for model_id, fraction in zip(model_ids, fractions):
        print(f"  {model_id}: {100.0 * fraction:.2f}%")


# --- subcommands ------------------------------------------------------------


def _cmd_synth(args: argparse.Namespace) -> int:
    world = SyntheticWorld(
        group_count=args.groups,
        train_per_group=args.train,
        heldout_per_group=args.heldout,
        dim=args.dim,
        expert_count=args.experts,
        expert_noise=args.noise,
        seed=args.seed,
    )
    data = synth(world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_collection(data.collection, out / "collection.jsonl")
    corpus.write_split(data.split, out / "split.json")
    corpus.save_matrix(data.base, out / "base.bin")
    for model_id, matrix in data.experts:
        corpus.save_matrix(matrix, out / f"{model_id}.bin")
    corpus.save_matrix(data.ground_truth, out / "ground_truth.bin")
    print(f"synthetic world written to {out} "
          f"({world.group_count} groups, {world.expert_count} experts)")
    return 0


def _cmd_pairgen(args: argparse.Namespace) -> int:
    _require_files(Path(args.collection), Path(args.split))
    collection = corpus.read_collection(args.collection)
    split = corpus.read_split(args.split)
    dataset, augmented = pairgen.build_pair_dataset(collection, split, args.seed)
    pairgen.write_pairs(dataset.records, args.out)
    if args.augmented_collection:
        corpus.write_collection(augmented, args.augmented_collection)
    print(f"wrote {len(dataset.records)} pairs "
          f"({dataset.positives} positive / {dataset.negatives} negative) to {args.out}")
    return 0


def _cmd_label(args: argparse.Namespace) -> int:
    expert_paths = [Path(p) for p in args.experts.split(",") if p]
    _require_files(Path(args.pairs), *expert_paths)
    pairs = pairgen.read_pairs(args.pairs)
    panel = experts.ExpertPanel(tuple(
        (path.stem, corpus.load_matrix(path)) for path in expert_paths
    ))
    labeled = experts.label_pairs(panel, pairs)
    experts.write_labeled(labeled, args.out)
    _print_active_sets(labeled, panel.model_ids())
    print(f"wrote {len(labeled)} labeled pairs to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    _require_files(Path(args.base), Path(args.pairs))
    base = corpus.load_matrix(args.base, model_id="base")
    labeled = experts.read_labeled(args.pairs)
    config = trainer.TrainConfig(
        target_kind=args.target,
        seed=args.seed,
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        optimizer=args.optimizer,
        normalize_output=not args.no_normalize,
    )
    model, report = trainer.train(base, labeled, config)
    trainer.save_adapter(model, args.out, config)
    losses = ", ".join(f"{l:.6f}" for l in report.epoch_losses)
    print(f"trained {args.target} adapter in {report.steps} steps "
          f"({report.wall_time_s:.1f}s); epoch losses: {losses}")
    print(f"loss {report.initial_loss:.6f} -> {report.final_loss:.6f}; saved to {args.out}")
    return 0


def _cmd_eval_retrieval(args: argparse.Namespace) -> int:
    _require_files(Path(args.run), Path(args.qrels))
    run = evalkit.load_run(args.run)
    qrels = evalkit.load_qrels(args.qrels)
    rows = []
    for name, op in (("ndcg", evalkit.ndcg_at_k), ("map", evalkit.map_at_k),
                     ("mrr", evalkit.mrr_at_k)):
        _, mean = op(run, qrels, args.k)
        rows.append((f"{name}@{args.k}", args.model, args.dataset, mean))
        print(f"{name}@{args.k}: {mean:.6f}")
    if args.out:
        evalkit.write_metrics_csv(rows, args.out)
    return 0


def _cmd_eval_heldout(args: argparse.Namespace) -> int:
    _require_files(Path(args.base), Path(args.collection), Path(args.split),
                   Path(args.adapter) if args.adapter else None)
    base = corpus.load_matrix(args.base, model_id="base")
    collection = corpus.read_collection(args.collection)
    split = corpus.read_split(args.split)
    if args.adapter:
        matrix = trainer.apply_adapter(trainer.load_adapter(args.adapter), base)
    else:
        matrix = base
    grouping = collection.group_of()
    samples = _heldout_samples(matrix, split, grouping)
    curve = evalkit.pr_curve(samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalkit.write_pr_curve_csv(curve, out / f"pr_curve_{args.tag}.csv")
    run, qrels = _heldout_run(matrix, split)
    rows = [("auprc", args.tag, "heldout", curve.auprc)]
    for name, op in (("ndcg", evalkit.ndcg_at_k), ("map", evalkit.map_at_k),
                     ("mrr", evalkit.mrr_at_k)):
        _, mean = op(run, qrels, args.k)
        rows.append((f"{name}@{args.k}", args.tag, "heldout", mean))
    evalkit.write_metrics_csv(rows, out / f"metrics_{args.tag}.csv")
    print(f"auprc[{args.tag}]: {curve.auprc:.6f}")
    return 0


def _cmd_eval_dist(args: argparse.Namespace) -> int:
    adapter_specs = [spec for spec in args.adapters.split(",") if spec]
    paths = []
    for spec in adapter_specs:
        if "=" not in spec:
            raise UsageError(f"adapter spec {spec!r} is not name=path")
        name, _, path = spec.partition("=")
        paths.append((name, Path(path)))
    _require_files(Path(args.base), Path(args.collection), Path(args.split),
                   *[p for _, p in paths])
    base = corpus.load_matrix(args.base, model_id="base")
    collection = corpus.read_collection(args.collection)
    split = corpus.read_split(args.split)
    grouping = collection.group_of()
    matrices = [("base", base)]
    for name, path in paths:
        matrices.append((name, trainer.apply_adapter(trainer.load_adapter(path), base)))
    histograms = {
        name: evalkit.similarity_histogram(
            [s.value for s in _heldout_samples(matrix, split, grouping)], bins=args.bins
        )
        for name, matrix in matrices
    }
    names = [name for name, _ in matrices]
    rows = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            rows.append((a, b, evalkit.symmetric_kl(histograms[a], histograms[b])))
    evalkit.write_kl_csv(rows, args.out, bins=args.bins)
    for a, b, value in rows:
        print(f"symmetric_kl({a}, {b}) = {value:.6f}")
    return 0


# --- pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: Path
    seed: int
    world: SyntheticWorld | None
    collection_path: Path | None
    split_path: Path | None
    base_path: Path | None
    expert_paths: tuple[Path, ...]
    learning_rate: float
    batch_size: int
    epochs: int
    optimizer: str
    targets: tuple[str, ...]
    evals: tuple[str, ...]


def _stage(name: str, outputs: list[Path], fn: Callable[..., None]) -> None:
    """Run one stage writing to .partial files, renaming them on success."""
    partials = [o.with_name(o.name + ".partial") for o in outputs]
    try:
        fn(*partials)
    except Exception as e:
        raise RuntimeError(f"stage {name!r} failed: {e}") from e
    for partial, final in zip(partials, outputs):
        partial.replace(final)


def run_pipeline(config: PipelineConfig) -> int:
    """pairgen -> label -> train -> eval, with optional synthetic inputs."""
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    if config.world is not None:
        data = synth(config.world)
        expert_paths = [out / f"{mid}.bin" for mid, _ in data.experts]
        matrix_outputs = [out / "base.bin", out / "ground_truth.bin", *expert_paths]

        def write_world(collection_p, split_p, base_p, gt_p, *expert_ps):
            corpus.write_collection(data.collection, collection_p)
            corpus.write_split(data.split, split_p)
            corpus.save_matrix(data.base, base_p)
            corpus.save_matrix(data.ground_truth, gt_p)
            for (_, matrix), path in zip(data.experts, expert_ps):
                corpus.save_matrix(matrix, path)

        _stage("synth", [out / "collection.jsonl", out / "split.json", *matrix_outputs],
               write_world)
        collection_path = out / "collection.jsonl"
        split_path = out / "split.json"
        base_path = out / "base.bin"
    else:
        _require_files(config.collection_path, config.split_path, config.base_path,
                       *config.expert_paths)
        collection_path = config.collection_path
        split_path = config.split_path
        base_path = config.base_path
        expert_paths = list(config.expert_paths)

    collection = corpus.read_collection(collection_path)
    split = corpus.read_split(split_path)

    def write_pairs_stage(pairs_p, augmented_p):
        dataset, augmented = pairgen.build_pair_dataset(collection, split, config.seed)
        pairgen.write_pairs(dataset.records, pairs_p)
        corpus.write_collection(augmented, augmented_p)
        print(f"pairgen: {len(dataset.records)} records "
              f"({dataset.positives} positive / {dataset.negatives} negative)")

    _stage("pairgen", [out / "pairs.jsonl", out / "collection_augmented.jsonl"],
           write_pairs_stage)

    def write_label_stage(labeled_p):
        pairs = pairgen.read_pairs(out / "pairs.jsonl")
        panel = experts.ExpertPanel(tuple(
            (path.stem, corpus.load_matrix(path)) for path in expert_paths
        ))
        labeled = experts.label_pairs(panel, pairs)
        experts.write_labeled(labeled, labeled_p)
        _print_active_sets(labeled, panel.model_ids())

    _stage("label", [out / "labeled.jsonl"], write_label_stage)

    base = corpus.load_matrix(base_path, model_id="base")
    labeled = experts.read_labeled(out / "labeled.jsonl")
    for target in config.targets:
        train_config = trainer.TrainConfig(
            target_kind=target,
            seed=config.seed,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            epochs=config.epochs,
            optimizer=config.optimizer,
        )

        def train_stage(bin_p, sidecar_p, train_config=train_config):
            model, report = trainer.train(base, labeled, train_config)
            trainer.save_adapter(model, bin_p, train_config, sidecar_path=sidecar_p)
            print(f"train[{train_config.target_kind}]: "
                  f"loss {report.initial_loss:.6f} -> {report.final_loss:.6f} "
                  f"in {report.steps} steps")

        _stage(f"train[{target}]",
               [out / f"adapter_{target}.bin", out / f"adapter_{target}.json"],
               train_stage)

    heldout_count = sum(len(g.heldout_ids) for g in split.groups)
    wants_eval = any(e in config.evals for e in ("heldout", "retrieval", "dist"))
    if heldout_count == 0 and wants_eval:
        print("no held-out queries; skipping evaluation stages")
        return 0

    grouping = collection.group_of()
    model_matrices: list[tuple[str, corpus.EmbeddingMatrix]] = [("base", base)]
    for target in config.targets:
        adapter = trainer.load_adapter(out / f"adapter_{target}.bin",
                                       sidecar_path=out / f"adapter_{target}.json")
        model_matrices.append((target, trainer.apply_adapter(adapter, base)))

    metric_rows: list[tuple[str, str, str, float]] = []
    if "heldout" in config.evals or "retrieval" in config.evals:
        for name, matrix in model_matrices:
            samples = _heldout_samples(matrix, split, grouping)
            if "heldout" in config.evals:
                curve = evalkit.pr_curve(samples)
                _stage(f"eval-heldout[{name}]", [out / f"pr_curve_{name}.csv"],
                       lambda p, curve=curve: evalkit.write_pr_curve_csv(curve, p))
                metric_rows.append(("auprc", name, "heldout", curve.auprc))
            if "retrieval" in config.evals:
                run, qrels = _heldout_run(matrix, split)
                for metric, op in (("ndcg@10", evalkit.ndcg_at_k),
                                   ("map@10", evalkit.map_at_k),
                                   ("mrr@10", evalkit.mrr_at_k)):
                    _, mean = op(run, qrels, 10)
                    metric_rows.append((metric, name, "heldout", mean))

    if "dist" in config.evals:
        histograms = {
            name: evalkit.similarity_histogram(
                [s.value for s in _heldout_samples(matrix, split, grouping)]
            )
            for name, matrix in model_matrices
        }
        names = [name for name, _ in model_matrices]
        kl_rows = []
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                kl_rows.append((a, b, evalkit.symmetric_kl(histograms[a], histograms[b])))
        _stage("eval-dist", [out / "kl.csv"],
               lambda p: evalkit.write_kl_csv(kl_rows, p))

    if metric_rows:
        _stage("report", [out / "metrics.csv"],
               lambda p: evalkit.write_metrics_csv(metric_rows, p))
        for metric, model, _, value in metric_rows:
            if metric == "auprc":
                print(f"auprc[{model}]: {value:.6f}")
    print(f"pipeline complete; artifacts in {out}")
    return 0


def _read_config_file(path: str | Path) -> dict[str, str]:
    """Flat TOML-style ``key = value`` lines; flags always win over these."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip().strip("\"'")
    return out


_PIPELINE_CONFIG_TYPES: dict[str, Callable] = {
    "groups": int, "train": int, "heldout": int, "dim": int, "experts": int,
    "noise": float, "seed": int, "lr": float, "batch": int, "epochs": int,
    "optimizer": str, "targets": str, "evals": str, "out": str,
    "collection": str, "split": str, "base": str, "expert_files": str,
}


def _cmd_pipeline(args: argparse.Namespace) -> int:
    synthetic_mode = args.groups is not None
    path_mode = args.collection is not None
    if synthetic_mode == path_mode:
        raise UsageError(
            "pipeline needs exactly one input source: "
            "--groups ... for a synthetic world, or --collection/--split/--base/--expert-files"
        )
    world = None
    expert_paths: tuple[Path, ...] = ()
    if synthetic_mode:
        world = SyntheticWorld(
            group_count=args.groups,
            train_per_group=args.train,
            heldout_per_group=args.heldout,
            dim=args.dim,
            expert_count=args.experts,
            expert_noise=args.noise,
            seed=args.seed,
        )
    else:
        if not (args.split and args.base and args.expert_files):
            raise UsageError("path mode needs --collection, --split, --base and --expert-files")
        expert_paths = tuple(Path(p) for p in args.expert_files.split(",") if p)
    config = PipelineConfig(
        out_dir=Path(args.out),
        seed=args.seed,
        world=world,
        collection_path=Path(args.collection) if args.collection else None,
        split_path=Path(args.split) if args.split else None,
        base_path=Path(args.base) if args.base else None,
        expert_paths=expert_paths,
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        optimizer=args.optimizer,
        targets=tuple(t for t in args.targets.split(",") if t),
        evals=tuple(e for e in args.evals.split(",") if e),
    )
    for target in config.targets:
        if target not in trainer.TARGET_KINDS:
            raise UsageError(f"unknown target {target!r}")
    for ev in config.evals:
        if ev not in DEFAULT_EVALS:
            raise UsageError(f"unknown eval {ev!r}")
    return run_pipeline(config)


# --- parser -----------------------------------------------------------------


def _build_parser(config_defaults: dict[str, str] | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softtune",
        description="Expert-ensemble soft-label fine-tuning and retrieval evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic Q&A world")
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--heldout", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--experts", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pairgen", help="build the positive/negative pair dataset")
    p.add_argument("--collection", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--augmented-collection",
                   help="also write the collection extended with concat texts")
    p.set_defaults(func=_cmd_pairgen)

    p = sub.add_parser("label", help="score pairs with an expert panel and derive soft labels")
    p.add_argument("--pairs", required=True)
    p.add_argument("--experts", required=True,
                   help="comma-separated expert matrix paths, panel order")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("train", help="train a linear adapter over frozen base embeddings")
    p.add_argument("--base", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--target", required=True, choices=trainer.TARGET_KINDS)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--optimizer", choices=trainer.OPTIMIZERS, default="adam")
    p.add_argument("--no-normalize", action="store_true",
                   help="use the raw dot product instead of normalized outputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-retrieval", help="ranked metrics for a run against qrels")
    p.add_argument("--run", required=True, help="TREC or JSONL run file")
    p.add_argument("--qrels", required=True, help="TREC or JSONL qrels file")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--model", default="run")
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--out", help="optional metrics CSV")
    p.set_defaults(func=_cmd_eval_retrieval)

    p = sub.add_parser("eval-heldout", help="held-out intra/inter PR analysis")
    p.add_argument("--base", required=True)
    p.add_argument("--adapter", help="adapter checkpoint; omitted = raw base")
    p.add_argument("--collection", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--tag", default="base", help="model name used in output files")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_eval_heldout)

    p = sub.add_parser("eval-dist", help="symmetric KL between similarity distributions")
    p.add_argument("--base", required=True)
    p.add_argument("--collection", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--adapters", required=True, help="comma-separated name=path specs")
    p.add_argument("--bins", type=int, default=evalkit.HISTOGRAM_BINS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval_dist)

    p = sub.add_parser("pipeline", help="run pairgen -> label -> train -> eval end to end")
    p.add_argument("--config", help="flat key = value file; flags win")
    p.add_argument("--groups", type=int)
    p.add_argument("--train", type=int, default=8)
    p.add_argument("--heldout", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--experts", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--collection")
    p.add_argument("--split")
    p.add_argument("--base")
    p.add_argument("--expert-files", dest="expert_files",
                   help="comma-separated expert matrix paths")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--optimizer", choices=trainer.OPTIMIZERS, default="adam")
    p.add_argument("--targets", default=",".join(trainer.TARGET_KINDS))
    p.add_argument("--evals", default=",".join(DEFAULT_EVALS))
    p.add_argument("--out", required=config_defaults is None or "out" not in config_defaults)
    if config_defaults:
        typed = {}
        for key, value in config_defaults.items():
            if key not in _PIPELINE_CONFIG_TYPES:
                raise ValueError(f"unknown config key {key!r}")
            typed[key] = _PIPELINE_CONFIG_TYPES[key](value)
        p.set_defaults(**typed)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # Pre-scan for a pipeline config file so its values become parser
    # defaults; explicitly passed flags still take precedence.
    config_defaults = None
    if argv and argv[0] == "pipeline" and "--config" in argv:
        if argv.index("--config") + 1 >= len(argv):
            print("error: --config needs a path", file=sys.stderr)
            return 2
        config_path = argv[argv.index("--config") + 1]
        try:
            config_defaults = _read_config_file(config_path)
        except FileNotFoundError:
            print(f"error: missing config file: {config_path}", file=sys.stderr)
            return 2
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
    try:
        parser = _build_parser(config_defaults)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        name = e.filename if e.filename else str(e)
        print(f"error: missing file: {name}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except RuntimeError as e:
        # Stage failures: the message names the stage; the cause picks the code.
        print(f"error: {e}", file=sys.stderr)
        return 2 if isinstance(e.__cause__, OSError) else 1
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
