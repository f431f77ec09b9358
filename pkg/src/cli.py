"""
Command-line interface module.
Builds the argument parser, resolves run configurations and dispatches subcommands.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from src import __version__
from src.config import Config, SyntheticSpec, TrainConfig, env_seed
from src.diagnostics import (
    codes_matrix,
    collision_stats,
    compare_bias,
    density_table,
    pca2d,
    summarize_usage,
    usage_table,
    utilization_report,
)
from src.embedding_store import EmbeddingSet, EmbeddingStore, SyntheticFactory
from src.exceptions import ConfigError, DataError, NuquantError
from src.experiments import DEFAULT_TRANSFORMS, run_ablation
from src.neighbors import NeighborIndex
from src.quantizer import ModelStore, quantize_set, reconstruct, train, transformed
from src.sid_io import read_sids, write_sids
from utils.helpers import read_json, resolve_seed, sibling_path, write_json

logger = logging.getLogger(__name__)


class RunManifest(BaseModel):
    """Record of one CLI run, written next to its primary output."""

    subcommand: str
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    results: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    wall_clock_seconds: float = 0.0
    version: str = __version__


class NuquantArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors raise ConfigError (exit status 1)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


class Console:
    """Messages for the terminal; diagnostics go to the log."""

    @staticmethod
    def show_error_message(message: str) -> None:
        print(f"error: {message}", file=sys.stderr)

    @staticmethod
    def show_result(message: str) -> None:
        print(message)


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(format=Config.LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--levels", dest="levels", type=int, help="number of codebooks K")
    parser.add_argument("--codes", dest="codebook_size", type=int, help="codewords per codebook N")
    parser.add_argument("--dim", dest="latent_dim", type=int, help="latent dimension of the autoencoder")
    parser.add_argument("--hidden", dest="hidden_dims", type=int, nargs=2, help="autoencoder hidden widths")
    parser.add_argument("--transform", dest="transform", choices=["identity", "ks", "logistic"])
    parser.add_argument("--mu", dest="mu", type=float, help="commitment weight")
    parser.add_argument("--lambda-nuq", dest="lambda_nuq", type=float, help="weight of the consistency loss")
    parser.add_argument("--epochs", dest="epochs", type=int)
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--weight-decay", dest="weight_decay", type=float)
    parser.add_argument("--batch", dest="batch_size", type=int)
    parser.add_argument("--seed", dest="seed", type=int)
    parser.add_argument("--autoencoder", dest="use_autoencoder", action="store_true")
    parser.add_argument("--update", dest="update_rule", choices=["gradient", "ema"])
    parser.add_argument("--per-dimension", dest="per_dimension", action="store_true")
    parser.add_argument("--normalization", dest="normalization", choices=["per_vector", "global"])
    parser.add_argument("--nuq-variant", dest="nuq_variant", choices=["roundtrip", "quantized"])
    parser.add_argument("--restart-interval", dest="dead_restart_interval", type=int)
    parser.add_argument("--threads", dest="threads", type=int)
    parser.add_argument("--progress", dest="show_progress", action="store_true")


def build_parser() -> NuquantArgumentParser:
    parser = NuquantArgumentParser(
        prog="nuquant",
        description="Non-uniform residual quantization of item embeddings into Semantic IDs.",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--config", help="JSON file of defaults; flags take precedence")
    parser.add_argument("--version", action="version", version=f"nuquant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)

    synth = add("synth", "generate skewed synthetic embeddings")
    synth.add_argument("--clusters", dest="n_dense_clusters", type=int)
    synth.add_argument("--dense-mass", dest="dense_mass", type=float)
    synth.add_argument("--cluster-spread", dest="cluster_spread", type=float)
    synth.add_argument("--tail-spread", dest="tail_spread", type=float)
    synth.add_argument("--dim", dest="dim", type=int)
    synth.add_argument("--items", dest="n_items", type=int)
    synth.add_argument("--seed", dest="seed", type=int)
    synth.add_argument("--out", required=True)

    train_parser = add("train", "train a quantizer model")
    train_parser.add_argument("--in", dest="input", required=True)
    train_parser.add_argument("--out-model", dest="out_model", required=True)
    _add_training_flags(train_parser)

    quantize = add("quantize", "assign Semantic IDs with a trained model")
    quantize.add_argument("--in", dest="input", required=True)
    quantize.add_argument("--model", required=True)
    quantize.add_argument("--out", required=True)
    quantize.add_argument("--dedup", action="store_true")
    quantize.add_argument("--recon-out", dest="recon_out", help="write reconstructed embeddings here")
    quantize.add_argument("--threads", type=int)

    stats = add("stats", "codeword usage statistics of a SID file")
    stats.add_argument("--sids", required=True)
    stats.add_argument("--codes", type=int, help="codebook size N")
    stats.add_argument("--out", required=True)
    stats.add_argument("--usage-csv", dest="usage_csv", help="plot data: level,code,count")

    compare = add("compare", "usage bias between target and generated SIDs")
    compare.add_argument("--target", required=True)
    compare.add_argument("--generated", required=True)
    compare.add_argument("--codes", type=int, help="codebook size N")
    compare.add_argument("--out", required=True)

    pca = add("pca", "2-D projection with density ranks")
    pca.add_argument("--in", dest="input", required=True)
    pca.add_argument("--out", required=True)
    pca.add_argument("--model", help="project the transformed space of this model")
    pca.add_argument("--bins", type=int)
    pca.add_argument("--seed", type=int)

    neighbors = add("neighbors", "top-k collaborative neighbors")
    neighbors.add_argument("--in", dest="input", required=True)
    neighbors.add_argument("--out", required=True)
    neighbors.add_argument("--k", type=int)
    neighbors.add_argument("--backend", choices=list(NeighborIndex.BACKENDS))

    ablate = add("ablate", "compare transform families on the same data")
    ablate.add_argument("--in", dest="input", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--variants", nargs="+", choices=list(DEFAULT_TRANSFORMS))
    ablate.add_argument("--paths", choices=["rvq", "rqvae", "both"], help="quantizer paths to compare")
    _add_training_flags(ablate)
    return parser


def _config_file(args: argparse.Namespace) -> Dict[str, Any]:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    try:
        payload = read_json(path)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except ValueError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _resolve(model_cls, args: argparse.Namespace):
    """Merge flags over the config file over NUQUANT_SEED over model defaults."""
    file_values = _config_file(args)
    fields = model_cls.model_fields
    merged = {key: value for key, value in file_values.items() if key in fields}
    merged.update({key: getattr(args, key) for key in fields if hasattr(args, key)})
    if "seed" not in merged and env_seed() is not None:
        merged["seed"] = env_seed()
    return model_cls.from_dict(merged)


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    return _resolve(TrainConfig, args)


def resolve_synthetic_spec(args: argparse.Namespace) -> SyntheticSpec:
    return _resolve(SyntheticSpec, args)


def _option(args: argparse.Namespace, name: str, default: Any) -> Any:
    """Flag value, else the config file entry of the same name, else ``default``."""
    if hasattr(args, name):
        return getattr(args, name)
    return _config_file(args).get(name, default)


Handled = Tuple[RunManifest, str]


def handle_synth(args: argparse.Namespace) -> Handled:
    spec = resolve_synthetic_spec(args)
    embeddings = SyntheticFactory.gen_synthetic(spec)
    EmbeddingStore.save_embeddings(embeddings, args.out)
    manifest = RunManifest(
        subcommand="synth",
        config=spec.model_dump(mode="json"),
        outputs={"embeddings": args.out, "ids": str(EmbeddingStore.ids_path(args.out))},
        seed=spec.seed,
    )
    return manifest, args.out


def handle_train(args: argparse.Namespace) -> Handled:
    cfg = resolve_train_config(args)
    embeddings = EmbeddingStore.load_embeddings(args.input)
    model = train(embeddings, cfg)
    ModelStore.save_model(model, args.out_model)
    final = model.history[-1] if model.history else {}
    manifest = RunManifest(
        subcommand="train",
        config=cfg.model_dump(mode="json"),
        inputs={"embeddings": args.input},
        outputs={"model": args.out_model},
        results={"final_loss": final.get("loss"), "perplexity": final.get("perplexity")},
        seed=cfg.seed,
    )
    return manifest, args.out_model


def handle_quantize(args: argparse.Namespace) -> Handled:
    threads = _option(args, "threads", 1)
    if threads < 1:
        raise ConfigError(f"--threads must be positive, got {threads}")
    embeddings = EmbeddingStore.load_embeddings(args.input)
    model = ModelStore.load_model(args.model)
    dedup = bool(_option(args, "dedup", False))
    rows = quantize_set(embeddings, model, dedup=dedup, threads=threads)
    write_sids(rows, args.out)

    manifest = RunManifest(
        subcommand="quantize",
        config={"dedup": dedup, "threads": threads},
        inputs={"embeddings": args.input, "model": args.model},
        outputs={"sids": args.out},
        seed=model.config.seed,
    )
    recon_out = getattr(args, "recon_out", None)
    if recon_out is not None:
        recon = reconstruct(embeddings, model, threads=threads)
        EmbeddingStore.save_embeddings(EmbeddingSet(ids=embeddings.ids, data=recon), recon_out)
        diff = embeddings.as_float64() - recon
        mse = float((diff * diff).sum(axis=1).mean())
        manifest.outputs["reconstruction"] = recon_out
        manifest.results["recon_mse"] = mse
        Console.show_result(f"reconstruction MSE {mse:.6f}")
    return manifest, args.out


def _sids_only(path: str):
    return [sid for _, sid in read_sids(path)]


def handle_stats(args: argparse.Namespace) -> Handled:
    n_codes = _option(args, "codes", Config.CODEBOOK_SIZE)
    sids = _sids_only(args.sids)
    codes = codes_matrix(sids)
    usage = summarize_usage(codes, [n_codes] * codes.shape[1])
    report = utilization_report(usage, collision_stats(sids))
    write_json(report, args.out)
    manifest = RunManifest(
        subcommand="stats",
        config={"codes": n_codes},
        inputs={"sids": args.sids},
        outputs={"report": args.out},
        results={"perplexity": [item.perplexity for item in usage]},
    )
    usage_csv = getattr(args, "usage_csv", None)
    if usage_csv is not None:
        Path(usage_csv).parent.mkdir(parents=True, exist_ok=True)
        usage_table(usage).to_csv(usage_csv, index=False, lineterminator="\n")
        manifest.outputs["usage_csv"] = usage_csv
    return manifest, args.out


def handle_compare(args: argparse.Namespace) -> Handled:
    n_codes = _option(args, "codes", Config.CODEBOOK_SIZE)
    report = compare_bias(_sids_only(args.target), _sids_only(args.generated), n_codes)
    write_json(report.to_dict(), args.out)
    manifest = RunManifest(
        subcommand="compare",
        config={"codes": n_codes},
        inputs={"target": args.target, "generated": args.generated},
        outputs={"report": args.out},
        results=report.to_dict()["summary"],
    )
    return manifest, args.out


def handle_pca(args: argparse.Namespace) -> Handled:
    seed = resolve_seed(_option(args, "seed", None), env_seed())
    bins = _option(args, "bins", Config.DENSITY_BINS)
    embeddings = EmbeddingStore.load_embeddings(args.input)
    inputs = {"embeddings": args.input}
    matrix = embeddings.as_float64()
    model_path = getattr(args, "model", None)
    if model_path is not None:
        matrix, _ = transformed(embeddings, ModelStore.load_model(model_path))
        inputs["model"] = model_path
    result = pca2d(matrix, seed=seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    density_table(result.coords, bins).to_csv(args.out, index=False, lineterminator="\n")
    manifest = RunManifest(
        subcommand="pca",
        config={"bins": bins},
        inputs=inputs,
        outputs={"points": args.out},
        results={"explained": result.explained.tolist()},
        seed=seed,
    )
    return manifest, args.out


def handle_neighbors(args: argparse.Namespace) -> Handled:
    k = _option(args, "k", Config.NEIGHBORS_K)
    backend = _option(args, "backend", "numpy")
    embeddings = EmbeddingStore.load_embeddings(args.input)
    table = NeighborIndex(embeddings, backend).build_table(k)
    table.write_jsonl(args.out)
    manifest = RunManifest(
        subcommand="neighbors",
        config={"k": table.k, "backend": backend},
        inputs={"embeddings": args.input},
        outputs={"neighbors": args.out},
    )
    return manifest, args.out


ABLATION_PATHS = {"rvq": (False,), "rqvae": (True,), "both": (False, True)}


def handle_ablate(args: argparse.Namespace) -> Handled:
    cfg = resolve_train_config(args)
    variants = tuple(_option(args, "variants", DEFAULT_TRANSFORMS))
    paths = _option(args, "paths", "rvq")
    if paths not in ABLATION_PATHS:
        raise ConfigError(f"unknown ablation paths {paths!r}")
    embeddings = EmbeddingStore.load_embeddings(args.input)
    table, summary = run_ablation(embeddings, cfg, variants, ABLATION_PATHS[paths])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out, index=False, lineterminator="\n")
    summary_path = sibling_path(args.out, ".summary.json")
    write_json(summary, summary_path)
    manifest = RunManifest(
        subcommand="ablate",
        config={**cfg.model_dump(mode="json"), "variants": list(variants), "paths": paths},
        inputs={"embeddings": args.input},
        outputs={"table": args.out, "summary": str(summary_path)},
        results={"best_level1_perplexity": summary["best_level1_perplexity"]},
        seed=cfg.seed,
    )
    return manifest, args.out


HANDLERS: Dict[str, Callable[[argparse.Namespace], Handled]] = {
    "synth": handle_synth,
    "train": handle_train,
    "quantize": handle_quantize,
    "stats": handle_stats,
    "compare": handle_compare,
    "pca": handle_pca,
    "neighbors": handle_neighbors,
    "ablate": handle_ablate,
}


def write_manifest(manifest: RunManifest, primary: str) -> Path:
    path = sibling_path(primary, Config.MANIFEST_SUFFIX)
    write_json(manifest.model_dump(mode="json"), path)
    return path


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        Process exit status: 0 success, 1 usage or configuration error,
        2 data error, 3 numerical failure
    """
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except ConfigError as e:
        Console.show_error_message(str(e))
        return e.exit_code
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    configure_logging(getattr(args, "verbose", False))
    handler = HANDLERS[args.command]
    started = time.perf_counter()
    try:
        manifest, primary = handler(args)
        manifest.wall_clock_seconds = round(time.perf_counter() - started, 3)
        write_manifest(manifest, primary)
    except NuquantError as e:
        Console.show_error_message(str(e))
        return e.exit_code
    except OSError as e:
        Console.show_error_message(str(e))
        return DataError.exit_code
    logger.info("%s finished in %.2fs", args.command, time.perf_counter() - started)
    return 0


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(dispatch(argv))
