#!/usr/bin/env python3
"""
Punto de entrada de línea de comandos de CrossPulse.

Subcomandos: gen, preprocess, pairs, features, train, eval, sweep, simulate.
Cada ejecución escribe ``<out>/manifest.json`` con el comando, la
configuración efectiva, las semillas, los hashes de las entradas y la lista de
salidas.

Códigos de salida: 0 éxito, 1 error de validación, 2 error de E/S.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

from app.config.pipeline import RunConfig
from app.core.dataset import build_pairs
from app.core.evaluation import render_table, write_table_csv
from app.core.exceptions import DataIOError, InvalidParamsError, ValidationFailure
from app.core.gbdt import load_model, save_model
from app.core.quality import pass_rate_by_device
from app.core.synth import gen_corpus
from app.models.manifest import RunManifest
from app.models.session import AdversaryMode
from app.services.pipeline_service import SWEEP_KINDS, PipelineService, evaluate_fixed_model
from app.services.session_service import SessionService
from app.utils.helpers import configure_logging, dump_json
from app.utils.io import (
    hash_inputs,
    read_feature_csv,
    read_pair_manifest,
    read_processed_dir,
    read_trace_dir,
    write_feature_csv,
    write_pair_manifest,
    write_processed_dir,
    write_run_manifest,
    write_sessions_ndjson,
    write_trace_dir,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _devices(text: str):
    return int(text) if text.isdigit() else [v.strip() for v in text.split(",") if v.strip()]


def _names(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# ==================== ARGUMENTOS ====================

def build_parser() -> argparse.ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON overlay for RunConfig")
    common.add_argument("--seed", type=int, help="global seed (overrides the config seeds)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")
    common.add_argument("--workers", type=int, help="worker processes for preprocessing and features")

    parser = argparse.ArgumentParser(prog="crosspulse", description="Cross-device PPG authentication pipeline",
                                     formatter_class=formatter)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], formatter_class=formatter, help="generate a synthetic corpus")
    gen.add_argument("--subjects", type=int, default=20)
    gen.add_argument("--devices", type=_devices, default=2, help="device count (2-5) or comma-separated names")
    gen.add_argument("--duration", type=float, default=600.0, help="seconds per session")
    gen.add_argument("--postures", type=_names, default=["sitting"], help="comma-separated postures")
    gen.add_argument("--out", type=Path, required=True)

    pre = sub.add_parser("preprocess", parents=[common], formatter_class=formatter,
                         help="front end: resample, filter, MA triage")
    pre.add_argument("--traces", type=Path, required=True, help="directory of trace CSV + meta JSON")
    pre.add_argument("--out", type=Path, required=True)

    pairs = sub.add_parser("pairs", parents=[common], formatter_class=formatter, help="build labelled pairs")
    pairs.add_argument("--processed", type=Path, required=True)
    pairs.add_argument("--split", choices=["train", "test"], default="test", help="window hop to use")
    pairs.add_argument("--out", type=Path, required=True)

    feats = sub.add_parser("features", parents=[common], formatter_class=formatter, help="extract pair features")
    feats.add_argument("--processed", type=Path, required=True)
    feats.add_argument("--pairs", type=Path, required=True, help="pair manifest JSON")
    feats.add_argument("--out", type=Path, required=True)

    train = sub.add_parser("train", parents=[common], formatter_class=formatter, help="train the GBDT verifier")
    source = train.add_mutually_exclusive_group(required=True)
    source.add_argument("--features", type=Path, help="feature CSV")
    source.add_argument("--processed", type=Path, help="processed-trace directory")
    train.add_argument("--out", type=Path, required=True)

    ev = sub.add_parser("eval", parents=[common], formatter_class=formatter,
                        help="evaluate a model (--model/--features) or run LOSO (--corpus)")
    ev.add_argument("--model", type=Path)
    ev.add_argument("--features", type=Path)
    ev.add_argument("--corpus", type=Path, help="trace or processed-trace directory")
    ev.add_argument("--threshold-mode", choices=["oracle", "calibrated"], default=None,
                    help="LOSO threshold mode (default from config: oracle)")
    ev.add_argument("--out", type=Path, required=True)

    sw = sub.add_parser("sweep", parents=[common], formatter_class=formatter, help="evaluation sweeps")
    sw.add_argument("--kind", choices=SWEEP_KINDS, required=True)
    sw.add_argument("--corpus", type=Path, required=True, help="trace or processed-trace directory")
    sw.add_argument("--offsets", type=_floats, default=None, help="replay offsets in s (default 0,5,15,30,60)")
    sw.add_argument("--durations", type=_floats, default=None, help="window durations in s (default 3,4,5,6)")
    sw.add_argument("--emit-plot-data", action="store_true", help="also write plot-ready CSV series")
    sw.add_argument("--out", type=Path, required=True)

    sim = sub.add_parser("simulate", parents=[common], formatter_class=formatter, help="streaming session harness")
    sim.add_argument("--corpus", type=Path, required=True, help="trace or processed-trace directory")
    sim.add_argument("--model", type=Path, required=True)
    sim.add_argument("--latency-ms", type=float, default=None, help="fixed transport delay (default 0)")
    sim.add_argument("--jitter-ms", type=float, default=None, help="uniform jitter half-width (default 0)")
    sim.add_argument("--drop-prob", type=float, default=None, help="chunk drop probability (default 0)")
    sim.add_argument("--adversary", choices=[m.value for m in AdversaryMode], default="none")
    sim.add_argument("--offset-s", type=float, default=60.0, help="replay offset")
    sim.add_argument("--subjects", type=_names, default=None, help="comma-separated subject ids")
    sim.add_argument("--k-of-n", type=_floats, default=None, help="k,n window aggregation")
    sim.add_argument("--out", type=Path, required=True)
    return parser


# ==================== CONFIGURACIÓN ====================

def load_config(args: argparse.Namespace) -> RunConfig:
    """Overlay JSON más flags explícitos; el resultado se valida de nuevo"""
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    data = config.model_dump()
    if args.seed is not None:
        data["seed"] = args.seed
        data["pairs"]["rng_seed"] = args.seed
        data["latency"]["seed"] = args.seed
    if args.workers is not None:
        data["workers"] = args.workers
    if args.command == "simulate":
        for flag, key in (("latency_ms", "fixed_delay_ms"), ("jitter_ms", "jitter_ms"), ("drop_prob", "drop_prob")):
            if getattr(args, flag) is not None:
                data["latency"][key] = getattr(args, flag)
        if args.k_of_n is not None:
            data["evaluation"]["k_of_n"] = [int(v) for v in args.k_of_n]
    if args.command == "eval" and args.threshold_mode is not None:
        data["evaluation"]["threshold_mode"] = args.threshold_mode
    return RunConfig.model_validate(data)


def _log_level(args: argparse.Namespace) -> int:
    if args.quiet:
        return logging.WARNING
    return logging.DEBUG if args.verbose else logging.INFO


def _seeds(config: RunConfig) -> Dict[str, int]:
    return {"seed": config.seed, "pairs": config.pairs.rng_seed, "latency": config.latency.seed}


def _load_processed(directory: Path, service: PipelineService) -> None:
    """Acepta un directorio de trazas procesadas (*.npz) o de trazas CSV crudas"""
    if not directory.is_dir():
        raise FileNotFoundError(f"Corpus directory not found: {directory}")
    if any(directory.glob("*.npz")):
        service.use_processed(read_processed_dir(directory))
    else:
        service.preprocess(read_trace_dir(directory))


def _finish(args, config: RunConfig, argv: Sequence[str], inputs: Sequence[Path], outputs: Sequence[Path],
            extra: Optional[dict] = None) -> int:
    manifest = RunManifest(
        command=args.command,
        argv=list(argv),
        config=config.model_dump(mode="json"),
        seeds=_seeds(config),
        inputs=hash_inputs(inputs),
        outputs=sorted(Path(p).relative_to(args.out).as_posix() for p in outputs),
        extra=extra or {},
    )
    write_run_manifest(manifest, args.out)
    logger.info(f"{args.command} finished: {len(outputs)} outputs in {args.out}")
    return EXIT_OK


# ==================== SUBCOMANDOS ====================

def cmd_gen(args, config: RunConfig, argv) -> int:
    corpus = gen_corpus(args.subjects, args.devices, args.duration, config.seed, tuple(args.postures))
    outputs = write_trace_dir(corpus.traces, args.out)
    outputs.append(dump_json(corpus.manifest(), args.out / "corpus.json"))
    return _finish(args, config, argv, [], outputs, {"n_traces": len(corpus.traces)})


def cmd_preprocess(args, config: RunConfig, argv) -> int:
    service = PipelineService(config)
    processed = service.preprocess(read_trace_dir(args.traces))
    outputs = write_processed_dir(processed, args.out)
    rates = pass_rate_by_device(w for p in processed for w in p.windows)
    outputs.append(dump_json({"pass_rate_by_device": rates}, args.out / "quality_summary.json"))
    print(render_table([{"device": d, "pass_rate": r} for d, r in sorted(rates.items())]))
    return _finish(args, config, argv, [args.traces], outputs)


def cmd_pairs(args, config: RunConfig, argv) -> int:
    service = PipelineService(config)
    service.use_processed(read_processed_dir(args.processed))
    corpus = service.train_corpus() if args.split == "train" else service.test_corpus()
    pre = config.preprocess
    hop = pre.train_hop_s if args.split == "train" else pre.test_hop_s
    pairset = build_pairs(corpus, config.pairs)
    pairset.provenance.update({"window_s": pre.window_feat_s, "hop_s": hop, "split": args.split})
    outputs = [write_pair_manifest(pairset, args.out / "pairs.json")]
    return _finish(args, config, argv, [args.processed], outputs,
                   {"n_positive": pairset.n_positive, "n_negative": pairset.n_negative})


def cmd_features(args, config: RunConfig, argv) -> int:
    service = PipelineService(config)
    service.use_processed(read_processed_dir(args.processed))
    pairset = read_pair_manifest(args.pairs)
    window = float(pairset.provenance.get("window_s", config.preprocess.window_feat_s))
    hop = float(pairset.provenance.get("hop_s", config.preprocess.test_hop_s))
    table = service.features(pairset.pairs, service.corpus(window, hop))
    outputs = [write_feature_csv(table, args.out / "features.csv")]
    discarded = [{"a": list(p.a.as_tuple()), "b": list(p.b.as_tuple()), "reason": r} for p, r in table.discarded]
    outputs.append(dump_json(discarded, args.out / "discarded.json"))
    return _finish(args, config, argv, [args.processed, args.pairs], outputs,
                   {"n_rows": len(table), "n_discarded": len(discarded)})


def cmd_train(args, config: RunConfig, argv) -> int:
    service = PipelineService(config)
    if args.features is not None:
        table = read_feature_csv(args.features)
        model = service.train_model(table)
        inputs = [args.features]
    else:
        service.use_processed(read_processed_dir(args.processed))
        model, table = service.train_final()
        inputs = [args.processed]
    outputs = [save_model(model, args.out / "model.json")]
    return _finish(args, config, argv, inputs, outputs,
                   {"n_train_pairs": len(table), "threshold": model.threshold})


def cmd_eval(args, config: RunConfig, argv) -> int:
    if args.corpus is not None:
        service = PipelineService(config)
        _load_processed(args.corpus, service)
        report = service.evaluate().report
        inputs = [args.corpus]
    else:
        if args.model is None or args.features is None:
            raise InvalidParamsError("eval needs --corpus, or both --model and --features")
        table = read_feature_csv(args.features)
        model = load_model(args.model, expected_features=table.feature_names)
        report = evaluate_fixed_model(model, table)
        inputs = [args.model, args.features]

    rows = [{"subject": s, **m.model_dump()} for s, m in sorted(report.per_subject.items())]
    rows.append({"subject": "weighted", **report.weighted.model_dump()})
    text = render_table(rows)
    print(text)
    outputs = [dump_json(report.model_dump(mode="json"), args.out / "report.json")]
    (args.out / "report.txt").write_text(text + "\n", encoding="utf-8")
    outputs.append(args.out / "report.txt")
    return _finish(args, config, argv, inputs, outputs, {"weighted_bac": report.weighted.bac})


def cmd_sweep(args, config: RunConfig, argv) -> int:
    service = PipelineService(config)
    _load_processed(args.corpus, service)
    rows = service.sweep(args.kind, offsets=args.offsets, durations=args.durations)
    print(render_table(rows))
    outputs = [write_table_csv(rows, args.out / f"sweep_{args.kind}.csv")]
    if args.emit_plot_data:
        key = {"replay": "offset_s", "duration": "duration_s"}.get(args.kind)
        series = [{"x": r[key], "bac": r["bac"]} for r in rows] if key else rows
        outputs.append(write_table_csv(series, args.out / f"plot_{args.kind}.csv"))
    return _finish(args, config, argv, [args.corpus], outputs, {"n_rows": len(rows)})


def cmd_simulate(args, config: RunConfig, argv) -> int:
    model = load_model(args.model)
    pipeline = PipelineService(config)
    _load_processed(args.corpus, pipeline)
    sessions = SessionService(model, config)
    decisions = sessions.simulate(pipeline.processed, args.adversary, args.offset_s, args.subjects)
    summary = sessions.summarize(decisions)
    outputs = [write_sessions_ndjson(decisions, args.out / "sessions.ndjson")]
    content = {"summary": summary.model_dump(mode="json")}
    aggregated = sessions.aggregate(decisions)
    if aggregated is not None:
        content["k_of_n"] = [a.model_dump(mode="json") for a in aggregated]
    outputs.append(dump_json(content, args.out / "summary.json"))
    print(render_table([summary.model_dump(mode="json")]))
    return _finish(args, config, argv, [args.corpus, args.model], outputs)


COMMANDS: Dict[str, Callable] = {
    "gen": cmd_gen,
    "preprocess": cmd_preprocess,
    "pairs": cmd_pairs,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
}


# ==================== ENTRADA ====================

def run(argv: Optional[Sequence[str]] = None) -> int:
    """Ejecuta un subcomando y devuelve el código de salida"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help sale con 0; cualquier error de uso es de validación
        return EXIT_OK if not exc.code else EXIT_VALIDATION

    configure_logging(_log_level(args))
    try:
        config = load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, config, argv)
    except (ValidationFailure, ValidationError) as exc:
        logger.error(f"{args.command} failed validation: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataIOError, OSError) as exc:
        path = getattr(exc, "filename", None)
        message = f"{exc}" if path is None or str(path) in str(exc) else f"{path}: {exc}"
        logger.error(f"{args.command} failed on I/O: {message}")
        print(f"error: {message}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
