"""End-to-end experiment runs: ingest, negotiate, train, emit metrics and manifest."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, codec
from .config import RunConfig
from .data import ingest_csv
from .federation import (
    DPParams,
    FederationConfig,
    RoundMetrics,
    init_rng,
    run_federation,
    split_rng,
    training_rng,
)
from .ml_core import MlpModel, evaluate, train, train_test_split
from .privacy import adjacent_divergence_report
from .quantization import QuantizationScheme
from .secret_sharing import Transport, make_parties, run_negotiation

log = logging.getLogger(__name__)

METRICS_HEADER = ("round", "mode", "accuracy", "f1", "wall_ms")


@dataclass
class RunOutcome:
    metrics: list[RoundMetrics]
    manifest: dict
    scheme: QuantizationScheme | None = None
    transcript: list[dict] = field(default_factory=list)
    privacy: dict | None = None


def negotiate_for_model(
    model: MlpModel, config: RunConfig, seed: int
) -> tuple[QuantizationScheme, list[dict]]:
    """Negotiate a scheme whose range covers every node's initial parameters.

    Each node declares the range of its starting parameters, widened to at
    least ``config.weight_range``.
    """
    params = model.flat()
    lo = min(float(params.min()), config.weight_range[0])
    hi = max(float(params.max()), config.weight_range[1])
    policy = config.level_policy
    max_level = policy.max_level or config.max_level
    t = config.threshold if config.threshold is not None else (config.nodes - 1) // 2
    transport = Transport()
    parties = make_parties([(lo, hi)] * config.nodes, seed=seed)
    scheme = run_negotiation(parties, t, max_level=max_level, target_mean=_target_mean(config, max_level), transport=transport)
    if policy.p is not None:
        scheme = QuantizationScheme(scheme.c_min, scheme.c_max, scheme.delta, scheme.max_level, policy.p, scheme.salt)
    return scheme, transport.transcript


def _target_mean(config: RunConfig, max_level: int) -> float:
    # a fixed level only needs some valid bias; the sampled policy uses the target
    return config.target_mean if config.target_mean < max_level else max_level / 2.0


def run(config: RunConfig) -> RunOutcome:
    config.validate()
    t_start = time.perf_counter()
    dataset, norm = ingest_csv(config.dataset, config.label, config.positive_label)
    train_set, test_set = train_test_split(dataset, config.test_fraction, split_rng(config.seed))
    model = MlpModel.initialize(dataset.dim, init_rng(config.seed))
    scheme, transcript, clamped, sigma2 = None, [], 0, None

    if config.mode == "monolithic":
        t0 = time.perf_counter()
        train(model, train_set, config.epochs, config.eta, training_rng(config.seed, 0))
        acc, f1 = evaluate(model, test_set)
        metrics = [RoundMetrics(1, "monolithic", acc, f1, (time.perf_counter() - t0) * 1000.0)]
    else:
        if config.mode == "fedavg_hc":
            scheme, transcript = negotiate_for_model(model, config, config.seed)
        dp = DPParams(**asdict(config.dp)) if config.mode == "fedavg_dp" else None
        fed = FederationConfig(
            nodes=config.nodes,
            rounds=config.rounds,
            epochs_per_round=config.epochs_per_round,
            mode=config.mode,
            fraction=config.fraction,
            eta=config.eta,
            resample=config.resample,
            hc_level=config.level_policy.fixed,
            dp=dp,
            workers=config.workers,
        )
        result = run_federation(fed, train_set, test_set, seed=config.seed, scheme=scheme, model=model)
        metrics, model, clamped, sigma2 = result.metrics, result.model, result.clamped, result.sigma2

    privacy = None
    if config.privacy_report:
        report_scheme = scheme or QuantizationScheme.from_range(*config.weight_range)
        values = np.clip(model.flat(), report_scheme.c_min, report_scheme.c_max)
        level = config.level_policy.fixed or min(8, report_scheme.max_level)
        privacy = adjacent_divergence_report(values, 0, report_scheme.c_max, report_scheme, level=level)

    best = max(metrics, key=lambda m: (m.f1, -m.round))
    manifest = {
        "package_version": __version__,
        "python": platform.python_version(),
        "config": config.to_dict(),
        "seeds": {"run": config.seed, "streams": ["split", "init", "train", "partition", "levels", "noise"]},
        "digest": codec.DIGEST_NAME,
        "scheme": None
        if scheme is None
        else {
            "fingerprint": scheme.fingerprint(),
            "c_min": scheme.c_min,
            "c_max": scheme.c_max,
            "delta": scheme.delta,
            "max_level": scheme.max_level,
            "selection_p": scheme.selection_p,
        },
        "data": {
            "rows": len(dataset),
            "features": dataset.dim,
            "train_rows": len(train_set),
            "test_rows": len(test_set),
            "test_fraction": config.test_fraction,
            "normalization": norm.to_dict(),
        },
        "results": {
            "final": {"round": metrics[-1].round, "accuracy": metrics[-1].accuracy, "f1": metrics[-1].f1},
            "best": {"round": best.round, "accuracy": best.accuracy, "f1": best.f1},
            "clamped_parameters": clamped,
            "dp_sigma2": sigma2,
        },
    }
    if config.timing:
        manifest["wall_seconds"] = time.perf_counter() - t_start
    return RunOutcome(metrics, manifest, scheme, transcript, privacy)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_metrics(metrics: list[RoundMetrics], path: Path, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in metrics:
            wall = f"{m.wall_ms:.3f}" if timing else "0"
            writer.writerow([m.round, m.mode, repr(m.accuracy), repr(m.f1), wall])


def write_outputs(outcome: RunOutcome, out_dir: str | Path, timing: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(outcome.metrics, out / "metrics.csv", timing)
    dump_json(outcome.manifest, out / "manifest.json")
    if outcome.transcript:
        write_transcript(outcome.transcript, out / "transcript.jsonl")
    if outcome.privacy is not None:
        dump_json(outcome.privacy, out / "privacy.json")
    return out


def write_transcript(records: list[dict], path: Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
