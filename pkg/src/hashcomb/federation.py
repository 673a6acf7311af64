"""Simulated federated training with clear, Hash-Comb and Gaussian-DP FedAvg."""

from __future__ import annotations

import enum
import logging
import math
import time
from collections import Counter
from fractions import Fraction
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import codec
from .ml_core import Dataset, MlpModel, evaluate, train
from .quantization import QuantizationScheme, clamp_level, sample_levels

log = logging.getLogger(__name__)

# Independent random streams derived from one run seed.
_SPLIT, _INIT, _TRAIN, _PARTITION, _LEVELS, _NOISE = range(6)


def rng_for(seed: int, purpose: int, node: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, node])


def split_rng(seed: int) -> np.random.Generator:
    return rng_for(seed, _SPLIT)


def init_rng(seed: int) -> np.random.Generator:
    return rng_for(seed, _INIT)


def training_rng(seed: int, node: int = 0) -> np.random.Generator:
    """Row-sampling stream of node ``node``; a monolithic run uses node 0."""
    return rng_for(seed, _TRAIN, node)


class Mode(str, enum.Enum):
    NOHC = "fedavg"
    HC = "fedavg_hc"
    DP = "fedavg_dp"


@dataclass
class DPParams:
    epsilon: float = 2.0
    delta: float = 1e-3
    clip: float | None = 2.0
    q: float = 0.008
    updates: int = 1
    sigma2: float | None = None

    def variance(self, eta: float) -> float:
        if self.sigma2 is not None:
            return self.sigma2
        return dp_sigma(self.epsilon, self.delta, self.q, self.updates, self.clip or 0.0, eta)


@dataclass
class FederationConfig:
    nodes: int = 4
    rounds: int = 40
    epochs_per_round: int = 1000
    mode: Mode = Mode.NOHC
    fraction: float = 0.25
    eta: float = 0.05
    resample: bool = True
    hc_level: int | None = 8
    dp: DPParams | None = None
    workers: int = 1

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.nodes < 1 or self.rounds < 1:
            raise ValueError("need at least one node and one round")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        if self.epochs_per_round < 1:
            raise ValueError("epochs_per_round must be >= 1")
        if self.mode is Mode.DP and self.dp is None:
            self.dp = DPParams()


@dataclass
class RoundMessage:
    node: int
    round: int
    payload: np.ndarray | bytes


@dataclass
class RoundMetrics:
    round: int
    mode: str
    accuracy: float
    f1: float
    wall_ms: float


@dataclass
class FederationResult:
    metrics: list[RoundMetrics]
    model: MlpModel
    clamped: int = 0
    sigma2: float | None = None

    def best(self) -> RoundMetrics:
        return max(self.metrics, key=lambda m: (m.f1, -m.round))


def partition(dataset: Dataset, nodes: int, fraction: float, rng: np.random.Generator) -> list[Dataset]:
    """An independent without-replacement sample per node, rows kept in order."""
    size = int(round(fraction * len(dataset)))
    if size < 1:
        raise ValueError("partition would be empty")
    return [dataset.subset(np.sort(rng.choice(len(dataset), size=size, replace=False))) for _ in range(nodes)]


def _exact_mean(total: Fraction, n: int) -> float:
    return float(total / n)


def fed_avg(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean, correctly rounded from the exact rational mean."""
    if not vectors:
        raise ValueError("no vectors to average")
    stack = np.vstack([np.asarray(v, dtype=np.float64) for v in vectors])
    if any(np.shape(v) != np.shape(vectors[0]) for v in vectors):
        raise ValueError("parameter vectors differ in length")
    n = len(vectors)
    return np.array([_exact_mean(sum(map(Fraction, col)), n) for col in stack.T.tolist()])


def fed_avg_hashed(
    messages: Sequence[Sequence[codec.HashComb]], tables: Mapping[int, codec.DigestTable]
) -> np.ndarray:
    """Average Hash-Comb submissions by counting identical finest digests.

    For each parameter, every distinct digest ``h`` with multiplicity ``c``
    contributes ``c * midpoint(h)``; the total is divided by the node count.
    """
    if not messages:
        raise ValueError("no messages to average")
    length = len(messages[0])
    if any(len(m) != length for m in messages):
        raise ValueError("messages differ in parameter count")
    n = len(messages)
    out = np.empty(length)
    for j, combs in enumerate(zip(*messages)):
        counts = Counter((hc.level, hc.finest) for hc in combs)
        total = Fraction(0)
        for (level, digest), c in counts.items():
            table = tables.get(level)
            if table is None:
                raise codec.UnknownDigestError(f"no decoding table for level {level}")
            total += c * Fraction(table.lookup(digest)[1])
        out[j] = _exact_mean(total, n)
    return out


def dp_sigma(epsilon: float, delta: float, q: float, updates: int, clip: float, eta: float) -> float:
    """Gaussian noise variance with sensitivity 4 * updates * clip * eta."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    ratio = 1.25 * q / delta
    if not ratio > 1.0:
        raise ValueError(f"1.25 q / delta = {ratio} must exceed 1")
    sensitivity = 4.0 * updates * clip * eta
    return 2.0 * sensitivity**2 * math.log(ratio) / epsilon**2


def apply_gaussian_noise(vector: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    if sigma2 < 0:
        raise ValueError("variance must be non-negative")
    vector = np.asarray(vector, dtype=np.float64)
    if sigma2 == 0:
        return vector.copy()
    return vector + rng.normal(0.0, math.sqrt(sigma2), size=vector.shape)


class _Node:
    def __init__(self, node_id: int, seed: int):
        self.node_id = node_id
        self.train_rng = training_rng(seed, node_id)
        self.level_rng = rng_for(seed, _LEVELS, node_id)
        self.noise_rng = rng_for(seed, _NOISE, node_id)


def run_federation(
    config: FederationConfig,
    train_set: Dataset,
    test_set: Dataset,
    seed: int = 0,
    scheme: QuantizationScheme | None = None,
    model: MlpModel | None = None,
) -> FederationResult:
    """Train ``config.rounds`` rounds of FedAvg and evaluate after each one."""
    if config.mode is Mode.HC:
        if scheme is None:
            raise ValueError("Hash-Comb mode needs a negotiated scheme")
        if config.hc_level is not None and not 1 <= config.hc_level <= scheme.max_level:
            raise ValueError(f"fixed level {config.hc_level} outside [1, {scheme.max_level}]")
        levels = [config.hc_level] if config.hc_level is not None else range(1, scheme.max_level + 1)
        tables = codec.build_tables(scheme, levels)
    global_model = model.copy() if model is not None else MlpModel.initialize(train_set.dim, init_rng(seed))
    n_params = global_model.n_params
    nodes = [_Node(i, seed) for i in range(config.nodes)]
    part_rng = rng_for(seed, _PARTITION)
    sigma2 = config.dp.variance(config.eta) if config.mode is Mode.DP else None
    clip = config.dp.clip if config.mode is Mode.DP else None
    fixed_parts = None if config.resample else partition(train_set, config.nodes, config.fraction, part_rng)
    clamped = 0

    def local_update(node: _Node, data: Dataset, rnd: int) -> tuple[RoundMessage, int]:
        local = train(global_model.copy(), data, config.epochs_per_round, config.eta, node.train_rng, clip=clip)
        params = local.flat()
        if config.mode is Mode.NOHC:
            return RoundMessage(node.node_id, rnd, params), 0
        if config.mode is Mode.DP:
            return RoundMessage(node.node_id, rnd, apply_gaussian_noise(params, sigma2, node.noise_rng)), 0
        inside = np.clip(params, scheme.c_min, scheme.c_max)
        n_out = int(np.count_nonzero(inside != params))
        if config.hc_level is not None:
            lv = np.full(n_params, config.hc_level)
        else:
            lv = clamp_level(sample_levels(node.level_rng, scheme, n_params))
        combs = codec.encode_many(inside, lv, scheme)
        return RoundMessage(node.node_id, rnd, codec.pack_records(combs)), n_out

    metrics: list[RoundMetrics] = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for rnd in range(1, config.rounds + 1):
            t0 = time.perf_counter()
            parts = fixed_parts or partition(train_set, config.nodes, config.fraction, part_rng)
            jobs = list(zip(nodes, parts, [rnd] * len(nodes)))
            results = list(pool.map(lambda a: local_update(*a), jobs)) if pool else [local_update(*a) for a in jobs]
            messages = [msg for msg, _ in results]
            clamped += sum(n for _, n in results)
            if config.mode is Mode.HC:
                new = fed_avg_hashed([codec.unpack_records(m.payload) for m in messages], tables)
            else:
                new = fed_avg([m.payload for m in messages])
            if new.shape != (n_params,):
                raise RuntimeError("aggregated parameter count changed")
            global_model.load_flat(new)
            acc, f1 = evaluate(global_model, test_set)
            wall = (time.perf_counter() - t0) * 1000.0
            metrics.append(RoundMetrics(rnd, config.mode.value, acc, f1, wall))
            log.info("round %d/%d %s acc=%.4f f1=%.4f", rnd, config.rounds, config.mode.value, acc, f1)
    finally:
        if pool:
            pool.shutdown()
    return FederationResult(metrics, global_model, clamped, sigma2)


def config_dict(config: FederationConfig) -> dict:
    d = asdict(config)
    d["mode"] = config.mode.value
    return d
