"""Metrics, significance testing, timing and experiment sweeps."""

import csv
import json
import logging
import math
import time
import traceback
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import generate_eval_set, generate_training_set
from .decoders import ModelConfig, build_lookup_decoder, canonical_architecture
from .decoders.config import tabulated_batch_size
from .decoders.estimator import TrivialDecoder
from .exceptions import InvalidParameterError
from .lattice import build_code
from .noise import features_batch
from .training import TrainConfig, confusion_from_predictions, rates_from_confusion, train

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "architecture", "distance", "p", "seed", "overall_accuracy", "ecr",
    "mean_inference_ms", "train_wall_s", "layers", "error",
)


@dataclass
class Metrics:
    confusion: np.ndarray
    mean_inference_ms: Optional[float] = None

    @property
    def n_data_qubits_total(self):
        return int(self.confusion.sum())

    @property
    def n_erroneous_qubits(self):
        return int(self.confusion[1:].sum())

    @property
    def overall_accuracy(self):
        return rates_from_confusion(self.confusion)[0]

    @property
    def error_correction_rate(self):
        """Accuracy on qubits whose true label is not NoError; None when there are none."""
        return rates_from_confusion(self.confusion)[1]

    def merge(self, other):
        return Metrics(self.confusion + other.confusion)

    def to_dict(self):
        return {
            "overall_accuracy": self.overall_accuracy,
            "error_correction_rate": self.error_correction_rate,
            "n_data_qubits_total": self.n_data_qubits_total,
            "n_erroneous_qubits": self.n_erroneous_qubits,
            "mean_inference_ms": self.mean_inference_ms,
            "confusion": self.confusion.tolist(),
        }


def evaluate(model, code, eval_set):
    """Accuracy, error-correction rate and confusion counts of ``model`` on ``eval_set``."""
    if eval_set.distance != code.distance:
        raise InvalidParameterError(f"dataset has d={eval_set.distance}, code has d={code.distance}")
    if getattr(model, "distance", code.distance) != code.distance:
        raise InvalidParameterError(f"model built for d={model.distance}, code has d={code.distance}")
    if len(eval_set) == 0:
        return Metrics(np.zeros((4, 4), np.int64))
    pred = model.predict(eval_set.syndromes)
    return Metrics(confusion_from_predictions(pred, eval_set.labels))


# --- Student t distribution -------------------------------------------------


def _betacf(a, b, x, eps=1e-15, max_iter=10_000):
    """Continued fraction for the regularized incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_beta(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    return regularized_beta(df / 2.0, 0.5, df / (df + t * t))


def welch_t_test(a, b):
    """Two-sided Welch t-test; returns ``(t, p_value)``."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise InvalidParameterError("welch_t_test needs at least two values per sample")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidParameterError("welch_t_test needs finite values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    if va + vb == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(t), float(student_t_two_sided(float(t), float(df)))


# --- timing -----------------------------------------------------------------


@dataclass
class Timing:
    mean_ms: float
    std_ms: float
    raw_ms: np.ndarray = field(repr=False)

    @property
    def min_ms(self):
        return float(self.raw_ms.min())

    @property
    def max_ms(self):
        return float(self.raw_ms.max())


def time_inference(model, code, samples, repetitions=100, warmup=10):
    """Wall-clock milliseconds per single-sample forward pass (batch size 1)."""
    if repetitions < 100:
        raise InvalidParameterError(f"repetitions must be >= 100, got {repetitions}")
    if hasattr(samples, "syndromes"):
        feats = features_batch(code, samples.syndromes[: max(repetitions, 1)])
    else:
        feats = np.asarray(samples, np.float64)
        if feats.ndim == 2:
            feats = feats[None]
    if len(feats) == 0:
        raise InvalidParameterError("time_inference needs at least one sample")
    for i in range(warmup):
        model.forward(feats[i % len(feats)])
    raw = np.empty(repetitions)
    for i in range(repetitions):
        x = feats[i % len(feats)]
        start = time.perf_counter()
        model.forward(x)
        raw[i] = (time.perf_counter() - start) * 1e3
    return Timing(float(raw.mean()), float(raw.std(ddof=1)), raw)


# --- sweeps -----------------------------------------------------------------


@dataclass
class SweepConfig:
    architectures: tuple = ("CNN", "UNet", "GCN", "GCNII")
    distances: tuple = (3,)
    probs: tuple = (0.01,)
    seeds: int = 1
    depths: Optional[tuple] = None
    pool_size: int = 100_000
    val_size: int = 100_000
    eval_size: int = 100_000
    epochs: int = 200
    lr: float = 0.01
    batch_size: Optional[int] = None
    val_interval: int = 5
    patience: Optional[int] = None
    data_seed: int = 2024
    timing_repetitions: int = 100
    jobs: int = 1

    def __post_init__(self):
        self.architectures = tuple(canonical_architecture(a) for a in self.architectures)
        if self.seeds < 1:
            raise InvalidParameterError("seeds must be >= 1")
        if not self.architectures or not self.distances or not self.probs:
            raise InvalidParameterError("sweep grid must be non-empty")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def data_seeds(base, distance, p):
    """Three independent seeds (train, validation, test) for one (d, p) cell."""
    ss = np.random.SeedSequence(int(base), spawn_key=(int(distance), int(round(p * 1e9))))
    return [int(s) for s in ss.generate_state(3, np.uint64) >> np.uint64(1)]


_DATA_CACHE = {}


def cell_datasets(cfg, distance, p):
    key = (cfg.data_seed, distance, p, cfg.pool_size, cfg.val_size, cfg.eval_size)
    if key not in _DATA_CACHE:
        code = build_code(distance)
        s_train, s_val, s_test = data_seeds(cfg.data_seed, distance, p)
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = (
            generate_training_set(code, p, cfg.pool_size, s_train),
            generate_eval_set(code, p, cfg.val_size, s_val),
            generate_eval_set(code, p, cfg.eval_size, s_test),
        )
    return _DATA_CACHE[key]


def fit_model(architecture, train_set, val_set, seed, cfg, layers=None):
    arch = canonical_architecture(architecture)
    if arch == "Lookup":
        return build_lookup_decoder(train_set)
    if arch == "TrivialNoError":
        return TrivialDecoder(distance=train_set.distance).fit()
    config = ModelConfig.for_setting(arch, train_set.distance, train_set.error_prob, layers=layers, seed=seed)
    batch = cfg.batch_size or tabulated_batch_size(train_set.distance, train_set.error_prob)
    tc = TrainConfig(cfg.epochs, cfg.lr, batch, cfg.patience, cfg.val_interval, seed)
    return train(config, tc, train_set, val_set)


def run_cell(cfg, architecture, distance, p, seed, layers=None):
    row = dict.fromkeys(CSV_COLUMNS)
    row.update(architecture=architecture, distance=distance, p=p, seed=seed, layers=layers)
    try:
        code = build_code(distance)
        train_set, val_set, test_set = cell_datasets(cfg, distance, p)
        start = time.perf_counter()
        model = fit_model(architecture, train_set, val_set, seed, cfg, layers)
        row["train_wall_s"] = time.perf_counter() - start
        if hasattr(model, "config_"):
            row["layers"] = model.config_.layers if layers is None else layers
        metrics = evaluate(model, code, test_set)
        row["overall_accuracy"] = metrics.overall_accuracy
        row["ecr"] = metrics.error_correction_rate
        row["mean_inference_ms"] = time_inference(model, code, test_set, cfg.timing_repetitions).mean_ms
    except Exception as exc:  # recorded in the report; the sweep continues
        log.warning("cell %s d=%s p=%s seed=%s failed: %s", architecture, distance, p, seed, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.debug(traceback.format_exc())
    return row


def _cells(cfg):
    depths = cfg.depths or (None,)
    for d in cfg.distances:
        for p in cfg.probs:
            for arch in cfg.architectures:
                for layers in depths:
                    for seed in range(cfg.seeds):
                        yield arch, d, p, seed, layers


def run_sweep(cfg):
    """Train and evaluate every grid cell for every seed; returns a :class:`Report`."""
    cells = list(_cells(cfg))
    if cfg.jobs > 1:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=cfg.jobs)(delayed(run_cell)(cfg, *c) for c in cells)
    else:
        rows = [run_cell(cfg, *c) for c in cells]
    return Report(cfg, rows)


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "values": list(values)}
    arr = np.asarray(vals, np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
        "values": list(values),
    }


@dataclass
class Report:
    config: SweepConfig
    rows: list

    def cell_keys(self):
        seen = []
        for r in self.rows:
            key = (r["architecture"], r["distance"], r["p"], r["layers"] if self.config.depths else None)
            if key not in seen:
                seen.append(key)
        return seen

    def cell_rows(self, key):
        arch, d, p, layers = key
        return [
            r for r in self.rows
            if (r["architecture"], r["distance"], r["p"]) == (arch, d, p)
            and (not self.config.depths or r["layers"] == layers)
        ]

    def summary(self):
        cells = []
        for key in self.cell_keys():
            arch, d, p, layers = key
            rows = self.cell_rows(key)
            cell = {
                "architecture": arch, "distance": d, "p": p,
                "layers": layers if layers is not None else (rows[0]["layers"] if rows else None),
                "n_seeds": len(rows),
                "overall_accuracy": _stats([r["overall_accuracy"] for r in rows]),
                "ecr": _stats([r["ecr"] for r in rows]),
                "mean_inference_ms": _stats([r["mean_inference_ms"] for r in rows]),
                "train_wall_s": _stats([r["train_wall_s"] for r in rows]),
                "errors": [r["error"] for r in rows if r["error"]],
                "ttest_vs_cnn": None,
            }
            if arch != "CNN" and self.config.seeds >= 2:
                cnn = [r for r in self.rows if (r["architecture"], r["distance"], r["p"]) == ("CNN", d, p)]
                a = [r["ecr"] for r in rows if r["ecr"] is not None]
                b = [r["ecr"] for r in cnn if r["ecr"] is not None]
                if len(a) >= 2 and len(b) >= 2:
                    t, pv = welch_t_test(a, b)
                    cell["ttest_vs_cnn"] = {
                        "metric": "ecr", "t": _finite_or_str(t), "p_value": pv, "significant": bool(pv < 0.05),
                    }
            cells.append(cell)
        return {"schema_version": 1, "config": self.config.to_dict(), "cells": cells}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: ("" if r[k] is None else r[k]) for k in CSV_COLUMNS})

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _finite_or_str(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


# JSON summary schema (draft 2020-12); validated in the test suite.
_STATS_SCHEMA = {
    "type": "object",
    "required": ["mean", "std", "values"],
    "properties": {
        "mean": {"type": ["number", "null"]},
        "std": {"type": ["number", "null"]},
        "values": {"type": "array", "items": {"type": ["number", "null"]}},
    },
}
SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "config", "cells"],
    "properties": {
        "schema_version": {"const": 1},
        "config": {"type": "object"},
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "architecture", "distance", "p", "layers", "n_seeds", "overall_accuracy", "ecr",
                    "mean_inference_ms", "train_wall_s", "errors", "ttest_vs_cnn",
                ],
                "properties": {
                    "architecture": {"type": "string"},
                    "distance": {"type": "integer"},
                    "p": {"type": "number"},
                    "layers": {"type": ["integer", "null"]},
                    "n_seeds": {"type": "integer"},
                    "overall_accuracy": _STATS_SCHEMA,
                    "ecr": _STATS_SCHEMA,
                    "mean_inference_ms": _STATS_SCHEMA,
                    "train_wall_s": _STATS_SCHEMA,
                    "errors": {"type": "array", "items": {"type": "string"}},
                    "ttest_vs_cnn": {
                        "oneOf": [
                            {"type": "null"},
                            {
                                "type": "object",
                                "required": ["metric", "t", "p_value", "significant"],
                                "properties": {
                                    "metric": {"const": "ecr"},
                                    "t": {"type": ["number", "string"]},
                                    "p_value": {"type": "number"},
                                    "significant": {"type": "boolean"},
                                },
                            },
                        ]
                    },
                },
            },
        },
    },
}

