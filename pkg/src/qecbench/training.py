"""Supervised training with Adam and validation-based model selection."""

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .dataset import Mode
from .exceptions import DivergenceError, InvalidParameterError
from .lattice import build_code
from .noise import features_batch
from .optim import Adam

log = logging.getLogger(__name__)

PAPER_EPOCHS = 1000
DESK_EPOCHS = 200
DEFAULT_PATIENCE = 50


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DESK_EPOCHS
    lr: float = 0.01
    batch_size: int = 32
    patience: int = None
    val_interval: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.patience is None:
            object.__setattr__(self, "patience", min(DEFAULT_PATIENCE, self.epochs))
        for name in ("epochs", "batch_size", "patience", "val_interval"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience > self.epochs:
            raise InvalidParameterError(f"patience ({self.patience}) must not exceed epochs ({self.epochs})")
        if self.lr < 0:
            raise InvalidParameterError(f"lr must be non-negative, got {self.lr}")

    @classmethod
    def paper_scale(cls, **overrides):
        return cls(**{"epochs": PAPER_EPOCHS, "val_interval": 1, **overrides})

    def to_dict(self):
        return asdict(self)


def _streams(seed):
    init, shuffle, drop = np.random.SeedSequence(int(seed)).spawn(3)
    return (np.random.Generator(np.random.Philox(s)) for s in (init, shuffle, drop))


def confusion_from_predictions(pred, labels):
    """4x4 counts, rows = true class, columns = predicted class."""
    flat = 4 * np.asarray(labels, np.int64).ravel() + np.asarray(pred, np.int64).ravel()
    return np.bincount(flat, minlength=16).reshape(4, 4)


def rates_from_confusion(conf):
    total = conf.sum()
    erroneous = conf[1:].sum()
    accuracy = float(np.trace(conf) / total) if total else float("nan")
    ecr = float(np.trace(conf[1:, 1:]) / erroneous) if erroneous else None
    return accuracy, ecr


def fit_parameters(network, code, features, labels, tc, val_predict=None, init_rng=None):
    """Core loop; returns ``(best_params, history)``.

    ``features`` is ``(n, nodes, 3)``, ``labels`` ``(n, n_data)`` class codes.
    ``val_predict(params)`` returns ``(accuracy, ecr)`` on the validation set.
    Selection keeps the parameters with the highest validation error-correction
    rate (accuracy when the validation set has no errors); ties keep the earlier
    check.  Without a validator the final parameters are returned.
    """
    init, shuffle_rng, dropout_rng = _streams(tc.seed)
    params = network.init_params(init_rng if init_rng is not None else init)
    names = list(params)
    opt = Adam([params[k] for k in names], lr=tc.lr)
    mask = code.data_mask
    n = len(features)
    history = {"epoch": [], "loss": [], "val_epoch": [], "val_accuracy": [], "val_ecr": []}
    best_key, best_state, stale = None, None, 0
    rate = getattr(network.config, "dropout", 0.0)

    for epoch in range(1, tc.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, tc.batch_size):
            idx = order[lo : lo + tc.batch_size]
            opt.zero_grad()
            with T.Tape():
                logits = network.forward(params, code, features[idx], rng=dropout_rng if rate else None)
                loss = T.masked_cross_entropy(logits, labels[idx], mask)
                T.backward(loss)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            opt.step()
            total += value * len(idx)
        history["epoch"].append(epoch)
        history["loss"].append(total / n)

        if val_predict is not None and (epoch % tc.val_interval == 0 or epoch == tc.epochs):
            acc, ecr = val_predict(params)
            history["val_epoch"].append(epoch)
            history["val_accuracy"].append(acc)
            history["val_ecr"].append(ecr)
            key = ecr if ecr is not None else acc
            if best_key is None or key > best_key:
                best_key, stale = key, 0
                best_state = {k: v.data.copy() for k, v in params.items()}
            else:
                stale += 1
            log.debug("epoch %d loss %.5f val acc %.5f ecr %s", epoch, total / n, acc, ecr)
            if stale >= tc.patience:
                log.info("early stop at epoch %d", epoch)
                break

    if best_state is not None:
        for k, v in best_state.items():
            params[k].data = v
    return params, history


def train(config, tc, train_set, val_set):
    """Fit a neural decoder on a Train-mode set with an Eval-mode validation set."""
    from .decoders.estimator import NeuralDecoder

    if train_set.mode is not Mode.TRAIN:
        raise InvalidParameterError("training data must be a Train-mode dataset")
    if val_set is not None and val_set.mode is not Mode.EVAL:
        raise InvalidParameterError("validation data must be an Eval-mode dataset")
    if val_set is not None and val_set.distance != train_set.distance:
        raise InvalidParameterError(
            f"distance mismatch: train d={train_set.distance}, validation d={val_set.distance}"
        )
    model = NeuralDecoder.from_configs(config, tc, distance=train_set.distance)
    start = time.perf_counter()
    if val_set is None:
        model.fit(train_set.syndromes, train_set.labels)
    else:
        model.fit(train_set.syndromes, train_set.labels, X_val=val_set.syndromes, y_val=val_set.labels)
    model.train_wall_s_ = time.perf_counter() - start
    return model


def featurize(distance, syndromes):
    return features_batch(build_code(distance), syndromes)
