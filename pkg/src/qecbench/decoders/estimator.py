"""scikit-learn style estimators over syndrome arrays.

``X`` is an ``(n_samples, n_ancilla)`` 0/1 syndrome array (ancillas in
ascending id order) and ``y`` an ``(n_samples, n_data)`` array of class codes
0..3 (NoError, X, Z, XZ).  Feature matrices ``(n_samples, nodes, 3)`` are also
accepted wherever ``X`` is read.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import InvalidParameterError
from ..lattice import build_code
from ..noise import features_batch
from ..training import TrainConfig, confusion_from_predictions, fit_parameters, rates_from_confusion
from ..validation import check_bits, check_distance
from .config import ModelConfig, canonical_architecture
from .networks import build_network

_CHUNK = 2048


def _check_labels(y, code):
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] != code.n_data:
        raise InvalidParameterError(f"labels must be (n_samples, {code.n_data}), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() > 3):
        raise InvalidParameterError("labels must be class codes in 0..3")
    return y.astype(np.int64)


def syndromes_from_features(code, features):
    features = np.asarray(features)
    anc = code.ancilla_ids - 1
    return (features[..., anc, 1] + features[..., anc, 2] > 0).astype(np.uint8)


class SyndromeFeaturizer(TransformerMixin, BaseEstimator):
    """Turns syndrome bit arrays into per-node 3-channel feature matrices."""

    def __init__(self, distance=3):
        self.distance = distance

    def fit(self, X, y=None):
        code = build_code(check_distance(self.distance))
        check_bits(X, code.n_ancilla, "X")
        self.n_features_in_ = code.n_ancilla
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        return features_batch(build_code(self.distance), X)


class _DecoderBase(ClassifierMixin, BaseEstimator):
    classes_ = np.arange(4)

    @property
    def code(self):
        return build_code(check_distance(self.distance))

    def _split_input(self, X):
        """Return ``(syndromes, features)``; one of them may be None."""
        X = np.asarray(X)
        code = self.code
        if X.ndim == 3:
            if X.shape[1:] != (code.node_count, 3):
                raise InvalidParameterError(f"feature matrices must be (n, {code.node_count}, 3), got {X.shape}")
            return None, X.astype(np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return check_bits(X, code.n_ancilla, "X"), None

    def predict(self, X):
        """Per-data-qubit class codes, ``(n_samples, n_data)``."""
        return np.argmax(self.decision_function(X), axis=-1)

    def score(self, X, y, sample_weight=None):
        """Overall accuracy over every data-qubit position."""
        acc, _ = rates_from_confusion(confusion_from_predictions(self.predict(X), _check_labels(y, self.code)))
        return acc

    def error_correction_rate(self, X, y):
        _, ecr = rates_from_confusion(confusion_from_predictions(self.predict(X), _check_labels(y, self.code)))
        return ecr


class NeuralDecoder(_DecoderBase):
    """One of the seven neural architectures trained with Adam.

    ``None`` hyperparameters take the per-architecture defaults from
    :meth:`ModelConfig.default`.  When validation data is passed to ``fit`` the
    parameters with the best validation error-correction rate are kept.
    """

    def __init__(self, architecture="GCN", distance=3, layers=None, hidden=16, alpha=None, beta=None,
                 heads=None, dropout=None, epochs=200, lr=0.01, batch_size=32, patience=None,
                 val_interval=5, seed=0):
        self.architecture = architecture
        self.distance = distance
        self.layers = layers
        self.hidden = hidden
        self.alpha = alpha
        self.beta = beta
        self.heads = heads
        self.dropout = dropout
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.patience = patience
        self.val_interval = val_interval
        self.seed = seed

    @classmethod
    def from_configs(cls, config, tc, distance):
        return cls(
            architecture=config.architecture, distance=distance, layers=config.layers,
            hidden=config.hidden, alpha=config.alpha, beta=config.beta, heads=config.heads,
            dropout=config.dropout, epochs=tc.epochs, lr=tc.lr, batch_size=tc.batch_size,
            patience=tc.patience, val_interval=tc.val_interval, seed=config.seed,
        )

    def model_config(self):
        return ModelConfig.default(
            canonical_architecture(self.architecture), layers=self.layers, hidden=self.hidden,
            alpha=self.alpha, beta=self.beta, heads=self.heads, dropout=self.dropout, seed=self.seed,
        )

    def train_config(self):
        return TrainConfig(self.epochs, self.lr, self.batch_size, self.patience, self.val_interval, self.seed)

    def _prepare(self):
        config = self.model_config()
        self.config_ = config
        self.network_ = build_network(config)
        return config

    def init_untrained(self):
        """Fitted-state model with freshly initialised parameters (no training)."""
        config = self._prepare()
        self.params_ = self.network_.init_params(np.random.Generator(np.random.Philox(key=config.seed)))
        self.history_ = {"epoch": [], "loss": [], "val_epoch": [], "val_accuracy": [], "val_ecr": []}
        return self

    def fit(self, X, y, X_val=None, y_val=None):
        config = self._prepare()
        code = self.code
        syn, feats = self._split_input(X)
        features = features_batch(code, syn) if feats is None else feats
        labels = _check_labels(y, code)
        if len(labels) != len(features):
            raise InvalidParameterError(f"X has {len(features)} samples but y has {len(labels)}")
        validator = None
        if X_val is not None:
            val_syn, val_feats = self._split_input(X_val)
            val_labels = _check_labels(y_val, code)
            validator = self._validator(val_syn, val_feats, val_labels)
        init_rng = np.random.Generator(np.random.Philox(key=config.seed))
        self.params_, self.history_ = fit_parameters(
            self.network_, code, features, labels, self.train_config(), validator, init_rng
        )
        return self

    def _validator(self, syn, feats, labels):
        if syn is not None:
            uniq, inverse = np.unique(syn, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            feats = features_batch(self.code, uniq)
        else:
            inverse = None

        def evaluate(params):
            pred = self._argmax_data(params, feats)
            if inverse is not None:
                pred = pred[inverse]
            return rates_from_confusion(confusion_from_predictions(pred, labels))

        return evaluate

    def _argmax_data(self, params, feats):
        return np.argmax(self._logits(params, feats)[:, self.code.data_mask], axis=-1)

    def _logits(self, params, feats):
        out = [
            self.network_.forward(params, self.code, feats[lo : lo + _CHUNK]).data
            for lo in range(0, len(feats), _CHUNK)
        ]
        return np.concatenate(out) if out else np.zeros((0, self.code.node_count, 4))

    def forward(self, features):
        """Logits ``(n, nodes, 4)`` for feature matrices, ancilla rows included."""
        check_is_fitted(self, "params_")
        feats = np.asarray(features, np.float64)
        if feats.ndim == 2:
            return self._logits(self.params_, feats[None])[0]
        return self._logits(self.params_, feats)

    def decision_function(self, X):
        """Data-row logits ``(n_samples, n_data, 4)``; repeated syndromes are evaluated once."""
        check_is_fitted(self, "params_")
        syn, feats = self._split_input(X)
        if syn is None:
            return self._logits(self.params_, feats)[:, self.code.data_mask]
        uniq, inverse = np.unique(syn, axis=0, return_inverse=True)
        logits = self._logits(self.params_, features_batch(self.code, uniq))[:, self.code.data_mask]
        return logits[inverse.reshape(-1)]

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)

    @property
    def parameter_count(self):
        return build_network(self.model_config()).parameter_count()


class TrivialDecoder(_DecoderBase):
    """Predicts NoError on every data qubit."""

    def __init__(self, distance=3):
        self.distance = distance

    def fit(self, X=None, y=None):
        self.config_ = ModelConfig.default("TrivialNoError")
        return self

    def decision_function(self, X):
        syn, feats = self._split_input(X)
        n = len(syn) if syn is not None else len(feats)
        out = np.zeros((n, self.code.n_data, 4))
        out[..., 0] = 1.0
        return out

    def forward(self, features):
        feats = np.asarray(features, np.float64)
        out = np.zeros(feats.shape[:-1] + (4,))
        out[..., 0] = 1.0
        return out


class LookupDecoder(_DecoderBase):
    """Table from syndrome to the stored minimal-weight labels; unseen syndromes get NoError."""

    def __init__(self, distance=3):
        self.distance = distance

    def fit(self, X, y):
        code = self.code
        syn = check_bits(X, code.n_ancilla, "X")
        labels = _check_labels(y, code)
        self.config_ = ModelConfig.default("Lookup")
        self.table_syndromes_ = syn.copy()
        self.table_labels_ = labels.astype(np.uint8)
        self.table_ = {row.tobytes(): i for i, row in enumerate(syn)}
        return self

    def _lookup(self, syn):
        check_is_fitted(self, "table_")
        out = np.zeros((len(syn), self.code.n_data), np.int64)
        uniq, inverse = np.unique(syn, axis=0, return_inverse=True)
        hits = np.full(len(uniq), -1)
        for i, row in enumerate(uniq):
            hits[i] = self.table_.get(row.tobytes(), -1)
        found = hits >= 0
        rows = np.zeros((len(uniq), self.code.n_data), np.int64)
        rows[found] = self.table_labels_[hits[found]]
        out[:] = rows[inverse.reshape(-1)]
        return out

    def decision_function(self, X):
        syn, feats = self._split_input(X)
        if syn is None:
            syn = syndromes_from_features(self.code, feats)
        return np.eye(4)[self._lookup(syn)]

    def forward(self, features):
        feats = np.asarray(features, np.float64)
        single = feats.ndim == 2
        feats = feats[None] if single else feats
        out = np.zeros(feats.shape[:-1] + (4,))
        out[..., 0] = 1.0
        out[:, self.code.data_mask] = self.decision_function(feats)
        return out[0] if single else out
