"""Neural and baseline decoders mapping feature matrices to per-node class logits."""

import numpy as np

from ..dataset import Mode
from ..exceptions import InvalidParameterError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ARCHITECTURES, NEURAL, ModelConfig, canonical_architecture
from .estimator import LookupDecoder, NeuralDecoder, SyndromeFeaturizer, TrivialDecoder
from .networks import build_network

__all__ = [
    "ARCHITECTURES", "NEURAL", "ModelConfig", "NeuralDecoder", "LookupDecoder", "TrivialDecoder",
    "SyndromeFeaturizer", "build_network", "build_lookup_decoder", "forward", "predict",
    "save_checkpoint", "load_checkpoint", "canonical_architecture",
]


def _check_model(model, code):
    if not hasattr(model, "config_"):
        raise InvalidParameterError("model is not fitted")
    if model.distance != code.distance:
        raise InvalidParameterError(f"model built for d={model.distance}, code has d={code.distance}")


def forward(model, code, features):
    """Logits ``(nodes, 4)`` (or ``(n, nodes, 4)`` for a stack) for feature matrices."""
    _check_model(model, code)
    return model.forward(features)


def predict(model, code, features):
    """Class per data qubit (ascending id); ties resolve to the lower class index."""
    logits = np.asarray(forward(model, code, features))
    return np.argmax(logits[..., code.data_mask, :], axis=-1)


def build_lookup_decoder(training_pool):
    if training_pool.mode is not Mode.TRAIN:
        raise InvalidParameterError("the lookup decoder is built from a Train-mode dataset")
    return LookupDecoder(distance=training_pool.distance).fit(training_pool.syndromes, training_pool.labels)
