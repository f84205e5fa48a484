"""Checkpoint container.

Layout: ``b"QECK"`` | u32 header length | UTF-8 JSON header | parameter arrays
as little-endian f64, concatenated in the order the header lists them.
"""

import json
import os
import struct

import numpy as np

from ..exceptions import FormatError
from .config import ModelConfig
from .estimator import LookupDecoder, NeuralDecoder, TrivialDecoder

MAGIC = b"QECK"
FORMAT_VERSION = 1


def _arrays(model):
    if isinstance(model, NeuralDecoder):
        return {name: t.data for name, t in model.params_.items()}
    if isinstance(model, LookupDecoder):
        return {"table.syndromes": model.table_syndromes_, "table.labels": model.table_labels_}
    return {}


def dumps(model):
    arrays = _arrays(model)
    header = {
        "format_version": FORMAT_VERSION,
        "distance": int(model.distance),
        "config": model.config_.to_dict(),
        "seed": int(model.config_.seed),
        "estimator": model.get_params(),
        "parameters": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.asarray(v, "<f8").tobytes() for v in arrays.values())
    return MAGIC + struct.pack("<I", len(blob)) + blob + body


def loads(data):
    data = bytes(data)
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}", 0)
    if len(data) < 8:
        raise FormatError("truncated checkpoint header", len(data))
    (size,) = struct.unpack_from("<I", data, 4)
    try:
        header = json.loads(data[8 : 8 + size])
    except ValueError:
        raise FormatError("checkpoint header is not valid JSON", 8) from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')}", 8)
    offset = 8 + size
    arrays = {}
    for entry in header["parameters"]:
        count = int(np.prod(entry["shape"]))
        end = offset + 8 * count
        if end > len(data):
            raise FormatError(f"truncated parameter {entry['name']}", offset)
        arrays[entry["name"]] = np.frombuffer(data[offset:end], "<f8").astype(np.float64).reshape(entry["shape"])
        offset = end
    if offset != len(data):
        raise FormatError("trailing bytes after last parameter", offset)

    config = ModelConfig(**header["config"])
    if config.architecture == "Lookup":
        model = LookupDecoder(distance=header["distance"])
        return model.fit(arrays["table.syndromes"].astype(np.uint8), arrays["table.labels"].astype(np.int64))
    if config.architecture == "TrivialNoError":
        return TrivialDecoder(distance=header["distance"]).fit()
    model = NeuralDecoder(**header["estimator"]).init_untrained()
    for name, value in arrays.items():
        model.params_[name].data = value
    return model


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_checkpoint(path):
    if os.path.isdir(path):
        path = os.path.join(path, "model.ckpt")
    with open(path, "rb") as fh:
        return loads(fh.read())
