"""Error sampling, syndrome extraction and feature/label encoding.

Errors are classical X/Z flags on data qubits.  Every function has a
single-sample form that mirrors the domain types and a ``*_batch`` form
over a leading sample axis that the dataset generator uses.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidParameterError
from .validation import as_rng, check_bits, check_probability


class ErrorClass(enum.IntEnum):
    NO_ERROR = 0
    X = 1
    Z = 2
    XZ = 3


CLASS_NAMES = ("NoError", "X", "Z", "XZ")


@dataclass(frozen=True, eq=False)
class ErrorPattern:
    x_flags: np.ndarray
    z_flags: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ErrorPattern):
            return NotImplemented
        return np.array_equal(self.x_flags, other.x_flags) and np.array_equal(
            self.z_flags, other.z_flags
        )

    def __xor__(self, other):
        return ErrorPattern(self.x_flags ^ other.x_flags, self.z_flags ^ other.z_flags)

    @property
    def weight(self):
        return int(self.x_flags.sum()) + int(self.z_flags.sum())

    @classmethod
    def zeros(cls, code):
        return cls(np.zeros(code.n_data, np.uint8), np.zeros(code.n_data, np.uint8))

    @classmethod
    def from_errors(cls, code, errors):
        """Build from a mapping ``{data node id: "X" | "Z" | "XZ"}``."""
        pattern = cls.zeros(code)
        position = {int(k): i for i, k in enumerate(code.data_ids)}
        for k, kind in errors.items():
            if int(k) not in position:
                raise InvalidParameterError(f"node {k} is not a data qubit")
            if kind not in ("X", "Z", "XZ"):
                raise InvalidParameterError(f"unknown error kind {kind!r}")
            i = position[int(k)]
            pattern.x_flags[i] = "X" in kind
            pattern.z_flags[i] = "Z" in kind
        return pattern


@dataclass(frozen=True, eq=False)
class Syndrome:
    fired: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Syndrome):
            return NotImplemented
        return np.array_equal(self.fired, other.fired)

    def __xor__(self, other):
        return Syndrome(self.fired ^ other.fired)

    def fired_ids(self, code):
        return code.ancilla_ids[self.fired.astype(bool)].tolist()


def philox_stream(seed, offset=0):
    """Generator positioned ``offset`` doubles into the Philox stream keyed by ``seed``.

    Sharded generation relies on this: the stream for records ``[s, s+n)`` is
    the serial stream advanced by ``s * 2 * n_data`` draws.
    """
    bitgen = np.random.Philox(key=int(seed))
    bitgen.advance(offset // 4)
    gen = np.random.Generator(bitgen)
    if offset % 4:
        gen.random(offset % 4)
    return gen


def sample_error_pattern(code, p, rng):
    p = check_probability(p)
    u = as_rng(rng).random(2 * code.n_data)
    return ErrorPattern((u[0::2] < p).astype(np.uint8), (u[1::2] < p).astype(np.uint8))


def sample_error_patterns(code, p, n, seed, start=0):
    """Records ``start .. start+n-1`` of the seeded stream as ``(x, z)`` uint8 arrays.

    Identical, record for record, to ``n`` successive ``sample_error_pattern`` calls
    on ``philox_stream(seed)`` after skipping ``start`` records.
    """
    p = check_probability(p)
    width = 2 * code.n_data
    u = philox_stream(seed, start * width).random((n, width))
    flags = (u < p).astype(np.uint8)
    return flags[:, 0::2], flags[:, 1::2]


def syndrome_batch(code, x_flags, z_flags):
    """Syndromes for stacked patterns; returns ``(n, n_ancilla)`` uint8."""
    x = check_bits(x_flags, code.n_data, "x_flags")
    z = check_bits(z_flags, code.n_data, "z_flags")
    if x.shape != z.shape:
        raise InvalidParameterError(f"x_flags {x.shape} and z_flags {z.shape} differ in shape")
    h = code.check_matrix.T.astype(np.float32)
    xs = code.x_stabilizer_mask
    # float32 matmul is exact here: counts never exceed 4
    from_z = (z.astype(np.float32) @ h).astype(np.int64)
    from_x = (x.astype(np.float32) @ h).astype(np.int64)
    return (np.where(xs, from_z, from_x) & 1).astype(np.uint8)


def extract_syndrome(code, pattern):
    if pattern.x_flags.shape != (code.n_data,) or pattern.z_flags.shape != (code.n_data,):
        raise InvalidParameterError(
            f"pattern sized for {pattern.x_flags.shape} data qubits, code has {code.n_data}"
        )
    return Syndrome(syndrome_batch(code, pattern.x_flags, pattern.z_flags))


def features_batch(code, syndromes):
    """``(n, n_ancilla)`` syndromes to ``(n, node_count, 3)`` float features."""
    syn = check_bits(syndromes, code.n_ancilla, "syndrome")
    lead = syn.shape[:-1]
    out = np.zeros(lead + (code.node_count, 3))
    anc = code.ancilla_ids - 1
    even_row = code.x_stabilizer_mask
    out[..., anc[even_row], 1] = syn[..., even_row]
    out[..., anc[~even_row], 2] = syn[..., ~even_row]
    return out


def encode_features(code, syndrome):
    fired = syndrome.fired if isinstance(syndrome, Syndrome) else syndrome
    if np.shape(fired) != (code.n_ancilla,):
        raise InvalidParameterError(
            f"syndrome has shape {np.shape(fired)}, code has {code.n_ancilla} ancillas"
        )
    return features_batch(code, fired)


def label_codes(x_flags, z_flags):
    """Per-qubit class index: 0 NoError, 1 X, 2 Z, 3 XZ."""
    return (np.asarray(x_flags, np.uint8) | (np.asarray(z_flags, np.uint8) << 1)).astype(np.uint8)


def encode_labels(code, pattern):
    if pattern.x_flags.shape != (code.n_data,) or pattern.z_flags.shape != (code.n_data,):
        raise InvalidParameterError(
            f"pattern sized for {pattern.x_flags.shape} data qubits, code has {code.n_data}"
        )
    return np.eye(4)[label_codes(pattern.x_flags, pattern.z_flags)]
