"""Training/evaluation datasets and their on-disk formats.

Binary layout (little-endian)::

    "QECD" | u16 version=1 | u16 distance | f64 error_prob | u8 mode | u64 seed | u64 count
    then per record:
      ceil(n_ancilla / 8) bytes   syndrome bits, ascending ancilla id, LSB-first
      ceil(2 * n_data / 8) bytes  2-bit label codes (bit0 = X, bit1 = Z), ascending data id

The JSON-lines debug form starts with one ``{"header": {...}}`` line followed by
one ``{"fired": [...], "errors": {...}}`` object per record.
"""

import enum
import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, InvalidParameterError
from .lattice import build_code
from .noise import ErrorPattern, Syndrome, label_codes, sample_error_patterns, syndrome_batch
from .validation import check_positive_int, check_probability

MAGIC = b"QECD"
VERSION = 1
_HEADER = struct.Struct("<4sHHdBQQ")
_CHUNK = 1 << 18


class Mode(enum.IntEnum):
    EVAL = 0
    TRAIN = 1


@dataclass(frozen=True)
class Sample:
    syndrome: Syndrome
    pattern: ErrorPattern


@dataclass(eq=False)
class Dataset:
    distance: int
    error_prob: float
    mode: Mode
    seed: int
    syndromes: np.ndarray  # (n, n_ancilla) uint8
    x_flags: np.ndarray  # (n, n_data) uint8
    z_flags: np.ndarray  # (n, n_data) uint8

    def __post_init__(self):
        self.mode = Mode(self.mode)
        n = len(self.syndromes)
        if len(self.x_flags) != n or len(self.z_flags) != n:
            raise InvalidParameterError("syndromes, x_flags and z_flags must have equal length")

    @property
    def code(self):
        return build_code(self.distance)

    @property
    def record_count(self):
        return len(self.syndromes)

    def __len__(self):
        return self.record_count

    def __getitem__(self, i):
        return Sample(Syndrome(self.syndromes[i]), ErrorPattern(self.x_flags[i], self.z_flags[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.distance == other.distance
            and struct.pack("<d", self.error_prob) == struct.pack("<d", other.error_prob)
            and self.mode == other.mode
            and self.seed == other.seed
            and np.array_equal(self.syndromes, other.syndromes)
            and np.array_equal(self.x_flags, other.x_flags)
            and np.array_equal(self.z_flags, other.z_flags)
        )

    @property
    def labels(self):
        """Per-qubit class codes, shape ``(n, n_data)``."""
        return label_codes(self.x_flags, self.z_flags)

    @property
    def weights(self):
        return self.x_flags.sum(axis=1, dtype=np.int64) + self.z_flags.sum(axis=1, dtype=np.int64)

    def check_consistency(self):
        """Raise if any stored syndrome disagrees with re-extraction from its pattern."""
        recomputed = syndrome_batch(self.code, self.x_flags, self.z_flags)
        bad = np.flatnonzero(np.any(recomputed != self.syndromes, axis=1))
        if len(bad):
            raise InvalidParameterError(f"{len(bad)} records fail label consistency, first is #{bad[0]}")

    def subset(self, index):
        return Dataset(
            self.distance, self.error_prob, self.mode, self.seed,
            self.syndromes[index], self.x_flags[index], self.z_flags[index],
        )


def _pack_words(bits):
    """Pack 0/1 columns into big-endian uint64 words; word order preserves lexicographic order."""
    n, m = bits.shape
    packed = np.packbits(bits, axis=1, bitorder="big")
    nbytes = -(-max(m, 1) // 8)
    padded = np.zeros((n, -(-nbytes // 8) * 8), np.uint8)
    padded[:, : packed.shape[1]] = packed
    return padded.view(">u8").astype(np.uint64)


def _min_weight_representatives(syn, x, z):
    """Index of the preferred pattern for each distinct syndrome, in ascending syndrome order."""
    syn_words = _pack_words(syn)
    flag_words = _pack_words(np.concatenate([x, z], axis=1))
    weight = x.sum(axis=1, dtype=np.int64) + z.sum(axis=1, dtype=np.int64)
    keys = [flag_words[:, i] for i in range(flag_words.shape[1] - 1, -1, -1)]
    keys.append(weight)
    keys += [syn_words[:, i] for i in range(syn_words.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys)
    sorted_syn = syn_words[order]
    first = np.ones(len(order), bool)
    first[1:] = np.any(sorted_syn[1:] != sorted_syn[:-1], axis=1)
    return order[first]


def _reduce_shard(code, p, seed, start, stop, chunk):
    syn = np.zeros((0, code.n_ancilla), np.uint8)
    x = np.zeros((0, code.n_data), np.uint8)
    z = np.zeros((0, code.n_data), np.uint8)
    for lo in range(start, stop, chunk):
        cx, cz = sample_error_patterns(code, p, min(chunk, stop - lo), seed, start=lo)
        cs = syndrome_batch(code, cx, cz)
        syn = np.concatenate([syn, cs])
        x = np.concatenate([x, cx])
        z = np.concatenate([z, cz])
        keep = _min_weight_representatives(syn, x, z)
        syn, x, z = syn[keep], x[keep], z[keep]
    return syn, x, z


def generate_training_set(code, p, pool_size, seed, jobs=1, chunk=_CHUNK):
    """Degeneracy-filtered training set.

    Draws ``pool_size`` patterns and keeps, for each distinct syndrome, the
    pattern of fewest flipped flags (XZ on one qubit counts twice).  Ties go to
    the lexicographically smallest ``x_flags || z_flags`` bit string.  Records
    are sorted by syndrome, first ancilla most significant.  The result does
    not depend on ``jobs``.
    """
    p = check_probability(p)
    pool_size = check_positive_int(pool_size, "pool_size")
    jobs = check_positive_int(jobs, "jobs")
    if jobs == 1 or pool_size <= chunk:
        syn, x, z = _reduce_shard(code, p, seed, 0, pool_size, chunk)
    else:
        from joblib import Parallel, delayed

        bounds = np.linspace(0, pool_size, jobs + 1).astype(np.int64)
        parts = Parallel(n_jobs=jobs)(
            delayed(_reduce_shard)(code, p, seed, int(a), int(b), chunk)
            for a, b in zip(bounds[:-1], bounds[1:])
        )
        syn = np.concatenate([q[0] for q in parts])
        x = np.concatenate([q[1] for q in parts])
        z = np.concatenate([q[2] for q in parts])
        keep = _min_weight_representatives(syn, x, z)
        syn, x, z = syn[keep], x[keep], z[keep]
    return Dataset(code.distance, p, Mode.TRAIN, int(seed), syn, x, z)


def generate_eval_set(code, p, n, seed):
    """``n`` unfiltered samples in generation order."""
    p = check_probability(p)
    n = check_positive_int(n, "n")
    x, z = sample_error_patterns(code, p, n, seed)
    return Dataset(code.distance, p, Mode.EVAL, int(seed), syndrome_batch(code, x, z), x, z)


def record_size(code):
    return -(-code.n_ancilla // 8) + -(-2 * code.n_data // 8)


def dumps(ds):
    code = ds.code
    header = _HEADER.pack(MAGIC, VERSION, ds.distance, ds.error_prob, int(ds.mode), ds.seed, len(ds))
    syn = np.packbits(ds.syndromes, axis=1, bitorder="little")
    interleaved = np.empty((len(ds), 2 * code.n_data), np.uint8)
    interleaved[:, 0::2] = ds.x_flags
    interleaved[:, 1::2] = ds.z_flags
    lab = np.packbits(interleaved, axis=1, bitorder="little")
    body = np.concatenate([syn, lab], axis=1)
    return header + body.tobytes()


def loads(data, verify=None):
    data = bytes(data)
    if len(data) < 4:
        raise FormatError("truncated header: missing magic", len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", len(data))
    _, version, distance, p, mode, seed, count = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if distance < 2:
        raise FormatError(f"invalid distance {distance}", 6)
    if not 0.0 <= p <= 1.0:
        raise FormatError(f"invalid error probability {p}", 8)
    if mode not in (0, 1):
        raise FormatError(f"invalid mode byte {mode}", 16)
    code = build_code(distance)
    size = record_size(code)
    n_syn = -(-code.n_ancilla // 8)
    body = data[_HEADER.size:]
    expected = count * size
    if len(body) < expected:
        complete = len(body) // size
        raise FormatError(f"truncated record #{complete} of {count}", _HEADER.size + complete * size)
    if len(body) > expected:
        raise FormatError("trailing bytes after last record", _HEADER.size + expected)
    raw = np.frombuffer(body, np.uint8).reshape(count, size)
    syn_bits = np.unpackbits(raw[:, :n_syn], axis=1, bitorder="little")
    lab_bits = np.unpackbits(raw[:, n_syn:], axis=1, bitorder="little")
    for bits, used, first_byte in ((syn_bits, code.n_ancilla, 0), (lab_bits, 2 * code.n_data, n_syn)):
        bad = np.flatnonzero(bits[:, used:].any(axis=1))
        if len(bad):
            raise FormatError("nonzero padding bits", _HEADER.size + int(bad[0]) * size + first_byte)
    ds = Dataset(
        distance, p, Mode(mode), seed,
        np.ascontiguousarray(syn_bits[:, : code.n_ancilla]),
        np.ascontiguousarray(lab_bits[:, 0 : 2 * code.n_data : 2]),
        np.ascontiguousarray(lab_bits[:, 1 : 2 * code.n_data : 2]),
    )
    if verify if verify is not None else os.environ.get("QECBENCH_DEBUG"):
        ds.check_consistency()
    return ds


def write_dataset(ds, sink):
    payload = dumps(ds)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(payload)
    else:
        sink.write(payload)


def read_dataset(source, verify=None):
    if isinstance(source, (bytes, bytearray, memoryview)):
        return loads(source, verify)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return loads(fh.read(), verify)
    return loads(source.read(), verify)


_KINDS = {1: "X", 2: "Z", 3: "XZ"}


def to_jsonl(ds, sink=None):
    """Debug export; returns the text when ``sink`` is None."""
    code = ds.code
    out = io.StringIO() if sink is None else sink
    header = {
        "distance": ds.distance, "error_prob": ds.error_prob, "mode": ds.mode.name.lower(),
        "seed": ds.seed, "record_count": len(ds),
    }
    out.write(json.dumps({"header": header}) + "\n")
    anc = code.ancilla_ids
    data = code.data_ids
    labels = ds.labels
    for syn, lab in zip(ds.syndromes, labels):
        nz = np.flatnonzero(lab)
        record = {
            "fired": anc[syn.astype(bool)].tolist(),
            "errors": {str(int(data[i])): _KINDS[int(lab[i])] for i in nz},
        }
        out.write(json.dumps(record) + "\n")
    return out.getvalue() if sink is None else None


def from_jsonl(source):
    lines = source.splitlines() if isinstance(source, str) else source.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise FormatError("empty JSON-lines stream", 0)
    header = json.loads(lines[0]).get("header")
    if header is None:
        raise FormatError("first line must carry the header", 0)
    code = build_code(int(header["distance"]))
    records = [json.loads(ln) for ln in lines[1:]]
    n = len(records)
    syn = np.zeros((n, code.n_ancilla), np.uint8)
    x = np.zeros((n, code.n_data), np.uint8)
    z = np.zeros((n, code.n_data), np.uint8)
    anc_pos = {int(k): i for i, k in enumerate(code.ancilla_ids)}
    data_pos = {int(k): i for i, k in enumerate(code.data_ids)}
    for r, rec in enumerate(records):
        for k in rec["fired"]:
            syn[r, anc_pos[int(k)]] = 1
        for k, kind in rec["errors"].items():
            x[r, data_pos[int(k)]] = "X" in kind
            z[r, data_pos[int(k)]] = "Z" in kind
    mode = Mode.TRAIN if header["mode"] == "train" else Mode.EVAL
    return Dataset(code.distance, float(header["error_prob"]), mode, int(header["seed"]), syn, x, z)
