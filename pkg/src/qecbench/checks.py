"""Gradient-check suite over every differentiable primitive and architecture."""

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .decoders import NEURAL, ModelConfig, build_network
from .lattice import build_code
from .noise import features_batch, label_codes, sample_error_patterns, syndrome_batch

TOLERANCE = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self):
        return bool(self.max_rel_error < TOLERANCE)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _weighted(y, w):
    """Scalar probe: sum(y * w) with a fixed random weight."""
    return T.sum_(T.mul(y, w))


def primitive_cases(seed=0):
    """``(name, fn, inputs)`` triples; each primitive appears on three shapes."""
    rng = np.random.default_rng(seed)
    cases = []

    def probe(op, *shapes):
        for k, shape_set in enumerate(shapes):
            inputs = [_rand(rng, *s) for s in shape_set]
            out_shape = op(*[T.Tensor(a) for a in inputs]).shape
            w = _rand(rng, *out_shape)
            cases.append((f"{op.__name__}[{k}]",
                          lambda *xs, op=op, w=w: _weighted(op(*xs), w), inputs))

    def named(name, fn):
        fn.__name__ = name
        return fn

    probe(named("add", T.add), [(3,), (3,)], [(2, 3), (3,)], [(4, 2, 3), (2, 1)])
    probe(named("sub", T.sub), [(3,), (3,)], [(2, 3), (1, 3)], [(2, 2, 3), (2, 3)])
    probe(named("mul", T.mul), [(3,), (3,)], [(2, 3), (3,)], [(2, 2, 3), (2, 1)])
    probe(named("matmul", T.matmul), [(2, 3), (3, 4)], [(5, 2, 3), (3, 2)], [(4, 4), (2, 4, 3)])
    probe(named("reshape", lambda x: T.reshape(x, (-1,))), [(2, 3)], [(4,)], [(2, 2, 2)])
    probe(named("transpose", lambda x: T.transpose(x, tuple(reversed(range(x.ndim))))),
          [(2, 3)], [(2, 3, 4)], [(1, 5)])
    probe(named("swapaxes", lambda x: T.swapaxes(x, 0, -1)), [(2, 3)], [(2, 3, 4)], [(3, 1)])
    probe(named("sum", lambda x: T.sum_(x, axis=0)), [(3,)], [(2, 3)], [(2, 3, 4)])
    probe(named("mean", T.mean), [(3,)], [(2, 3)], [(2, 3, 4)])
    probe(named("concat", lambda a, b: T.concat([a, b], axis=-1)),
          [(2, 3), (2, 1)], [(3,), (2,)], [(2, 2, 2), (2, 2, 3)])
    probe(named("take_rows", lambda x: T.take_rows(x, np.array([0, 2, 2]), axis=-2)),
          [(3, 2)], [(4, 3)], [(2, 3, 4)])
    probe(named("relu", T.relu), [(5,)], [(3, 4)], [(2, 3, 4)])
    probe(named("tanh", T.tanh), [(5,)], [(3, 4)], [(2, 3, 4)])
    probe(named("softmax_rows", T.softmax_rows), [(2, 3)], [(4, 4)], [(2, 3, 5)])
    probe(named("log_softmax_rows", T.log_softmax_rows), [(2, 3)], [(4, 4)], [(2, 3, 5)])
    probe(named("dropout", lambda x: T.dropout(x, 0.3, np.random.default_rng(7))), [(5,)], [(3, 4)], [(2, 3, 4)])
    probe(named("conv2d_same", T.conv2d_same),
          [(2, 3, 3), (4, 2, 3, 3), (4,)], [(2, 1, 4, 5), (3, 1, 3, 3), (3,)], [(1, 2, 2, 3), (2, 2, 3, 3), (2,)])
    probe(named("conv1x1", T.conv1x1),
          [(2, 3, 3), (4, 2), (4,)], [(2, 1, 4, 5), (3, 1), (3,)], [(1, 2, 2, 3), (2, 2), (2,)])
    probe(named("pad_spatial", lambda x: T.pad_spatial(x, x.shape[-2] + 1, x.shape[-1] + 2)),
          [(2, 2)], [(2, 3, 3)], [(2, 1, 3, 2)])
    probe(named("crop_spatial", lambda x: T.crop_spatial(x, x.shape[-2] - 1, x.shape[-1] - 1)),
          [(3, 3)], [(2, 4, 3)], [(2, 1, 3, 5)])
    probe(named("maxpool2", T.maxpool2), [(4, 4)], [(2, 3, 5)], [(2, 1, 5, 6)])
    probe(named("upsample2", T.upsample2), [(2, 2)], [(2, 3, 1)], [(2, 1, 2, 3)])

    mask = np.array([True, False, True, True, False])
    for k, lead in enumerate([(), (2,), (2, 3)]):
        labels = rng.integers(0, 4, size=lead + (3,))
        cases.append((f"masked_cross_entropy[{k}]",
                      lambda x, labels=labels: T.masked_cross_entropy(x, labels, mask),
                      [_rand(rng, *(lead + (5, 4)))]))
    return cases


def architecture_cases(distance=2, batch=4, seed=0, p=0.15):
    """Full pipeline per architecture: features -> forward -> masked loss."""
    code = build_code(distance)
    x, z = sample_error_patterns(code, p, batch, seed)
    feats = features_batch(code, syndrome_batch(code, x, z))
    labels = label_codes(x, z)
    cases = []
    for arch in NEURAL:
        config = ModelConfig.default(arch, dropout=0.0) if arch == "GraphTransformer" else ModelConfig.default(arch)
        net = build_network(config)
        params = net.init_params(np.random.default_rng(seed))
        names = list(params)
        # zero biases on all-zero data-node features sit exactly on the relu kink
        jitter = np.random.default_rng(seed + 1)
        values = [params[k].data + 0.1 * jitter.standard_normal(params[k].shape) for k in names]

        def fn(*tensors, net=net, names=names):
            return T.masked_cross_entropy(net.forward(dict(zip(names, tensors)), code, feats), labels, code.data_mask)

        cases.append((f"arch:{arch}", fn, values))
    return cases


def run_suite(max_coords=200, include_architectures=True, seed=0):
    """Run every case; returns a list of :class:`CheckResult`."""
    cases = primitive_cases(seed)
    if include_architectures:
        cases += architecture_cases(seed=seed)
    results = []
    for name, fn, inputs in cases:
        start = time.perf_counter()
        err = T.gradcheck(fn, [np.array(a, dtype=np.float64) for a in inputs],
                          max_coords=max_coords, rng=np.random.default_rng(seed))
        results.append(CheckResult(name, err, time.perf_counter() - start))
    return results
