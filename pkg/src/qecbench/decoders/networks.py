"""Neural decoder architectures.

Each network maps a batch of feature matrices ``(B, nodes, 3)`` to logits
``(B, nodes, 4)``.  Parameters live in an ordered ``dict`` of
:class:`~qecbench.tensor.Tensor` so the training loop, the checkpoint writer and
gradient checks all see the same flat list.  Grid models (CNN, U-Net) reshape
the node axis to the lattice; graph models work on the node axis directly.
"""

from functools import lru_cache

import numpy as np

from .. import tensor as T
from ..exceptions import InvalidParameterError, ShapeError
from ..lattice import build_code, normalized_adjacency
from .config import ModelConfig

MAX_ATTENTION_DISTANCE = 16


@lru_cache(maxsize=None)
def _graph_constants(distance):
    code = build_code(distance)
    return {
        "a_hat": T.Tensor(normalized_adjacency(code).copy()),
        "adjacency": code.adjacency.astype(np.float64),
        "degree": code.degrees.copy(),
        "distance_index": np.minimum(code.grid_distances, MAX_ATTENTION_DISTANCE),
    }


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def gcn_layer(a_hat, h, weight, act="relu", bias=None):
    z = T.matmul(a_hat, T.matmul(h, weight))
    return T.activation(z if bias is None else z + bias, act)


def gcnii_layer(a_hat, h, h0, weight, alpha, beta, act="relu"):
    support = (1.0 - alpha) * T.matmul(a_hat, h) + alpha * h0
    mixed = (1.0 - beta) * support + beta * T.matmul(support, weight)
    return T.activation(mixed, act)


def appnp_layer(a_hat, h, h0, weight, alpha, act="relu"):
    prop = T.matmul(a_hat, T.matmul(h, weight))
    return T.activation((1.0 - alpha) * prop + alpha * T.matmul(h0, weight), act)


def multiscale_inputs(adjacency, x, layers):
    """``[A X | A^2 X | ... | A^L X]`` with raw adjacency powers."""
    blocks, cur = [], np.asarray(x)
    for _ in range(layers):
        cur = np.matmul(adjacency, cur)
        blocks.append(cur)
    return np.concatenate(blocks, axis=-1)


class Network:
    """Base class; subclasses define ``parameter_shapes`` and ``forward``."""

    def __init__(self, config):
        if not isinstance(config, ModelConfig):
            raise InvalidParameterError(f"expected ModelConfig, got {type(config).__name__}")
        self.config = config

    def parameter_shapes(self):
        raise NotImplementedError

    def init_params(self, rng):
        params = {}
        for name, (shape, fan_in, fan_out) in self.parameter_shapes().items():
            if fan_in == 0:
                params[name] = T.parameter(np.zeros(shape))
            else:
                params[name] = T.parameter(glorot(rng, shape, fan_in, fan_out))
        return params

    def parameter_count(self):
        return int(sum(np.prod(s) for s, _, _ in self.parameter_shapes().values()))

    def forward(self, params, code, features, rng=None):
        """Logits for a batch of feature matrices; ``rng`` enables dropout."""
        x = T.as_tensor(features)
        if x.ndim == 2:
            return T.reshape(self.forward(params, code, T.reshape(x, (1,) + x.shape), rng), x.shape[:1] + (4,))
        if x.shape[-2:] != (code.node_count, 3):
            raise ShapeError(f"features of shape {x.shape} do not fit a {code.node_count}-node code")
        return self._forward(params, code, x, rng)

    def _head(self, params, h):
        return T.matmul(h, params["out.weight"]) + params["out.bias"]

    def _head_shapes(self, width):
        return {"out.weight": ((width, 4), width, 4), "out.bias": ((4,), 0, 0)}


def _w(shape):
    return (shape, shape[0], shape[1])


def _b(n):
    return ((n,), 0, 0)


class GCN(Network):
    def parameter_shapes(self):
        h = self.config.hidden
        shapes = {"gc0.weight": _w((3, h)), "gc0.bias": _b(h)}
        for i in range(1, self.config.layers):
            shapes[f"gc{i}.weight"] = _w((h, h))
            shapes[f"gc{i}.bias"] = _b(h)
        shapes.update(self._head_shapes(h))
        return shapes

    def _forward(self, params, code, x, rng):
        a_hat = _graph_constants(code.distance)["a_hat"]
        h = x
        for i in range(self.config.layers):
            h = gcn_layer(a_hat, h, params[f"gc{i}.weight"], bias=params[f"gc{i}.bias"])
        return self._head(params, h)


class _InputProjected(Network):
    """Graph models whose first step is ``H0 = relu(X W_in + b_in)``."""

    def _input_shapes(self):
        h = self.config.hidden
        return {"in.weight": _w((3, h)), "in.bias": _b(h)}

    def _h0(self, params, x):
        return T.relu(T.matmul(x, params["in.weight"]) + params["in.bias"])


class GCNII(_InputProjected):
    def parameter_shapes(self):
        h = self.config.hidden
        shapes = self._input_shapes()
        for i in range(self.config.layers):
            shapes[f"gc{i}.weight"] = _w((h, h))
        shapes.update(self._head_shapes(h))
        return shapes

    def _forward(self, params, code, x, rng):
        a_hat = _graph_constants(code.distance)["a_hat"]
        h0 = self._h0(params, x)
        h = h0
        for i in range(self.config.layers):
            h = gcnii_layer(a_hat, h, h0, params[f"gc{i}.weight"], self.config.alpha, self.config.beta)
        return self._head(params, h)


class APPNP(_InputProjected):
    def parameter_shapes(self):
        h = self.config.hidden
        shapes = self._input_shapes()
        for i in range(self.config.layers):
            shapes[f"prop{i}.weight"] = _w((h, h))
        shapes.update(self._head_shapes(h))
        return shapes

    def _forward(self, params, code, x, rng):
        a_hat = _graph_constants(code.distance)["a_hat"]
        h0 = self._h0(params, x)
        h = h0
        for i in range(self.config.layers):
            h = appnp_layer(a_hat, h, h0, params[f"prop{i}.weight"], self.config.alpha)
        return self._head(params, h)


class MultiGNN(Network):
    def parameter_shapes(self):
        h = self.config.hidden
        shapes = {"scale.weight": _w((3 * self.config.layers, h))}
        shapes.update(self._head_shapes(h))
        return shapes

    def hidden(self, params, code, x):
        adjacency = _graph_constants(code.distance)["adjacency"]
        stacked = multiscale_inputs(adjacency, T.as_tensor(x).data, self.config.layers)
        return T.relu(T.matmul(T.Tensor(stacked), params["scale.weight"]))

    def _forward(self, params, code, x, rng):
        return self._head(params, self.hidden(params, code, x))


class GraphTransformer(Network):
    """Multi-head self-attention plus position-wise FFN, with residual connections.

    Structure enters through a learned per-head attention bias indexed by grid
    distance (clipped at ``MAX_ATTENTION_DISTANCE``) and a learned embedding of
    node degree added to the input projection.
    """

    def parameter_shapes(self):
        h, heads = self.config.hidden, self.config.heads
        shapes = {
            "in.weight": _w((3, h)),
            "in.bias": _b(h),
            "degree.embedding": ((5, h), 5, h),
        }
        for i in range(self.config.layers):
            shapes[f"attn{i}.query"] = _w((h, h))
            shapes[f"attn{i}.key"] = _w((h, h))
            shapes[f"attn{i}.value"] = _w((h, h))
            shapes[f"attn{i}.distance_bias"] = ((heads, MAX_ATTENTION_DISTANCE + 1), 0, 0)
            shapes[f"ffn{i}.w1"] = _w((h, 2 * h))
            shapes[f"ffn{i}.b1"] = _b(2 * h)
            shapes[f"ffn{i}.w2"] = _w((2 * h, h))
            shapes[f"ffn{i}.b2"] = _b(h)
        shapes.update(self._head_shapes(h))
        return shapes

    def attention_weights(self, params, code, h, layer):
        """Row-stochastic attention matrices ``(B, heads, nodes, nodes)``."""
        heads = self.config.heads
        dk = self.config.hidden // heads
        consts = _graph_constants(code.distance)
        b, n, _ = h.shape
        q = T.transpose(T.reshape(T.matmul(h, params[f"attn{layer}.query"]), (b, n, heads, dk)), (0, 2, 1, 3))
        k = T.transpose(T.reshape(T.matmul(h, params[f"attn{layer}.key"]), (b, n, heads, dk)), (0, 2, 3, 1))
        scores = T.matmul(q, k) * (1.0 / np.sqrt(dk))
        bias = T.take_rows(params[f"attn{layer}.distance_bias"], consts["distance_index"], axis=-1)
        return T.softmax_rows(scores + bias)

    def _forward(self, params, code, x, rng):
        heads = self.config.heads
        dk = self.config.hidden // heads
        rate = self.config.dropout
        consts = _graph_constants(code.distance)
        degree = T.take_rows(params["degree.embedding"], consts["degree"], axis=0)
        h = T.matmul(x, params["in.weight"]) + params["in.bias"] + degree
        b, n, width = h.shape
        for i in range(self.config.layers):
            attn = self.attention_weights(params, code, h, i)
            v = T.transpose(T.reshape(T.matmul(h, params[f"attn{i}.value"]), (b, n, heads, dk)), (0, 2, 1, 3))
            mixed = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, n, width))
            h = h + T.dropout(mixed, rate, rng)
            ff = T.relu(T.matmul(h, params[f"ffn{i}.w1"]) + params[f"ffn{i}.b1"])
            ff = T.matmul(ff, params[f"ffn{i}.w2"]) + params[f"ffn{i}.b2"]
            h = h + T.dropout(ff, rate, rng)
        return self._head(params, h)


def _to_grid(x, side):
    b = x.shape[0]
    return T.transpose(T.reshape(x, (b, side, side, x.shape[-1])), (0, 3, 1, 2))


def _from_grid(y):
    b, c, hgt, wid = y.shape
    return T.reshape(T.transpose(y, (0, 2, 3, 1)), (b, hgt * wid, c))


def _conv_shapes(name, c_in, c_out):
    return {
        f"{name}.kernel": ((c_out, c_in, 3, 3), 9 * c_in, 9 * c_out),
        f"{name}.bias": _b(c_out),
    }


def _conv(params, name, x):
    return T.relu(T.conv2d_same(x, params[f"{name}.kernel"], params[f"{name}.bias"]))


class CNN(Network):
    def parameter_shapes(self):
        h = self.config.hidden
        shapes = _conv_shapes("conv0", 3, h)
        for i in range(1, self.config.layers):
            shapes.update(_conv_shapes(f"conv{i}", h, h))
        shapes.update(self._head_shapes(h))
        return shapes

    def _forward(self, params, code, x, rng):
        y = _to_grid(x, code.side)
        for i in range(self.config.layers):
            y = _conv(params, f"conv{i}", y)
        return self._head(params, _from_grid(y))


class UNet(Network):
    """Encoder/decoder with ``layers`` pooling steps and channel-concatenating skips.

    Widths are ``hidden`` at full resolution and ``2 * hidden`` below it.  Odd
    grids are zero-padded (bottom/right) to a multiple of ``2 ** layers`` and
    the output is cropped back.
    """

    def _widths(self):
        h = self.config.hidden
        return [h] + [2 * h] * self.config.layers

    def parameter_shapes(self):
        w = self._widths()
        depth = self.config.layers
        shapes = _conv_shapes("enc0", 3, w[0])
        for i in range(1, depth + 1):
            shapes.update(_conv_shapes(f"enc{i}", w[i - 1], w[i]))
        for i in range(depth - 1, -1, -1):
            shapes.update(_conv_shapes(f"up{i}", w[i + 1], w[i]))
            shapes.update(_conv_shapes(f"dec{i}", 2 * w[i], w[i]))
        shapes.update(self._head_shapes(w[0]))
        return shapes

    def _forward(self, params, code, x, rng):
        depth = self.config.layers
        side = code.side
        step = 2**depth
        padded = -(-side // step) * step
        y = T.pad_spatial(_to_grid(x, side), padded, padded)
        skips = [_conv(params, "enc0", y)]
        for i in range(1, depth + 1):
            skips.append(_conv(params, f"enc{i}", T.maxpool2(skips[-1])))
        y = skips[depth]
        for i in range(depth - 1, -1, -1):
            up = _conv(params, f"up{i}", T.upsample2(y))
            y = _conv(params, f"dec{i}", T.concat([up, skips[i]], axis=1))
        y = T.crop_spatial(y, side, side)
        return self._head(params, _from_grid(y))


_NETWORKS = {
    "CNN": CNN, "UNet": UNet, "GCN": GCN, "GCNII": GCNII, "APPNP": APPNP,
    "MultiGNN": MultiGNN, "GraphTransformer": GraphTransformer,
}


def build_network(config):
    try:
        cls = _NETWORKS[config.architecture]
    except KeyError:
        raise InvalidParameterError(f"{config.architecture} is not a neural architecture") from None
    return cls(config)
