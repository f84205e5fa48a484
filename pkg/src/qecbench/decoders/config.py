from dataclasses import asdict, dataclass, replace

from ..exceptions import InvalidParameterError

ARCHITECTURES = (
    "CNN", "UNet", "GCN", "GCNII", "APPNP", "MultiGNN", "GraphTransformer", "Lookup", "TrivialNoError",
)
NEURAL = ARCHITECTURES[:7]

_ALIASES = {name.lower(): name for name in ARCHITECTURES}
_ALIASES.update({"u-net": "UNet", "multi-gnn": "MultiGNN", "gt": "GraphTransformer",
                 "graph-transformer": "GraphTransformer", "transformer": "GraphTransformer",
                 "lut": "Lookup", "trivial": "TrivialNoError"})

# Reference defaults at d=3; GraphTransformer uses heads 4 / dropout 0.1 throughout.
_DEFAULTS = {
    "CNN": dict(layers=1),
    "UNet": dict(layers=2),
    "GCN": dict(layers=3),
    "GCNII": dict(layers=4, alpha=0.1, beta=0.5),
    "APPNP": dict(layers=5, alpha=0.5),
    "MultiGNN": dict(layers=5),
    "GraphTransformer": dict(layers=3, heads=4, dropout=0.1),
    "Lookup": dict(layers=1),
    "TrivialNoError": dict(layers=1),
}


# Reference hyperparameter tables, keyed by (distance, p).  The GCNII d=3/p=0.05 row repeats
# APPNP's settings; its neighbours' values (layers 4) are used instead.
_PROBS = (0.005, 0.01, 0.05)
_LAYERS_BY_SETTING = {
    "GCN": {3: (3, 4, 6), 5: (4, 4, 6), 7: (4, 4, 6)},
    "MultiGNN": {3: (5, 5, 7), 5: (5, 5, 7), 7: (7, 7, 7)},
    "GCNII": {3: (4, 4, 4), 5: (5, 5, 5), 7: (5, 5, 5)},
    "GraphTransformer": {3: (3, 3, 5), 5: (5, 5, 5), 7: (5, 5, 5)},
}
_BATCH_BY_SETTING = {3: (32, 32, 64), 5: (256, 256, 1024), 7: (1024, 4096, 4096)}


def _setting_index(p):
    return min(range(len(_PROBS)), key=lambda i: abs(_PROBS[i] - p))


def tabulated_batch_size(distance, p):
    """Tabulated batch size for the nearest tabulated (d, p)."""
    d = min(_BATCH_BY_SETTING, key=lambda k: abs(k - distance))
    return _BATCH_BY_SETTING[d][_setting_index(p)]


def canonical_architecture(name):
    try:
        return _ALIASES[str(name).lower()]
    except KeyError:
        raise InvalidParameterError(
            f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}"
        ) from None


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    layers: int = 1
    hidden: int = 16
    alpha: float = 0.0
    beta: float = 1.0
    heads: int = 4
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "architecture", canonical_architecture(self.architecture))
        if self.layers < 1:
            raise InvalidParameterError(f"layers must be >= 1, got {self.layers}")
        if self.hidden < 1:
            raise InvalidParameterError(f"hidden must be >= 1, got {self.hidden}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidParameterError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.architecture == "GraphTransformer" and self.hidden % self.heads:
            raise InvalidParameterError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")

    @classmethod
    def default(cls, architecture, **overrides):
        arch = canonical_architecture(architecture)
        values = dict(_DEFAULTS[arch])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(arch, **values)

    @classmethod
    def for_setting(cls, architecture, distance, p, **overrides):
        """Defaults for the nearest tabulated (distance, p) cell."""
        arch = canonical_architecture(architecture)
        table = _LAYERS_BY_SETTING.get(arch)
        if table is not None and overrides.get("layers") is None:
            d = min(table, key=lambda k: abs(k - distance))
            overrides["layers"] = table[d][_setting_index(p)]
        return cls.default(arch, **overrides)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)
