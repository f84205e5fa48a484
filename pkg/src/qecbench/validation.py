"""Small argument checks shared by the public entry points."""

import numbers

import numpy as np

from .exceptions import InvalidParameterError


def check_distance(distance):
    if not isinstance(distance, numbers.Integral) or isinstance(distance, bool):
        raise InvalidParameterError(f"distance must be an integer, got {distance!r}")
    if distance < 2:
        raise InvalidParameterError(f"distance must be >= 2, got {distance}")
    return int(distance)


def check_probability(p, name="p"):
    try:
        value = float(p)
    except (TypeError, ValueError):
        raise InvalidParameterError(f"{name} must be a number, got {p!r}") from None
    if not 0.0 <= value <= 1.0:
        raise InvalidParameterError(f"{name} must lie in [0, 1], got {p}")
    return value


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise InvalidParameterError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_bits(array, length, name):
    """Coerce ``array`` to a uint8 0/1 array whose last axis has ``length`` entries."""
    arr = np.asarray(array)
    if arr.ndim == 0 or arr.shape[-1] != length:
        raise InvalidParameterError(
            f"{name} must have trailing length {length}, got shape {arr.shape}"
        )
    if arr.dtype != np.uint8:
        if np.any((arr != 0) & (arr != 1)):
            raise InvalidParameterError(f"{name} must contain only 0/1 values")
        arr = arr.astype(np.uint8)
    return arr


def as_rng(rng):
    """Accept a Generator, an int seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, numbers.Integral):
        return np.random.Generator(np.random.Philox(key=0 if rng is None else int(rng)))
    raise InvalidParameterError(f"rng must be a numpy Generator or integer seed, got {rng!r}")
