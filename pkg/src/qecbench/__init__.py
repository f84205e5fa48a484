"""Surface-code decoding benchmark: lattice, noise, datasets, autodiff, decoders and sweeps."""

__version__ = "0.1.0"

from .lattice import SurfaceCode, build_code  # noqa: E402

__all__ = ["SurfaceCode", "build_code", "__version__"]
