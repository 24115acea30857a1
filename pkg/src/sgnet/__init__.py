"""Soft-gated residual networks for heatmap keypoint estimation.

Self-contained numpy implementation: autodiff tape, stacked
encoder-decoder architecture with gated skip connections, training and
evaluation protocol, synthetic data, and a CLI. Hot kernels (im2col,
col2im, pooling) have a compiled backend with a pure-numpy fallback; see
``sgnet.kernels.BACKEND`` for which one loaded.

SGNET_THREADS caps BLAS/OpenMP parallelism. It must take effect before
numpy first loads, so it is applied here, at package import, ahead of any
submodule import.
"""

import os

_threads = os.environ.get("SGNET_THREADS", "").strip()
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CheckpointMismatchError,
    ConfigurationError,
    DataError,
    NumericalError,
    ParseError,
    SgnetError,
    UsageError,
)
from .tensor import Tape, Tensor, backward  # noqa: E402
from .network import Network, NetworkConfig, build  # noqa: E402
from .training import TrainConfig, init_network, train  # noqa: E402

__all__ = [
    "CheckpointMismatchError",
    "ConfigurationError",
    "DataError",
    "Network",
    "NetworkConfig",
    "NumericalError",
    "ParseError",
    "SgnetError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "UsageError",
    "backward",
    "build",
    "init_network",
    "train",
    "__version__",
]
