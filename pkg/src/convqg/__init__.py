"""convqg: constraint-guided visual question generation on synthetic scenes,
trained with dual margin-contrastive objectives against frozen single-modality
question branches."""

__version__ = "0.1.0"

from .autodiff import Graph, GraphError, Tensor, backward, set_debug_checks
from .kernels import backend

__all__ = [
    "Graph",
    "GraphError",
    "Tensor",
    "backward",
    "set_debug_checks",
    "backend",
    "__version__",
]
