from .engine import Tape, Tensor, as_tensor
from .rng import Rng, derive_seed
from . import ops

__all__ = ["Tape", "Tensor", "as_tensor", "Rng", "derive_seed", "ops"]
