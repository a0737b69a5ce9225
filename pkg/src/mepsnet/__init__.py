"""MEPSNet restoration toolkit: SHDD synthesis, a small autodiff core, training and evaluation."""
from .model import DESK_DEFAULT, DESK_TINY, PAPER_DEFAULT, MepsNet, MepsNetConfig
from .rng import Rng

__all__ = ["MepsNet", "MepsNetConfig", "PAPER_DEFAULT", "DESK_DEFAULT", "DESK_TINY", "Rng"]
