"""Review network sequence-to-sequence engine (encoder -> reviewer -> decoder)."""
from .model import Instance, ModelConfig, ReviewNet
from .reviewer import ReviewerConfig
from .training import TrainConfig, fit

__all__ = ["Instance", "ModelConfig", "ReviewNet", "ReviewerConfig", "TrainConfig", "fit"]
__version__ = "0.1.0"
