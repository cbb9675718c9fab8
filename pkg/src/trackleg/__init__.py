"""Track-legged quadruped step-negotiation simulator."""
from .model import ModelConfig, Robot, load_model, reference_model, save_model

__all__ = ["ModelConfig", "Robot", "load_model", "reference_model", "save_model"]
__version__ = "0.1.0"
