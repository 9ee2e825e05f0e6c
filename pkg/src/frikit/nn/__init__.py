from .autodiff import Tape, Tensor, backward
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .gradcheck import gradient_check
from .optim import Adam, AdamState, adam_step

__all__ = ["Tensor", "Tape", "backward", "Adam", "AdamState", "adam_step", "gradient_check",
           "load_checkpoint", "save_checkpoint"]
