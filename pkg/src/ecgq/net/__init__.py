from .autoencoder import AutoencoderDet
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import SGD, sgd_step
from .unet import UNetLite

__all__ = ["AutoencoderDet", "UNetLite", "SGD", "sgd_step", "save_checkpoint", "load_checkpoint"]
