"""Self-supervised CT denoising with wavelet-domain input corruption and
frequency-aware contrastive feature matching."""

from .backbone import Backbone, BackboneConfig
from .config import TrainConfig, load_config
from .data import PhantomSpec, generate_phantom, load_image, save_image, simulate_ldct
from .fam import EncoderConfig, EncoderPair, fam_loss
from .image import Image
from .metrics import evaluate_pair, nps, psnr, ssim, subband_difference
from .trainer import Trainer, fit
from .wavelet import SubbandSet, dwt2, idwt2
from .wia import NoiseConfig, corrupt

__version__ = "0.1.0"

__all__ = [
    "Backbone", "BackboneConfig", "EncoderConfig", "EncoderPair", "Image", "NoiseConfig",
    "PhantomSpec", "SubbandSet", "TrainConfig", "Trainer", "corrupt", "dwt2", "evaluate_pair",
    "fam_loss", "fit", "generate_phantom", "idwt2", "load_config", "load_image", "nps", "psnr",
    "save_image", "simulate_ldct", "ssim", "subband_difference",
]
