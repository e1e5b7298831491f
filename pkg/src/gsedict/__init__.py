"""Gaussian Shading watermarks with EDICT coupled-latent inversion on a toy latent diffusion model."""
from .codec import (DiffusedMessage, Watermark, WatermarkConfig, bit_accuracy, capacity,
                    decode_watermark, decrypt, diffuse, embed, encode_watermark, encrypt,
                    extract_symbols, recover_watermark)
from .edict import (CoupledLatents, DiffusionSchedule, ddim_coeffs, ddim_invert, ddim_sample,
                    edict_denoise_step, edict_invert, edict_noise_step, edict_sample)
from .latent import make_rng, normal_cdf, normal_quantile, standard_normal_tensor
from .toy import ToyDenoiser, ToyPipeline, decode, encode

__version__ = "0.1.0"
