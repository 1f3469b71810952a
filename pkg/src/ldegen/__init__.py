"""Generative autoencoders with an autoregressive latent density estimator."""
from .autoencoder import (AeConfig, AeModel, MaskSchedule, ae_init, ae_train_step, apply_latent_mask, decode,
                          effective_dim, encode, interpolate_latents, recon_loss, train_autoencoder)
from .lde import (LdeConfig, LdeModel, MdnParams, conditional_log_density, lde_forward, lde_init,
                  lde_log_density, lde_nll_loss, lde_sample, train_lde)

__version__ = "0.1.0"
