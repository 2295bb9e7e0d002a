"""Parameter-efficient adaptation of a toy text-to-image latent diffusion model to video."""

__version__ = "0.1.0"
