"""Time-fractional diffusion with separable sources: forward and inverse tools."""
