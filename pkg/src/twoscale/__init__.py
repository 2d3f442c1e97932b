"""Two-scale model of sulfate corrosion in concrete: cell problems, upscaled
simulation and an epsilon-resolved reference solver."""

__version__ = "0.1.0"
