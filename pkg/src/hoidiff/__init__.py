"""Text-conditioned human-object interaction diffusion with relation
intervention, runnable end-to-end on a procedural dataset."""

__version__ = "0.1.0"
