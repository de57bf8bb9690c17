"""Safe-set projections for reinforcement learning with unbiased policy gradients."""

__version__ = "0.1.0"
