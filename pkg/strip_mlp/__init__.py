"""Strip MLP - hierarchical strip-mixing vision MLP with cost analysis and a desk-scale trainer."""

__version__ = '0.1.0'
