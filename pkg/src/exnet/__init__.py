"""Few-shot binary text classification conditioned on in-context support
examples: a shared transformer encoder, asymmetric projections, and a
cross-attention fusion that is invariant to support order and support count.
"""

__version__ = "0.1.0"
