"""Masked diffusion language model with indicator-terminated dynamic blocks and
entropy-descent rewards for GRPO post-training."""

from .seq import BlockPartition, BlockSpan, DomainError, Sequence, Vocabulary

__version__ = "0.1.0"
__all__ = ["BlockPartition", "BlockSpan", "DomainError", "Sequence", "Vocabulary"]
