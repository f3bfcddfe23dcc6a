"""INT8 sparse model toolkit: block coding, packaging, execution and
budgeted architecture search."""

from tinyforge._core import (
    BudgetExceeded,
    Package,
    ParseError,
    analyze_space,
    blockwise_roundtrip,
    compression_ratio,
    encode_model,
    encoded_size,
    prune_blockwise,
    resource_report,
    sample_demo_model,
    search,
)

__all__ = [
    "BudgetExceeded",
    "Package",
    "ParseError",
    "analyze_space",
    "blockwise_roundtrip",
    "compression_ratio",
    "encode_model",
    "encoded_size",
    "prune_blockwise",
    "resource_report",
    "sample_demo_model",
    "search",
]
