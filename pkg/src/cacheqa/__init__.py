"""cacheqa: conversational, trace-grounded cache replacement analysis.

Simulates set-associative caches over access traces, stores eviction-annotated
records, retrieves verifiable per-PC/per-address evidence, generates grounded
answers, and scores the pipeline against a two-tier benchmark suite.
"""

__version__ = "0.1.0"

from cacheqa.errors import CacheQAError

__all__ = ["CacheQAError", "__version__"]
