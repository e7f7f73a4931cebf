"""topicforge: co-click driven topic keyword mining and page generation.

The pipeline learns query intention embeddings from co-click history,
clusters candidate queries per product type, deduplicates them against
the existing page catalog, selects topic keywords under a quota, emits
topic page specs, and evaluates impact with a date-split test harness.
"""

__version__ = "0.1.0"
