"""threadtone: reply-tree analytics for conflictual language in discussions.

Parses threaded corpora into reply trees, annotates each reply against its
parent along three conflict dimensions with a replicated schema-constrained
backend (live HTTP or deterministic mock), computes reliability statistics
and tree/timing features, and fits the M1-M6 linear models with
discussion-clustered sandwich standard errors.
"""

__version__ = "0.1.0"
