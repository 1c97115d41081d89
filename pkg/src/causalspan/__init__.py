"""causalspan: generative cause/effect span extraction for financial text.

An encoder-decoder with dual pointer networks emits a variable-length
sequence of (cause span, effect span) tuples per text segment. The package
covers corpus ingestion, training with hand-verified gradients, constrained
greedy decoding, and token-level / exact-match F1 evaluation with a k-fold
cross-validation harness and CLI.
"""

__version__ = "0.1.0"

from .corpus import Causality, Example, Segment, Token  # noqa: F401
