"""Remote-sensing instruction dataset toolkit.

Builds honest (factual + deceptive) and versatile instruction datasets from
object-detection annotations, drives LLM captioning protocols, and scores
model predictions with the matching/judge/geometry metric suite.
"""

__version__ = "0.1.0"
