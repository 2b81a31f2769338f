"""Next-item recommender: causal attention with pooled long queries, trained with a transition-count teacher."""

__version__ = "0.1.0"
