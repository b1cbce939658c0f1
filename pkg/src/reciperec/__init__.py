"""Heterogeneous graph recipe recommender with a hierarchical-attention GNN,
an ingredient set transformer and a joint ranking + contrastive objective."""

__version__ = "0.1.0"
