"""Bi-modal misogyny-meme classification at desk scale.

Text-graph construction (PMI word-word edges, TF-IDF document-word
edges, symmetric degree normalization), graph-attention and transformer
encoders with exact gradients, a stream-weighting + representation
fusion network, teacher-forced multi-label losses, and dataset-/model-
level voting ensembles with nonparametric significance testing.
"""

__version__ = "0.1.0"
