"""Tactile contact synthesis, annotation, numeric-token language grounding,
tri-modal contrastive pretraining, and a flow-matching contact policy."""

__version__ = "0.1.0"
