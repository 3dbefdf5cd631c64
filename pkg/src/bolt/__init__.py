"""Controlled text generation by tuning biases over language-model logits."""

__version__ = "0.1.0"
