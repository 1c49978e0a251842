"""tempofuse: temporal masked multimodal pretraining at desk scale.

Synthetic multi-modal scene grids, a rotary-time transformer trained to
reconstruct masked tokens, and the downstream fine-tuning / evaluation
machinery to measure what the temporal attention actually buys.
"""

__version__ = "0.1.0"
