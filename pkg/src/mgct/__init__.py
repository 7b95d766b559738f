"""Multimodal survival prediction: genomic and histology bags fused by
mutual-guided cross-attention, trained with a discrete-time hazard loss."""

__version__ = "0.1.0"

from . import dataio, embedders, mgct_core, numkit, survival, train  # noqa: F401
