"""Agentic multimodal retrieval engine for exploring scientific collections."""

__version__ = "0.1.0"
