"""Multimodal emoji prediction: text, visual and middle-fusion classifiers."""

__version__ = "0.1.0"
