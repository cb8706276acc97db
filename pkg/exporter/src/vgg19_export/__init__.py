"""Offline converter: torchvision VGG19 checkpoints -> cnnbtrk model files."""

from .export import ExportError, ExportManifest, export, vgg19_layout

__version__ = "0.1.0"
