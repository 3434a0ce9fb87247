"""Bridge from pretrained masked-language-model encoders to lexroute files."""

from .exporter import ExportConfig, ExportError, export_corpus

__all__ = ["ExportConfig", "ExportError", "export_corpus"]
