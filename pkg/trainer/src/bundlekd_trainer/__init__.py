"""LoRA fine-tuning and OpenAI-compatible serving for bundlekd student models."""

__version__ = "0.1.0"
