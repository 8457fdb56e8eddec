"""Bundle-generation knowledge distillation pipeline and evaluation harness."""

__version__ = "0.1.0"
