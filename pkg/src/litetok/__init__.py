"""Token-compressive video encoding toolkit: WAP, a strided student encoder,
compressed-token distillation and an encoder/LLM cost model."""

__version__ = "0.1.0"
