"""Next-token models over holistic token sequences and nucleus sampling."""

from .base import NextTokenModel
from .checkpoint import load_checkpoint, save_checkpoint
from .ngram import NGramModel, fit_ngram
from .sampling import SamplerConfig, generate, generate_batch, nucleus, nucleus_sample
from .transformer import DecoderOnlyTransformer, TransformerConfig, TransformerModel, train_transformer

__all__ = [
    "NextTokenModel", "NGramModel", "fit_ngram", "SamplerConfig", "generate", "generate_batch",
    "nucleus", "nucleus_sample", "DecoderOnlyTransformer", "TransformerConfig", "TransformerModel",
    "train_transformer", "load_checkpoint", "save_checkpoint",
]
