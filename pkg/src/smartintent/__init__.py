"""Smart contract unsafe-intent detection: function extraction, byte-level BPE,
a small masked-language-model encoder, and a masked BiLSTM multi-label classifier."""

__version__ = "0.1.0"

from smartintent.dataset import INTENT_CATEGORIES, NUM_CLASSES, SourceContract

__all__ = ["INTENT_CATEGORIES", "NUM_CLASSES", "SourceContract", "__version__"]
