"""pacrf: few-shot trigger tagging with a prototype-aware conditional random field.

Modules, bottom-up: ``numeric`` (tape autodiff), ``labelspace`` (BIO labels,
spans, micro-F1), ``episodes`` (corpora, N-way-K-shot sampling, synthetic data),
``encoder``, ``emission``, ``transition``, ``crf``, ``trainer``, ``checkpoint``
and ``cli``.
"""

__version__ = "0.1.0"

from .errors import PacrfError
from .labelspace import LabelSet, TaggedSentence, TriggerSpan, build_label_set, labels_to_spans, micro_f1
from .episodes import Corpus, Episode, SyntheticConfig, generate_synthetic, load_corpus, sample_episode
from .trainer import TrainingConfig, build_variant, evaluate, train
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "PacrfError", "LabelSet", "TaggedSentence", "TriggerSpan", "build_label_set", "labels_to_spans",
    "micro_f1", "Corpus", "Episode", "SyntheticConfig", "generate_synthetic", "load_corpus",
    "sample_episode", "TrainingConfig", "build_variant", "evaluate", "train", "Checkpoint",
    "load_checkpoint", "save_checkpoint", "__version__",
]
