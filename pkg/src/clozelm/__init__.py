"""One Transformer pretrained jointly on bidirectional, unidirectional and seq2seq cloze tasks."""
from .decode import DecodeConfig, beam_search, sample_lr
from .errors import (CheckpointFormatError, ClozeLMError, DataError, DegenerateAttentionError,
                     InvalidSegmentationError, NumericFailureError, SequenceTooLongError, ShapeError)
from .estimators import ClozeClassifier, ClozeGenerator, ClozePretrainer, ClozeSpanExtractor
from .masks import AttentionMask, LMObjective, Objective, build_mask
from .model import ModelConfig, ModelParams, forward, load_checkpoint, save_checkpoint
from .tokenizer import Vocab, build_vocab, decode, encode

__version__ = "0.1.0"
