"""Zero-shot image tagging by ranking word vectors along a principal direction."""

from fast0tag.embeddings import EmbeddingTable, load_embeddings, normalize, subset
from fast0tag.dataset import (
    TaggedImageSet,
    VocabularyPartition,
    derive_rule,
    load_dataset,
    make_partition,
)
from fast0tag.errors import DataError, Fast0TagError, NumericalError
from fast0tag.evalkit import EvalReport, evaluate, image_average_precision, miap, prf_at_k
from fast0tag.linear_map import LinearDirectionMap, apply_linear, fit_linear, two_stage_train
from fast0tag.ranknet import MlpParams, TrainConfig, train
from fast0tag.ranksvm import RankingDirection, SvmOptions, train_rank_svm
from fast0tag.tagger import RankedTagList, score_tags, tag_image

__version__ = "0.1.0"
