"""Text-guided MIL classification over bags of frame features.

Core pieces: a minimal autodiff tensor engine (:mod:`tgdfer.tensor`), frozen
mock encoders and the TGFB/TGTE file formats, a multi-grained temporal
network, prompt fusion into enhanced per-class label features, a cosine MIL
bag head, and a deterministic trainer with UAR/WAR evaluation.
"""

from .bagfile import DatasetManifest, FrameBag, load_manifest, read_bag, write_bag
from .encoders import FrozenEncoder, TokenSequence, tokenize
from .milhead import (
    BagPrediction,
    InfluenceProfile,
    bag_loss,
    influence,
    predict_bag,
    predict_topk,
)
from .model import BagModel, DatasetInfo, ModelConfig, load_checkpoint, save_checkpoint
from .prompts import (
    LabelEmbeddings,
    PromptSet,
    alignment_scores,
    embed_labels,
    enhance_labels,
    visual_prompt,
)
from .synthetic import SyntheticSpec, generate
from .temporal import EncoderLayer, SegmentationConfig, TemporalNet, segment, segment_starts
from .tensor import (
    ParameterSet,
    Tape,
    Tensor,
    backward,
    cosine_similarity,
    cross_entropy,
    layer_norm,
    matmul,
    sgd_step,
    softmax,
)
from .training import TrainConfig, evaluate, influence_report, lr_at, train

__version__ = "0.1.0"
