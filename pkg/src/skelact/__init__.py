"""Skeleton-based action recognition: ingestion, normalization, augmentation,
windowing, a numpy temporal convolutional classifier, and a streaming runtime."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, ModelError, ParseError, SkelactError
from .skeleton import (COMMON, NTU25, TRACKER19, ClassTable, JointMap, JointSet, SkeletonFrame,
                       SkeletonSequence, flatten, joint_set, load_class_table, load_joint_map,
                       remap, unflatten)
from .preprocess import NormalizationConfig, normalize
from .augment import AugmentConfig, Augmenter
from .windowing import WindowConfig, WindowTensor, pack, resample, sliding_windows
from .model import ModelConfig, ModelParams, TrainConfig, forward, init_params, predict
from .synth import SynthConfig, domain_shift, generate
from .train import ABLATION_GRID, Pipeline, Toggles, evaluate, run_ablation, train
