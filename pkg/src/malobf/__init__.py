"""Benign-feature obfuscation attacks on dense malware classifiers, and hardening by augmentation."""

__version__ = "0.1.0"

from .dataset import Dataset, SyntheticConfig, generate_synthetic, load_samples, shuffle_split
from .evaluation import MatrixConfig, Metrics, compute_metrics, emit_report, run_matrix
from .feature_vocab import (
    FeatureVector,
    FeatureVocabulary,
    RawSample,
    VocabConfig,
    build_vocabulary,
    truncate_api_call,
    vectorize,
)
from .mlp import ModelParams, TrainConfig, count_params, init_model, predict, train
from .obfuscation import BenignPool, build_obfuscated_test_set, hardened_batch_stream, obfuscate_vector
