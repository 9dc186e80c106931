"""Metaheuristic search over multi-channel LSTM fusion classifiers."""
from .evaluation import (FoldError, LooResult, NetworkScale, RocCurve, confusion_and_metrics,
                         loo_evaluate, optimal_cutoff, postprocess_majority, roc_auc,
                         tfcv_fitness)
from .genome import ConfigError, Genome, ModelConfig, decode_genome, encode_config, \
    enumerate_distinct_configs
from .network import (FusionNetwork, TrainSpec, build_network, count_parameters, gradient_check,
                      load_checkpoint, predict_proba, save_checkpoint, train)
from .optimizers import GaConfig, OptimizerRunLog, PsoConfig, run_ga, run_pso
from .seeding import derive_seed
from .signals import (DataError, MultiChannelRecording, SynthParams, WindowedDataset,
                      generate_synthetic_subject, load_recording, preprocess, save_recording)

__version__ = "0.1.0"
