from .batching import Batch, Sample, collate, pad_batch, prepare_sample, samples_from_records
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .losses import class_weights, focal_loss, weighted_bce
from .model import (
    Model,
    ModelConfig,
    char_embed,
    forward,
    graph_conv,
    post_block,
    predict_proba,
    self_attention,
    seq_conv,
)
from .optim import AdamHyper, AdamState, adam_step
from .train import History, TrainConfig, TrainingDiverged, class_mask, train
