"""Offline trainer for the factored action-mixture network."""

from .dataset import Dataset, collate, load_dataset, split_by_group
from .model import AXES, MdnNet, NetSpec, mdn_loss, mixture_log_prob, nnelu, reference_forward
from .train import TrainConfig, TrainResult, export, metadata_for, train
from .weights_io import WeightsFile, WeightsIOError, read_weights, write_weights

__version__ = "0.1.0"
