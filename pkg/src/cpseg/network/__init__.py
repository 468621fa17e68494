"""Network architecture, parameter registry and checkpoints."""
from .layers import AttentionModule, BatchNorm, Conv, ConvBNAct, PReLU, ResidualBlock, SupervisionHead
from .model import ForwardOutputs, ModelConfig, Network, Supervision, param_count
from .params import CheckpointError, ParameterStore, load_into, read_checkpoint, save_checkpoint

__all__ = [
    "AttentionModule", "BatchNorm", "CheckpointError", "Conv", "ConvBNAct", "ForwardOutputs",
    "ModelConfig", "Network", "PReLU", "ParameterStore", "ResidualBlock", "Supervision",
    "SupervisionHead", "load_into", "param_count", "read_checkpoint", "save_checkpoint",
]
