from .tensor import Tensor, concat, zeros
from .layers import Dense, Dropout, Network, he_init
from .optim import Adam, AdamConfig, lr_at

__all__ = [
    "Tensor", "concat", "zeros",
    "Dense", "Dropout", "Network", "he_init",
    "Adam", "AdamConfig", "lr_at",
]
