from .core_math import Mlp, ParamVector, Gradient, grad_check
from .config import TrainConfig, parse_config
