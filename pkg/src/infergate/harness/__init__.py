from .config import ConfigError, ExperimentConfig, default_config, load_config, parse_config
from .experiment import RunResult, compare, run_experiment
from .protocol import Request, Response, Status, decode_message, encode_message

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Request",
    "Response",
    "RunResult",
    "Status",
    "compare",
    "decode_message",
    "default_config",
    "encode_message",
    "load_config",
    "parse_config",
    "run_experiment",
]
