from .config import ConfigError, RunConfig
from .main import main

__all__ = ["ConfigError", "RunConfig", "main"]
