"""Reference evaluator for the rankforge-eval stdio protocol."""

from .session import EvalSession, SessionConfig
from .server import serve

__all__ = ["EvalSession", "SessionConfig", "serve"]
__version__ = "0.1.0"
