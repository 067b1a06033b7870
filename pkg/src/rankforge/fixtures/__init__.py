"""Bundled network description fixtures."""
from pathlib import Path

_HERE = Path(__file__).parent


def fixture_path(name: str) -> Path:
    """Path to a bundled .model fixture, e.g. fixture_path("alexnet")."""
    path = _HERE / f"{name}.model"
    if not path.exists():
        raise FileNotFoundError(f"no bundled fixture named {name!r}")
    return path
