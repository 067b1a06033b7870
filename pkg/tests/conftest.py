import numpy as np
import pytest

from rankforge.fixtures import fixture_path
from rankforge.model import LayerSpec, NetworkModel, load_model


@pytest.fixture(scope="session")
def alexnet():
    return load_model(fixture_path("alexnet"))


@pytest.fixture(scope="session")
def vgg16():
    return load_model(fixture_path("vgg16"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                name = rep.nodeid.split("::")[-1]
                lines.append(f"{'PASS' if rep.passed else 'FAIL'}: {name}")
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split(": ")[1]):
            terminalreporter.write_line(line)


def tiny_model(n_layers=2, seed=0, with_weights=True, d=3, S=4, T=6, hw=8):
    """Small synthetic model with random weights, for proxy and decompose tests."""
    rng = np.random.default_rng(seed)
    layers, weights = [], {}
    for i in range(n_layers):
        layer = LayerSpec(name=f"conv{i}", kind="convolutional", d=d, S=S, T=T,
                          H1=hw, W1=hw, H2=hw, W2=hw, scheme="spatial")
        layers.append(layer)
        if with_weights:
            weights[layer.name] = rng.normal(size=layer.weight_shape()).astype(np.float32)
    return NetworkModel(layers=tuple(layers), weights=weights)
