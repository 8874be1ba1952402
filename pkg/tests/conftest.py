import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpusgen import build_corpus  # noqa: E402


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The bundled 64-image fixture corpus (48 real + 16 synthetic)."""
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(root)


@pytest.fixture(scope="session")
def warm_solver():
    """Trigger the max-flow JIT once so timed tests measure steady state."""
    from dermaudit.graphcut import FlowNetwork, max_flow
    net = FlowNetwork(3, 0, 2)
    net.add_edge(0, 1, 1.0)
    net.add_edge(1, 2, 1.0)
    max_flow(net)
