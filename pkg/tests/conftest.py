"""Shared fixtures."""

import numpy as np
import pytest

from sdpverify.network import Network


@pytest.fixture
def tiny_net():
    """One ReLU neuron read off by two logits; margin on a box is min relu(x)."""
    return Network(
        (np.array([[1.0]]), np.array([[1.0], [0.0]])),
        (np.array([0.0]), np.array([0.0, 0.0])),
    )
