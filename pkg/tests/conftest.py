import numpy as np
import pytest
import torch

from advst.stmodel import CorpusConfig, train_surrogate

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def surrogate():
    """Default toy testbed model: 4 languages, 20 sentences, seed 42."""
    return train_surrogate(CorpusConfig(), seed=42)


@pytest.fixture(scope="session")
def corpus(surrogate):
    return surrogate.corpus


class RiggedModel:
    """Hand-built adapter: fixed logit tables keyed by previous token."""

    def __init__(self, vocab, table, default_peak=None):
        self.vocabulary = vocab
        self.sample_rate_hz = 16000
        self.gradient_available = True
        self.table = table
        self.default_peak = default_peak

    def step_logits(self, context, prev_ids):
        prev = int(prev_ids)
        v = len(self.vocabulary)
        logits = torch.full((v,), -20.0, dtype=torch.float64)
        peak = self.table.get(prev, self.default_peak)
        if peak is not None:
            logits[peak] = 20.0
        return logits


def central_difference(f, x, step=1e-4):
    """Finite-difference gradient of scalar f at numpy point x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * step)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom
