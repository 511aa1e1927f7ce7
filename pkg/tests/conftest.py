import numpy as np
import pytest

from wadcmsn.losses import Batch
from wadcmsn.model import Architecture, build_bundle


def reference_mlp(net, x):
    """Plain re-evaluation of an Mlp, independent of wadcmsn.nn.forward."""
    a = np.array(x, dtype=np.float64)
    for layer in net.layers:
        z = np.einsum("oi,bi->bo", layer.weight, a) + layer.bias
        if layer.activation == "relu":
            a = np.where(z > 0, z, 0.0)
        elif layer.activation == "leaky_relu":
            a = np.where(z > 0, z, layer.slope * z)
        elif layer.activation == "tanh":
            a = np.tanh(z)
        else:
            a = z
    return a


TINY = Architecture(feature_dim=6, code_dim=4, generator_hidden=5, decoder_hidden=5,
                    critic_hidden=3)


def tiny_instance(seed, arch=TINY, n_classes=3, batch=3, shared_head=True):
    rng = np.random.default_rng(seed)
    if not shared_head:
        arch = Architecture(**{**arch.__dict__, "shared_head": False})
    model = build_bundle(arch, n_classes, seed=seed)
    # push weights off the tiny Glorot scale so nonlinearities matter
    for net in model.nets.values():
        for p in net.params():
            p += rng.normal(scale=0.3, size=p.shape)
    b = Batch(rng.normal(size=(batch, arch.feature_dim)),
              rng.normal(size=(batch, arch.feature_dim)),
              rng.normal(size=(batch, arch.code_dim)),
              rng.integers(0, n_classes, size=batch))
    return model, b


@pytest.fixture
def tiny():
    return tiny_instance(0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
