"""The seven networks plus classifier head that make up one model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .nn import Layer, Mlp, RmsPropState

GENERATORS = ("G_sk", "G_im", "F_sk", "F_im")
CRITICS = ("f_se", "f_sk", "f_im")


class ClassifierHead(Mlp):
    """Single linear layer producing class logits from codes."""

    def __init__(self, weight, bias):
        super().__init__([Layer(weight, bias, "identity")])

    @classmethod
    def create(cls, code_dim, n_classes, rng=None, dtype=np.float64):
        base = Mlp.build([code_dim, n_classes], ["identity"], rng, dtype)
        return cls(base.layers[0].weight, base.layers[0].bias)

    @property
    def weight(self):
        return self.layers[0].weight

    @property
    def bias(self):
        return self.layers[0].bias

    @property
    def n_classes(self):
        return self.output_dim

    def copy(self):
        return ClassifierHead(self.weight.copy(), self.bias.copy())


@dataclass
class Architecture:
    """Layer widths. Only the 512/64 boundary dims are fixed by the method."""

    feature_dim: int = 512
    code_dim: int = 64
    generator_hidden: int = 1024
    decoder_hidden: int = 1024
    critic_hidden: int = 512
    slope: float = 0.2
    shared_head: bool = True

    def __post_init__(self):
        for name in ("feature_dim", "code_dim", "generator_hidden",
                     "decoder_hidden", "critic_hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")

    def net_dims(self):
        d, m = self.feature_dim, self.code_dim
        return {
            "G_sk": [d, self.generator_hidden, m],
            "G_im": [d, self.generator_hidden, m],
            "F_sk": [m, self.decoder_hidden, d],
            "F_im": [m, self.decoder_hidden, d],
            "f_se": [m, self.critic_hidden, 1],
            "f_sk": [d, self.critic_hidden, 1],
            "f_im": [d, self.critic_hidden, 1],
        }


@dataclass
class ModelBundle:
    """Networks keyed by role, plus one RMSprop state per network.

    ``nets`` holds ``G_sk, G_im, F_sk, F_im, f_se, f_sk, f_im, head`` and,
    when the head is not shared, ``head_im``.
    """

    nets: dict
    optimizers: dict = field(default_factory=dict)

    def __getattr__(self, name):
        nets = self.__dict__.get("nets", {})
        if name in nets:
            return nets[name]
        raise AttributeError(name)

    @property
    def head_sk(self):
        return self.nets["head"]

    @property
    def head_im(self):
        return self.nets.get("head_im", self.nets["head"])

    @property
    def n_classes(self):
        return self.nets["head"].n_classes

    @property
    def feature_dim(self):
        return self.nets["G_sk"].input_dim

    @property
    def code_dim(self):
        return self.nets["G_sk"].output_dim

    def generator_side(self):
        """Names updated in the generator phase (generators and heads)."""
        return list(GENERATORS) + [n for n in ("head", "head_im") if n in self.nets]

    def critic_side(self):
        return list(CRITICS)

    def check(self):
        d, m = self.feature_dim, self.code_dim
        want = {
            "G_sk": (d, m), "G_im": (d, m), "F_sk": (m, d), "F_im": (m, d),
            "f_se": (m, 1), "f_sk": (d, 1), "f_im": (d, 1),
        }
        for name, (i, o) in want.items():
            net = self.nets[name]
            if (net.input_dim, net.output_dim) != (i, o):
                raise ShapeError(
                    f"{name} maps {net.input_dim}->{net.output_dim}, expected {i}->{o}"
                )
        for name in ("head", "head_im"):
            if name in self.nets and self.nets[name].input_dim != m:
                raise ShapeError(f"{name} expects {self.nets[name].input_dim}-D codes")

    def copy(self):
        nets = {k: v.copy() for k, v in self.nets.items()}
        opts = {
            k: RmsPropState([a.copy() for a in s.accumulators], s.learning_rate,
                            s.decay, s.epsilon)
            for k, s in self.optimizers.items()
        }
        return ModelBundle(nets, opts)

    def attach_optimizers(self, learning_rate=1e-4, decay=0.99, epsilon=1e-8):
        self.optimizers = {
            name: RmsPropState.zeros_like(net.params(), learning_rate=learning_rate,
                                          decay=decay, epsilon=epsilon)
            for name, net in self.nets.items()
        }
        return self


def build_bundle(arch, n_classes, seed=0, dtype=np.float64):
    """Freshly initialised bundle; each net draws from its own child stream."""
    if n_classes < 1:
        raise ValidationError("need at least one seen class")
    names = list(GENERATORS) + list(CRITICS) + ["head", "head_im"]
    streams = dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))
    nets = {}
    for name, dims in arch.net_dims().items():
        acts = ["leaky_relu"] * (len(dims) - 2) + ["identity"]
        nets[name] = Mlp.build(dims, acts, np.random.default_rng(streams[name]),
                               dtype, arch.slope)
    nets["head"] = ClassifierHead.create(
        arch.code_dim, n_classes, np.random.default_rng(streams["head"]), dtype)
    if not arch.shared_head:
        nets["head_im"] = ClassifierHead.create(
            arch.code_dim, n_classes, np.random.default_rng(streams["head_im"]), dtype)
    return ModelBundle(nets)
