"""Loss terms of the adversarial cross-modal objective, with gradients.

Every expectation is a batch mean and every norm sums over feature
coordinates. Term functions return ``(value, grads)`` where ``grads``
holds the gradient of ``value`` itself: critics ascend it, generators
descend it.

Two aggregates drive training:

* ``dis_total`` -- minus the three adversarial values; minimised over
  critic parameters.
* ``ps_total`` -- generator part of the adversarial values plus the cycle,
  classification and identity-matching terms; minimised over generator
  and classifier-head parameters.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .nn import backward, forward

ADVERSARIAL_MODES = ("wasserstein", "standard")


@dataclass
class Batch:
    x: np.ndarray       # (b, d) sketch features
    y: np.ndarray       # (b, d) image features
    s: np.ndarray       # (b, m) semantic code of each row's class
    labels: np.ndarray  # (b,) seen-class index

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        b = self.x.shape[0]
        if self.x.ndim != 2 or self.y.ndim != 2 or self.s.ndim != 2:
            raise ShapeError("x, y and s must be 2-D")
        if self.y.shape[0] != b or self.s.shape[0] != b or self.labels.shape != (b,):
            raise ShapeError(
                f"batch dims disagree: x {self.x.shape}, y {self.y.shape}, "
                f"s {self.s.shape}, labels {self.labels.shape}"
            )
        if self.x.shape[1] != self.y.shape[1]:
            raise ShapeError("sketch and image features differ in width")

    @property
    def size(self):
        return self.x.shape[0]


@dataclass
class LossWeights:
    adv: float = 1.0
    cyc: float = 1.0
    cls: float = 1.0
    iml: float = 1.0


@dataclass
class LossReport:
    wadv_se: float
    wadv_sk: float
    wadv_im: float
    cyc_sk: float
    cyc_im: float
    cls_sk: float
    cls_im: float
    iml: float
    gen: float
    total: float
    dis_total: float
    ps_total: float

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Elementary reductions: value and gradient w.r.t. their array argument.


def _mean_l1(r):
    b = r.shape[0]
    return float(np.abs(r).sum() / b), np.sign(r) / b


def _mean_sqnorm(r):
    b = r.shape[0]
    return float((r * r).sum() / b), (2.0 / b) * r


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _cross_entropy(logits, labels):
    b, n_classes = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    logp = _log_softmax(logits)
    rows = np.arange(b)
    value = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return value, grad / b


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-_softplus(-z))


def _critic_real(out, mode, weight=1.0):
    """Critic score on real samples and its gradient w.r.t. the output."""
    b = out.shape[0]
    if mode == "wasserstein":
        return weight * float(out.mean()), np.full_like(out, weight / b)
    # log sigmoid(o)
    return weight * float(-_softplus(-out).mean()), weight * _sigmoid(-out) / b


def _critic_fake(out, mode):
    """Contribution of generated samples to the adversarial value."""
    b = out.shape[0]
    if mode == "wasserstein":
        return -float(out.mean()), np.full_like(out, -1.0 / b)
    # log(1 - sigmoid(o))
    return float(-_softplus(out).mean()), -_sigmoid(out) / b


def _generator_loss(out, mode):
    """Generator-side loss on critic outputs for generated samples."""
    b = out.shape[0]
    if mode == "wasserstein":
        return -float(out.mean()), np.full_like(out, -1.0 / b)
    # non-saturating: -log sigmoid(o)
    return float(_softplus(-out).mean()), -_sigmoid(-out) / b


# ---------------------------------------------------------------------------
# A fixed composition of forward passes with accumulated upstream gradients.


class _Node:
    __slots__ = ("name", "net", "out", "tape", "parent", "grad")

    def __init__(self, name, net, out, tape, parent):
        self.name, self.net, self.out, self.tape, self.parent = name, net, out, tape, parent
        self.grad = None

    def add(self, g):
        self.grad = g if self.grad is None else self.grad + g


class _Graph:
    def __init__(self):
        self.nodes = []

    def apply(self, name, net, inp, cached=None):
        """Forward ``net`` on ``inp`` (array or node); ``cached`` reuses (out, tape)."""
        parent = inp if isinstance(inp, _Node) else None
        if cached is None:
            if parent is None:
                cached = forward(net, inp)
            else:
                cached = forward(net, parent.out, check_finite=False)
        node = _Node(name, net, cached[0], cached[1], parent)
        self.nodes.append(node)
        return node

    def backprop(self, names, traverse=None):
        """Push accumulated gradients to the inputs; return param grads per name.

        With ``traverse`` set, only nodes of those nets are backpropagated.
        """
        grads = {}
        for node in reversed(self.nodes):
            if node.grad is None or (traverse is not None and node.name not in traverse):
                continue
            want = node.name in names
            if not want and node.parent is None:
                continue
            pgrads, gin = backward(node.net, node.tape, node.grad,
                                   need_params=want, need_input=node.parent is not None)
            if want:
                if node.name in grads:
                    for acc, g in zip(grads[node.name], pgrads):
                        acc += g
                else:
                    grads[node.name] = pgrads
            if node.parent is not None:
                node.parent.add(gin)
        for n in names:
            if n not in grads:
                grads[n] = [np.zeros_like(p) for p in self._net(n).params()]
        return grads

    def reset(self):
        for node in self.nodes:
            node.grad = None

    def _net(self, name):
        for node in self.nodes:
            if node.name == name:
                return node.net
        raise KeyError(name)


def _check_mode(mode):
    if mode not in ADVERSARIAL_MODES:
        raise ValidationError(f"adversarial mode must be one of {ADVERSARIAL_MODES}")


# ---------------------------------------------------------------------------
# Individual terms.


def wadv_semantic(batch, G_sk, G_im, f_se, mode="wasserstein"):
    """2 E[f(s)] - E[f(G_sk(x))] - E[f(G_im(y))]; grads keyed by role."""
    _check_mode(mode)
    g = _Graph()
    real = g.apply("f_se", f_se, batch.s)
    gsk = g.apply("G_sk", G_sk, batch.x)
    gim = g.apply("G_im", G_im, batch.y)
    fk = g.apply("f_se", f_se, gsk)
    fi = g.apply("f_se", f_se, gim)
    v0, d0 = _critic_real(real.out, mode, weight=2.0)
    v1, d1 = _critic_fake(fk.out, mode)
    v2, d2 = _critic_fake(fi.out, mode)
    real.add(d0)
    fk.add(d1)
    fi.add(d2)
    return v0 + v1 + v2, g.backprop(["G_sk", "G_im", "f_se"])


def wadv_branch(real, decoded, critic, mode="wasserstein"):
    """E[critic(real)] - E[critic(decoded)].

    Returns ``(value, {"critic": param grads, "decoded": grad w.r.t. decoded})``.
    """
    _check_mode(mode)
    if real.shape != decoded.shape:
        raise ShapeError(f"real {real.shape} vs decoded {decoded.shape}")
    r_out, r_tape = forward(critic, real)
    f_out, f_tape = forward(critic, decoded)
    v0, d0 = _critic_real(r_out, mode)
    v1, d1 = _critic_fake(f_out, mode)
    pg, gin = backward(critic, f_tape, d1)
    pr, _ = backward(critic, r_tape, d0)
    return v0 + v1, {"critic": [a + b for a, b in zip(pr, pg)], "decoded": gin}


def cycle_loss(v, s, G, F):
    """E||F(G(v)) - v||_1 + E||G(F(s)) - s||_1 with grads for ``G`` and ``F``."""
    if v.shape[0] != s.shape[0]:
        raise ShapeError("features and codes differ in batch size")
    g = _Graph()
    gv = g.apply("G", G, v)
    fgv = g.apply("F", F, gv)
    fs = g.apply("F", F, s)
    gfs = g.apply("G", G, fs)
    if fgv.out.shape != v.shape or gfs.out.shape != s.shape:
        raise ShapeError("G and F do not invert each other's dimensions")
    a, da = _mean_l1(fgv.out - v)
    c, dc = _mean_l1(gfs.out - s)
    fgv.add(da)
    gfs.add(dc)
    return a + c, g.backprop(["G", "F"])


def classification_loss(codes, labels, head):
    """-E log softmax(head(codes))[label].

    Returns ``(value, {"head": param grads, "codes": grad w.r.t. codes})``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (codes.shape[0],):
        raise ShapeError("one label per code row required")
    logits, tape = forward(head, codes)
    value, dlogits = _cross_entropy(logits, labels)
    pg, gin = backward(head, tape, dlogits)
    return value, {"head": pg, "codes": gin}


def identity_matching_loss(batch, G_sk, G_im, F_sk, F_im):
    """E||G_sk(x)-G_im(y)||^2 + E||F_sk(s)-x||^2 + E||F_im(s)-y||^2."""
    g = _Graph()
    gsk = g.apply("G_sk", G_sk, batch.x)
    gim = g.apply("G_im", G_im, batch.y)
    fsk = g.apply("F_sk", F_sk, batch.s)
    fim = g.apply("F_im", F_im, batch.s)
    v0, d0 = _mean_sqnorm(gsk.out - gim.out)
    v1, d1 = _mean_sqnorm(fsk.out - batch.x)
    v2, d2 = _mean_sqnorm(fim.out - batch.y)
    gsk.add(d0)
    gim.add(-d0)
    fsk.add(d1)
    fim.add(d2)
    return v0 + v1 + v2, g.backprop(["G_sk", "G_im", "F_sk", "F_im"])


# ---------------------------------------------------------------------------
# Aggregates.


def _generator_passes(batch, model):
    return {
        "gsk": forward(model.G_sk, batch.x),
        "gim": forward(model.G_im, batch.y),
        "fsk": forward(model.F_sk, batch.s),
        "fim": forward(model.F_im, batch.s),
    }


def _forward_all(batch, model, cache=None):
    cache = cache or {}
    g = _Graph()
    n = {}
    n["gsk"] = g.apply("G_sk", model.G_sk, batch.x, cache.get("gsk"))
    n["gim"] = g.apply("G_im", model.G_im, batch.y, cache.get("gim"))
    n["fsk"] = g.apply("F_sk", model.F_sk, batch.s, cache.get("fsk"))
    n["fim"] = g.apply("F_im", model.F_im, batch.s, cache.get("fim"))
    n["fgsk"] = g.apply("F_sk", model.F_sk, n["gsk"])
    n["gfsk"] = g.apply("G_sk", model.G_sk, n["fsk"])
    n["fgim"] = g.apply("F_im", model.F_im, n["gim"])
    n["gfim"] = g.apply("G_im", model.G_im, n["fim"])
    n["se_real"] = g.apply("f_se", model.f_se, batch.s)
    n["se_sk"] = g.apply("f_se", model.f_se, n["gsk"])
    n["se_im"] = g.apply("f_se", model.f_se, n["gim"])
    n["sk_real"] = g.apply("f_sk", model.f_sk, batch.x)
    n["sk_fake"] = g.apply("f_sk", model.f_sk, n["fsk"])
    n["im_real"] = g.apply("f_im", model.f_im, batch.y)
    n["im_fake"] = g.apply("f_im", model.f_im, n["fim"])
    head_im = "head_im" if "head_im" in model.nets else "head"
    n["cls_sk"] = g.apply("head", model.head_sk, n["gsk"])
    n["cls_im"] = g.apply(head_im, model.head_im, n["gim"])
    return g, n


def _adversarial_terms(n, mode):
    """Values and output-gradients of the three adversarial objectives."""
    vals, grads = {}, {}
    for key, real, fakes, w in (
        ("wadv_se", "se_real", ("se_sk", "se_im"), 2.0),
        ("wadv_sk", "sk_real", ("sk_fake",), 1.0),
        ("wadv_im", "im_real", ("im_fake",), 1.0),
    ):
        v, d = _critic_real(n[real].out, mode, weight=w)
        grads[real] = d
        for fk in fakes:
            vf, df = _critic_fake(n[fk].out, mode)
            v += vf
            grads[fk] = df
        vals[key] = v
    return vals, grads


def loss_and_grads(batch, model, weights=None, mode="wasserstein", cache=None,
                   full=False, need_grads=True):
    """Full loss report plus ``dis_total`` grads (critics) and ``ps_total`` grads.

    Returns ``(report, critic_grads, generator_grads)``; grads are dicts
    keyed by network name. ``cache`` may carry the four first-stage
    generator passes from :func:`critic_loss_and_grads` on the same batch.
    With ``full=True`` both dicts cover every network (so ``dis_total``
    is also differentiated w.r.t. the generators and ``ps_total`` w.r.t.
    the critics) — training never needs these, checks do. With
    ``need_grads=False`` both grad dicts are None and only values are
    computed.
    """
    _check_mode(mode)
    w = weights or LossWeights()
    g, n = _forward_all(batch, model, cache)

    adv, adv_grads = _adversarial_terms(n, mode)

    # critic side: minimise -(sum of adversarial values)
    for key, d in adv_grads.items():
        n[key].add(-d)
    everything = list(model.nets)
    if not need_grads:
        critic_grads = None
    elif full:
        critic_grads = g.backprop(everything)
    else:
        critic_grads = g.backprop(model.critic_side(), traverse=model.critic_side())
    g.reset()

    # generator side
    gen = 0.0
    for key in ("se_sk", "se_im", "sk_fake", "im_fake"):
        v, d = _generator_loss(n[key].out, mode)
        gen += v
        n[key].add(w.adv * d)

    cyc_sk = cyc_im = 0.0
    for side, v_in, s_in, fg, gf in (
        ("sk", batch.x, batch.s, "fgsk", "gfsk"),
        ("im", batch.y, batch.s, "fgim", "gfim"),
    ):
        a, da = _mean_l1(n[fg].out - v_in)
        c, dc = _mean_l1(n[gf].out - s_in)
        n[fg].add(w.cyc * da)
        n[gf].add(w.cyc * dc)
        if side == "sk":
            cyc_sk = a + c
        else:
            cyc_im = a + c

    cls_sk, d = _cross_entropy(n["cls_sk"].out, batch.labels)
    n["cls_sk"].add(w.cls * d)
    cls_im, d = _cross_entropy(n["cls_im"].out, batch.labels)
    n["cls_im"].add(w.cls * d)

    v0, d0 = _mean_sqnorm(n["gsk"].out - n["gim"].out)
    v1, d1 = _mean_sqnorm(n["fsk"].out - batch.x)
    v2, d2 = _mean_sqnorm(n["fim"].out - batch.y)
    n["gsk"].add(w.iml * d0)
    n["gim"].add(-w.iml * d0)
    n["fsk"].add(w.iml * d1)
    n["fim"].add(w.iml * d2)
    iml = v0 + v1 + v2

    gen_grads = None
    if need_grads:
        gen_grads = g.backprop(everything if full else model.generator_side())

    adv_sum = adv["wadv_se"] + adv["wadv_sk"] + adv["wadv_im"]
    report = LossReport(
        wadv_se=adv["wadv_se"], wadv_sk=adv["wadv_sk"], wadv_im=adv["wadv_im"],
        cyc_sk=cyc_sk, cyc_im=cyc_im, cls_sk=cls_sk, cls_im=cls_im, iml=iml,
        gen=gen,
        total=adv_sum + cyc_sk + cyc_im + cls_sk + cls_im + iml,
        dis_total=-adv_sum,
        ps_total=(w.adv * gen + w.cyc * (cyc_sk + cyc_im)
                  + w.cls * (cls_sk + cls_im) + w.iml * iml),
    )
    return report, critic_grads, gen_grads


def aggregate(batch, model, weights=None, mode="wasserstein"):
    """LossReport for ``batch`` under ``model``."""
    return loss_and_grads(batch, model, weights, mode, need_grads=False)[0]


def critic_loss_and_grads(batch, model, mode="wasserstein"):
    """``dis_total`` and its critic gradients, without generator backprop.

    Returns ``(dis_total, grads, adversarial values, generator passes)``;
    the passes stay valid for :func:`loss_and_grads` until a generator
    is updated.
    """
    _check_mode(mode)
    passes = _generator_passes(batch, model)
    gsk, gim, fsk, fim = (passes[k][0] for k in ("gsk", "gim", "fsk", "fim"))
    g = _Graph()
    n = {
        "se_real": g.apply("f_se", model.f_se, batch.s),
        "se_sk": g.apply("f_se", model.f_se, gsk),
        "se_im": g.apply("f_se", model.f_se, gim),
        "sk_real": g.apply("f_sk", model.f_sk, batch.x),
        "sk_fake": g.apply("f_sk", model.f_sk, fsk),
        "im_real": g.apply("f_im", model.f_im, batch.y),
        "im_fake": g.apply("f_im", model.f_im, fim),
    }
    adv, adv_grads = _adversarial_terms(n, mode)
    for key, d in adv_grads.items():
        n[key].add(-d)
    dis_total = -(adv["wadv_se"] + adv["wadv_sk"] + adv["wadv_im"])
    return dis_total, g.backprop(model.critic_side()), adv, passes
