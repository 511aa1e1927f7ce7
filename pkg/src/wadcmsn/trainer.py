"""Alternating critic / generator training and checkpoint I/O.

Each iteration draws one class-paired batch, takes ``n_critic`` RMSprop
steps on the three critics against ``dis_total`` (clipping their weights
after each step), then one RMSprop step on the four generators and the
classifier head against ``ps_total``.

The published algorithm listing names the generator parameters in the
critic-update step and the critic parameters in the generator-update
step; the accompanying prose (critics first on the critic loss, then the
rest on the generator loss) is what is implemented here.
"""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import batch_iter, batches_per_epoch
from .errors import (CheckpointError, IncompatibleCheckpointError, NumericError,
                     ValidationError)
from .losses import LossWeights, critic_loss_and_grads, loss_and_grads
from .model import Architecture, ClassifierHead, ModelBundle, build_bundle
from .nn import Layer, Mlp, RmsPropState, clip_weights, forward, rmsprop_update
from .retrieval import domain_gap, evaluate

CHECKPOINT_FORMAT = "wadcmsn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    decay: float = 0.99
    epsilon: float = 1e-8
    clip_c: float = 0.01
    batch_size: int = 64
    max_iterations: int = 2000
    n_critic: int = 1
    seed: int = 0
    adversarial: str = "wasserstein"   # "standard" = non-Wasserstein GAN loss
    clip: bool | None = None           # default: clip only in wasserstein mode
    weights: LossWeights = field(default_factory=LossWeights)
    architecture: Architecture = field(default_factory=Architecture)
    dtype: str = "float64"
    log_every: int = 1

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.architecture, dict):
            self.architecture = Architecture(**self.architecture)
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if not 0 < self.decay < 1:
            raise ValidationError("decay must lie in (0, 1)")
        if self.epsilon <= 0 or self.clip_c <= 0:
            raise ValidationError("epsilon and clip_c must be positive")
        if self.batch_size < 1 or self.n_critic < 1 or self.max_iterations < 0:
            raise ValidationError("batch_size, n_critic >= 1 and max_iterations >= 0 required")
        if self.dtype not in ("float64", "float32"):
            raise ValidationError("dtype must be float64 or float32")
        if self.log_every < 1:
            raise ValidationError("log_every must be >= 1")

    @property
    def clipping(self):
        return self.adversarial == "wasserstein" if self.clip is None else self.clip

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    iterations: list = field(default_factory=list)   # dicts: iteration, losses, gap
    validation: list = field(default_factory=list)   # dicts: epoch, iteration, mAP

    def as_dict(self):
        return {"iterations": self.iterations, "validation": self.validation}

    def save(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=1) + "\n")


def init_bundle(split, config):
    bundle = build_bundle(config.architecture, len(split.seen_classes), config.seed,
                          np.dtype(config.dtype))
    return bundle.attach_optimizers(config.learning_rate, config.decay, config.epsilon)


def _check_finite(report, iteration):
    for name, value in report.as_dict().items():
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss term {name}={value} at iteration {iteration}")


def _check_grads(grads, names, iteration):
    for name in names:
        if not all(np.isfinite(g).all() for g in grads[name]):
            raise NumericError(f"non-finite gradient for {name} at iteration {iteration}")


def critic_step(bundle, batch, config, iteration=None):
    """One RMSprop step of all three critics on ``dis_total`` (then clip).

    Raises NumericError before touching any parameter if the objective is
    not finite.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        dis_total, grads, _, passes = critic_loss_and_grads(batch, bundle,
                                                            config.adversarial)
    if not math.isfinite(dis_total):
        raise NumericError(f"non-finite loss term dis_total={dis_total} "
                           f"at iteration {iteration}")
    _check_grads(grads, bundle.critic_side(), iteration)
    for name in bundle.critic_side():
        rmsprop_update(bundle.nets[name], grads[name], bundle.optimizers[name])
        if config.clipping:
            clip_weights(bundle.nets[name], config.clip_c)
    return dis_total, passes


def generator_step(bundle, batch, config, cache=None, iteration=None):
    """One RMSprop step of generators and head(s) on ``ps_total``."""
    with np.errstate(over="ignore", invalid="ignore"):
        report, _, grads = loss_and_grads(batch, bundle, config.weights,
                                          config.adversarial, cache)
    _check_finite(report, iteration)
    _check_grads(grads, bundle.generator_side(), iteration)
    for name in bundle.generator_side():
        rmsprop_update(bundle.nets[name], grads[name], bundle.optimizers[name])
    return report


def _cast_batch(batch, dtype):
    if batch.x.dtype == dtype:
        return batch
    return type(batch)(batch.x.astype(dtype), batch.y.astype(dtype),
                       batch.s.astype(dtype), batch.labels)


def train(split, semantic, config, validation=None, bundle=None, on_iteration=None):
    """Run ``config.max_iterations`` alternating updates.

    ``validation`` is an optional ``(sketch_records, image_records)`` pair
    scored with mAP after every epoch. ``on_iteration(t, bundle, report)``
    is called after each full iteration.
    """
    missing = [c for c in split.seen_classes if c not in semantic.codes]
    if missing:
        raise ValidationError(f"semantic table lacks seen classes {missing}")
    if bundle is None:
        bundle = init_bundle(split, config)
    if semantic.code_dim != bundle.code_dim:
        raise ValidationError(
            f"semantic codes are {semantic.code_dim}-D, model expects {bundle.code_dim}-D")
    dtype = np.dtype(config.dtype)
    log = TrainLog()
    per_epoch = batches_per_epoch(split, config.batch_size)
    stream = batch_iter(split, config.batch_size, semantic, seed=config.seed + 1)
    for t in range(1, config.max_iterations + 1):
        for _ in range(config.n_critic):
            batch = _cast_batch(next(stream), dtype)
            _, passes = critic_step(bundle, batch, config, t)
        report = generator_step(bundle, batch, config, passes, t)
        if t % config.log_every == 0 or t == config.max_iterations:
            gap = domain_gap(passes["gsk"][0], passes["gim"][0])
            log.iterations.append({"iteration": t, **report.as_dict(), "domain_gap": gap})
        if on_iteration is not None:
            on_iteration(t, bundle, report)
        if validation is not None and (t * config.n_critic) % per_epoch < config.n_critic:
            ev = evaluate(bundle, *validation)
            log.validation.append({
                "epoch": (t * config.n_critic) // per_epoch,
                "iteration": t,
                "mAP": ev.report()["mAP"],
            })
    return bundle, log


# ---------------------------------------------------------------------------
# Checkpoints: a zip of .npy arrays plus a JSON manifest, with fixed member
# timestamps so identical bundles give identical bytes.

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_member(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(arr):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def checkpoint_save(bundle, path, extra=None):
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_dim": bundle.feature_dim,
        "code_dim": bundle.code_dim,
        "n_classes": bundle.n_classes,
        "nets": {},
        "optimizers": {},
        "extra": extra or {},
    }
    arrays = {}
    for name, net in bundle.nets.items():
        manifest["nets"][name] = {
            "kind": "head" if isinstance(net, ClassifierHead) else "mlp",
            "layers": [{"activation": l.activation, "slope": l.slope,
                        "shape": list(l.weight.shape)} for l in net.layers],
        }
        for k, p in enumerate(net.params()):
            arrays[f"nets/{name}/{k}.npy"] = p
    for name, st in bundle.optimizers.items():
        manifest["optimizers"][name] = {"learning_rate": st.learning_rate,
                                        "decay": st.decay, "epsilon": st.epsilon}
        for k, acc in enumerate(st.accumulators):
            arrays[f"optim/{name}/{k}.npy"] = acc
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for key in sorted(arrays):
            _write_member(zf, key, _npy_bytes(arrays[key]))


def _read_array(zf, key):
    return np.lib.format.read_array(io.BytesIO(zf.read(key)), allow_pickle=False)


def checkpoint_load(path):
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not a wadcmsn checkpoint")
            if manifest.get("version") != CHECKPOINT_VERSION:
                raise IncompatibleCheckpointError(
                    f"{path}: checkpoint format version {manifest.get('version')} "
                    f"is not supported (expected {CHECKPOINT_VERSION})")
            nets = {}
            for name, spec in manifest["nets"].items():
                layers = []
                for k, ls in enumerate(spec["layers"]):
                    w = _read_array(zf, f"nets/{name}/{2 * k}.npy")
                    b = _read_array(zf, f"nets/{name}/{2 * k + 1}.npy")
                    layers.append(Layer(w, b, ls["activation"], ls["slope"]))
                if spec["kind"] == "head":
                    nets[name] = ClassifierHead(layers[0].weight, layers[0].bias)
                else:
                    nets[name] = Mlp(layers)
            optimizers = {}
            for name, spec in manifest["optimizers"].items():
                accs = [_read_array(zf, f"optim/{name}/{k}.npy")
                        for k in range(len(nets[name].params()))]
                optimizers[name] = RmsPropState(accs, spec["learning_rate"],
                                                spec["decay"], spec["epsilon"])
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    bundle = ModelBundle(nets, optimizers)
    bundle.check()
    return bundle


def checkpoint_manifest(path):
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("manifest.json"))


def config_from_dict(d):
    """TrainConfig from a plain dict, rejecting unknown keys."""
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown training keys: {sorted(unknown)}")
    return TrainConfig(**d)
