"""Classifier architecture: backbone feature extractor, flatten, dense head.

The TOY backbone is a small numpy CNN (three conv3x3/ReLU/maxpool stages)
with hand-written backpropagation. Named ImageNet backbones are reached
through :mod:`retina_pipeline.backends` and only act as frozen feature
extractors.
"""
from __future__ import annotations

import enum
import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import TaskKind
from .errors import (
    ConfigError,
    InputTooSmall,
    InvalidFanIn,
    InvalidTask,
    ShapeMismatch,
    UnsupportedCombination,
)


class BackboneName(enum.Enum):
    RESNET50 = "RESNET50"
    VGG16 = "VGG16"
    VGG19 = "VGG19"
    INCEPTION_V3 = "INCEPTION_V3"
    INCEPTION_RESNET_V2 = "INCEPTION_RESNET_V2"
    TOY = "TOY"

    @classmethod
    def parse(cls, value) -> "BackboneName":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "_")
        aliases = {"INCEPTIONV3": "INCEPTION_V3", "INCEPTIONRESNETV2": "INCEPTION_RESNET_V2"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise UnsupportedCombination(f"unknown backbone {value!r}") from None


class WeightsOrigin(enum.Enum):
    PRETRAINED_IMAGENET = "PRETRAINED_IMAGENET"
    RANDOM_HE_UNIFORM = "RANDOM_HE_UNIFORM"


class Activation(enum.Enum):
    SIGMOID = "SIGMOID"
    SOFTMAX = "SOFTMAX"


# Final convolutional feature map (height, width, channels) of each
# ImageNet backbone without its classification top.
FEATURE_SHAPES = {
    (BackboneName.RESNET50, 512): (16, 16, 2048),
    (BackboneName.RESNET50, 224): (7, 7, 2048),
    (BackboneName.VGG16, 512): (16, 16, 512),
    (BackboneName.VGG16, 224): (7, 7, 512),
    (BackboneName.VGG19, 512): (16, 16, 512),
    (BackboneName.VGG19, 224): (7, 7, 512),
    (BackboneName.INCEPTION_V3, 512): (14, 14, 2048),
    (BackboneName.INCEPTION_V3, 299): (8, 8, 2048),
    (BackboneName.INCEPTION_RESNET_V2, 299): (8, 8, 1536),
}

TOY_CHANNELS = (8, 16, 16)
TOY_MIN_INPUT = 16
DEFAULT_HIDDEN = (256, 64)


def feature_shape(name, input_size: int) -> tuple[int, int, int]:
    name = BackboneName.parse(name)
    if name is BackboneName.TOY:
        if input_size < TOY_MIN_INPUT:
            raise InputTooSmall(f"toy backbone needs input >= {TOY_MIN_INPUT}, got {input_size}")
        side = input_size
        for _ in TOY_CHANNELS:
            side //= 2
        return (side, side, TOY_CHANNELS[-1])
    try:
        return FEATURE_SHAPES[(name, input_size)]
    except KeyError:
        sizes = sorted(s for (n, s) in FEATURE_SHAPES if n is name)
        raise UnsupportedCombination(
            f"{name.value} does not support input size {input_size}; supported: {sizes}"
        ) from None


@dataclass(frozen=True)
class BackboneSpec:
    name: BackboneName
    input_size: int
    frozen: bool = True
    weights_origin: WeightsOrigin = WeightsOrigin.PRETRAINED_IMAGENET

    def __post_init__(self):
        object.__setattr__(self, "name", BackboneName.parse(self.name))
        object.__setattr__(self, "weights_origin", WeightsOrigin(self.weights_origin))
        feature_shape(self.name, self.input_size)

    @property
    def feature_count(self) -> int:
        return math.prod(feature_shape(self.name, self.input_size))


@dataclass(frozen=True)
class HeadSpec:
    feature_count: int
    hidden_widths: tuple[int, ...]
    output_nodes: int
    output_activation: Activation

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "output_activation", Activation(self.output_activation))
        if (self.output_nodes == 1) != (self.output_activation is Activation.SIGMOID):
            raise InvalidTask("a single output node goes with SIGMOID, several with SOFTMAX")


@dataclass(frozen=True)
class ModelSpec:
    backbone: BackboneSpec
    head: HeadSpec
    task: TaskKind

    def __post_init__(self):
        expected = 1 if self.task is TaskKind.BINARY else self.task.class_count
        if self.head.output_nodes != expected:
            raise ShapeMismatch(f"{self.task.name} needs {expected} output nodes, head has {self.head.output_nodes}")
        if self.head.feature_count != self.backbone.feature_count:
            raise ShapeMismatch(
                f"head expects {self.head.feature_count} features, backbone yields {self.backbone.feature_count}"
            )

    def to_dict(self) -> dict:
        b, h = self.backbone, self.head
        return {
            "task": self.task.name,
            "backbone": {
                "name": b.name.value,
                "input_size": b.input_size,
                "frozen": b.frozen,
                "weights_origin": b.weights_origin.value,
            },
            "head": {
                "feature_count": h.feature_count,
                "hidden_widths": list(h.hidden_widths),
                "output_nodes": h.output_nodes,
                "output_activation": h.output_activation.value,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(BackboneSpec(**d["backbone"]), HeadSpec(**d["head"]), TaskKind.parse(d["task"]))


def build_head(task, feature_count: int, hidden_widths=DEFAULT_HIDDEN) -> HeadSpec:
    task = TaskKind.parse(task)
    if feature_count <= 0:
        raise ShapeMismatch(f"feature_count must be positive, got {feature_count}")
    if task is TaskKind.BINARY:
        return HeadSpec(feature_count, tuple(hidden_widths), 1, Activation.SIGMOID)
    return HeadSpec(feature_count, tuple(hidden_widths), task.class_count, Activation.SOFTMAX)


def build_model_spec(
    task,
    backbone="TOY",
    input_size: int = 32,
    hidden_widths=DEFAULT_HIDDEN,
    frozen: bool = True,
    weights_origin=WeightsOrigin.PRETRAINED_IMAGENET,
) -> ModelSpec:
    bb = BackboneSpec(BackboneName.parse(backbone), input_size, frozen, WeightsOrigin(weights_origin))
    task = TaskKind.parse(task)
    return ModelSpec(bb, build_head(task, bb.feature_count, hidden_widths), task)


def he_uniform_init(fan_in: int, shape, seed) -> np.ndarray:
    """Draw from U(-L, L) with ``L = sqrt(6 / fan_in)``."""
    if fan_in <= 0:
        raise InvalidFanIn(f"fan_in must be positive, got {fan_in}")
    limit = math.sqrt(6.0 / fan_in)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(-limit, limit, size=shape)


class Parameters:
    """Named float64 tensors with a trainable flag each."""

    def __init__(self, tensors=None, trainable=None):
        self.tensors: dict[str, np.ndarray] = dict(tensors or {})
        self.trainable: dict[str, bool] = {k: True for k in self.tensors}
        self.trainable.update(trainable or {})

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value
        self.trainable.setdefault(name, True)

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def trainable_names(self) -> list[str]:
        return [k for k in self.tensors if self.trainable[k]]

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for k in self.tensors:
            if k.startswith(prefix):
                self.trainable[k] = flag

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.tensors.items()}, dict(self.trainable))

    def load_from(self, other: "Parameters") -> None:
        for k, v in other.items():
            self.tensors[k] = v.copy()


# ---------------------------------------------------------------- layers


def _conv3x3(x, w):
    """Same-padded 3x3 correlation: x (N,H,W,Ci), w (3,3,Ci,Co)."""
    n, h, wd, ci = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # N,H,W,Ci,3,3
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * wd, 9 * ci)
    return (cols @ w.reshape(9 * ci, -1)).reshape(n, h, wd, -1), cols


def _conv3x3_backward(dout, cols, w, need_dx):
    co = w.shape[3]
    dw = (cols.T @ dout.reshape(-1, co)).reshape(w.shape)
    db = dout.sum(axis=(0, 1, 2))
    dx = None
    if need_dx:
        dx, _ = _conv3x3(dout, w[::-1, ::-1].transpose(0, 1, 3, 2))
    return dx, dw, db


def _maxpool2(x):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, : 2 * h2, : 2 * w2]
    blocks = xc.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def _maxpool2_backward(dout, cache):
    shape, arg = cache
    n, h, w, c = shape
    h2, w2 = h // 2, w // 2
    blocks = np.zeros((n, h2, w2, c, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(shape)
    dx[:, : 2 * h2, : 2 * w2] = blocks.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(
        n, 2 * h2, 2 * w2, c
    )
    return dx


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _logsumexp(z):
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


# ----------------------------------------------------------- parameters


def toy_backbone(input_size: int, seed=0, frozen: bool = True) -> tuple[BackboneSpec, Parameters]:
    """Desk-scale stand-in backbone with He-uniform conv weights."""
    spec = BackboneSpec(BackboneName.TOY, input_size, frozen, WeightsOrigin.RANDOM_HE_UNIFORM)
    return spec, _toy_parameters(seed, frozen)


def _toy_parameters(seed, frozen) -> Parameters:
    rng = np.random.default_rng(seed)
    params = Parameters()
    cin = 3
    for i, cout in enumerate(TOY_CHANNELS):
        params[f"backbone.conv{i}.w"] = he_uniform_init(9 * cin, (3, 3, cin, cout), rng)
        params[f"backbone.conv{i}.b"] = np.zeros(cout)
        cin = cout
    params.set_trainable("backbone.", not frozen)
    return params


def head_parameters(head: HeadSpec, seed=0) -> Parameters:
    rng = np.random.default_rng(seed)
    params = Parameters()
    widths = [head.feature_count, *head.hidden_widths, head.output_nodes]
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        name = "out" if i == len(widths) - 2 else f"dense{i}"
        params[f"head.{name}.w"] = he_uniform_init(fi, (fi, fo), rng)
        params[f"head.{name}.b"] = np.zeros(fo)
    return params


def init_parameters(spec: ModelSpec, seed: int = 0, backbone_seed: int | None = None) -> Parameters:
    """Fresh parameters for ``spec``: He-uniform head, plus toy backbone weights when TOY."""
    params = Parameters()
    if spec.backbone.name is BackboneName.TOY:
        bb_seed = seed if backbone_seed is None else backbone_seed
        bb = _toy_parameters(np.random.SeedSequence([bb_seed, 1]), spec.backbone.frozen)
        params.tensors.update(bb.tensors)
        params.trainable.update(bb.trainable)
    head = head_parameters(spec.head, np.random.SeedSequence([seed, 2]))
    params.tensors.update(head.tensors)
    params.trainable.update(head.trainable)
    return params


# ---------------------------------------------------------------- model


@dataclass
class Classifier:
    """Backbone + flatten + dense head, with forward and backward passes.

    ``extractor`` is only needed for named backbones; it maps an image batch
    to the backbone feature map and is treated as frozen.
    """

    spec: ModelSpec
    params: Parameters
    extractor: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.spec.backbone.name is not BackboneName.TOY and self.extractor is None:
            from .backends import load_extractor

            self.extractor = load_extractor(self.spec.backbone)

    @property
    def is_binary(self) -> bool:
        return self.spec.head.output_activation is Activation.SIGMOID

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        s = self.spec.backbone.input_size
        if x.ndim != 4 or x.shape[1:] != (s, s, 3):
            raise ShapeMismatch(f"expected batch of shape (N, {s}, {s}, 3), got {x.shape}")
        return x

    def _forward(self, x, keep):
        """Return logits and, if ``keep``, the activations needed for backward."""
        x = self._check_input(x)
        cache = {}
        if self.spec.backbone.name is BackboneName.TOY:
            h = 2.0 * x - 1.0  # [0, 1] pixels -> [-1, 1]
            for i in range(len(TOY_CHANNELS)):
                z, cols = _conv3x3(h, self.params[f"backbone.conv{i}.w"])
                z += self.params[f"backbone.conv{i}.b"]
                a = np.maximum(z, 0.0)
                h, pool = _maxpool2(a)
                if keep:
                    cache[f"conv{i}"] = (cols, z > 0, pool)
        else:
            h = np.asarray(self.extractor(x), dtype=np.float64)
        if h.shape[1:] != feature_shape(self.spec.backbone.name, self.spec.backbone.input_size):
            raise ShapeMismatch(f"backbone produced {h.shape[1:]}")
        cache["fmap_shape"] = h.shape
        h = h.reshape(len(h), -1)
        n_hidden = len(self.spec.head.hidden_widths)
        for i in range(n_hidden):
            inp = h
            h = np.maximum(inp @ self.params[f"head.dense{i}.w"] + self.params[f"head.dense{i}.b"], 0.0)
            if keep:
                cache[f"dense{i}"] = (inp, h > 0)
        if keep:
            cache["out"] = h
        z = h @ self.params["head.out.w"] + self.params["head.out.b"]
        return (z[:, 0] if self.is_binary else z), cache

    def logits(self, x) -> np.ndarray:
        return self._forward(x, keep=False)[0]

    def predict_scores(self, x, batch_size: int = 64) -> np.ndarray:
        """Sigmoid score per sample (binary) or softmax row per sample."""
        x = np.asarray(x)
        chunks = [self.logits(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        z = np.concatenate(chunks) if chunks else np.zeros((0,) if self.is_binary else (0, self.spec.head.output_nodes))
        return sigmoid(z) if self.is_binary else softmax(z)

    def predict_labels(self, x) -> np.ndarray:
        from .metrics import predict_labels

        return predict_labels(self.predict_scores(x))

    def loss(self, x, y) -> float:
        return self._loss_from_logits(self.logits(x), y)[0]

    def _loss_from_logits(self, z, y):
        y = np.asarray(y, dtype=np.int64)
        n = len(y)
        if self.is_binary:
            # binary cross-entropy on logits: softplus(z) - y z
            loss = np.mean(np.logaddexp(0.0, z) - y * z)
            dz = (sigmoid(z) - y) / n
        else:
            loss = np.mean(_logsumexp(z) - z[np.arange(n), y])
            dz = softmax(z)
            dz[np.arange(n), y] -= 1.0
            dz /= n
        return float(loss), dz

    def loss_and_grads(self, x, y) -> tuple[float, dict[str, np.ndarray]]:
        """Mean loss over the batch and its gradient for every trainable tensor."""
        z, cache = self._forward(x, keep=True)
        loss, dz = self._loss_from_logits(z, y)
        p = self.params
        grads: dict[str, np.ndarray] = {}
        if self.is_binary:
            dz = dz[:, None]
        h = cache["out"]
        grads["head.out.w"] = h.T @ dz
        grads["head.out.b"] = dz.sum(axis=0)
        dh = dz @ p["head.out.w"].T
        for i in reversed(range(len(self.spec.head.hidden_widths))):
            inp, active = cache[f"dense{i}"]
            dh = dh * active
            grads[f"head.dense{i}.w"] = inp.T @ dh
            grads[f"head.dense{i}.b"] = dh.sum(axis=0)
            dh = dh @ p[f"head.dense{i}.w"].T

        bb_names = [k for k in p if k.startswith("backbone.")]
        if any(p.trainable[k] for k in bb_names):
            dh = dh.reshape(cache["fmap_shape"])
            for i in reversed(range(len(TOY_CHANNELS))):
                cols, active, pool = cache[f"conv{i}"]
                da = _maxpool2_backward(dh, pool) * active
                dh, dw, db = _conv3x3_backward(da, cols, p[f"backbone.conv{i}.w"], need_dx=i > 0)
                grads[f"backbone.conv{i}.w"] = dw
                grads[f"backbone.conv{i}.b"] = db
        return loss, {k: g for k, g in grads.items() if p.trainable.get(k, False)}


def build_classifier(spec: ModelSpec, seed: int = 0, backbone_seed: int | None = None, extractor=None) -> Classifier:
    return Classifier(spec, init_parameters(spec, seed, backbone_seed), extractor)


# ----------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "retina-pipeline-checkpoint"
CHECKPOINT_VERSION = 1


def _checkpoint_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".npz", ".json") else path
    return base.with_suffix(".npz"), base.with_suffix(".json")


def save_checkpoint(path, model: Classifier, **meta) -> tuple[Path, Path]:
    """Write ``<path>.npz`` (named tensors) and ``<path>.json`` (spec + metadata).

    Zip entries carry a fixed timestamp so identical weights give identical bytes.
    """
    npz, sidecar = _checkpoint_paths(path)
    npz.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(npz, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(model.params):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(model.params[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_spec": model.spec.to_dict(),
        "tensors": {
            name: {"shape": list(model.params[name].shape), "trainable": model.params.trainable[name]}
            for name in sorted(model.params)
        },
        **meta,
    }
    sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return npz, sidecar


def read_checkpoint_meta(path) -> dict:
    _, sidecar = _checkpoint_paths(path)
    if not sidecar.is_file():
        from .errors import MissingFile

        raise MissingFile(f"checkpoint sidecar not found: {sidecar}")
    doc = json.loads(sidecar.read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{sidecar} is not a version-{CHECKPOINT_VERSION} checkpoint")
    return doc


def load_checkpoint(path, extractor=None) -> tuple[Classifier, dict]:
    npz, _ = _checkpoint_paths(path)
    doc = read_checkpoint_meta(path)
    spec = ModelSpec.from_dict(doc["model_spec"])
    params = Parameters()
    with np.load(npz, allow_pickle=False) as data:
        for name, info in doc["tensors"].items():
            arr = data[name]
            if list(arr.shape) != info["shape"]:
                raise ShapeMismatch(f"tensor {name}: archive shape {arr.shape} != sidecar {info['shape']}")
            params[name] = arr.astype(np.float64)
            params.trainable[name] = info["trainable"]
    return Classifier(spec, params, extractor), doc
