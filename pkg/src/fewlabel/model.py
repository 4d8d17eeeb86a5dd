"""Encoder / projection-head / classifier-head model and its optimizer.

The encoder is an MLP (ambient -> hidden -> hidden -> feature). The
projection head maps feature -> feature and is only used while
pre-training; the classifier head maps feature -> classes. Parameters
live in named ParamSets so the optimizer, gradient checker, and
checkpoint writer all see the same flat (name, tensor) view.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, add, l2_normalize_rows, matmul, relu

CHECKPOINT_MAGIC = "fewlabel-checkpoint v1"


class ParamSet:
    """Named parameters with matching gradient and momentum buffers."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._momentum: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name}")
        p = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = p
        self._momentum[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def momentum(self, name: str) -> np.ndarray:
        return self._momentum[name]

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, p in self._params.items():
            out.add(name, p.data.copy())
            out._momentum[name] = self._momentum[name].copy()
        return out


def sgd_step(params: ParamSet, lr: float, momentum: float = 0.0):
    """buffer <- momentum * buffer + grad; param <- param - lr * buffer."""
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape mismatch for {name}")
        buf = params.momentum(name)
        buf *= momentum
        buf += g
        p.data -= lr * buf


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Model:
    """Three-headed MLP; forward mode picks which head follows the encoder."""

    MODES = ("embed", "project", "classify")

    def __init__(self, ambient: int, hidden: int, feature: int, classes: int):
        self.ambient = ambient
        self.hidden = hidden
        self.feature = feature
        self.classes = classes
        self.encoder = ParamSet()
        self.projection = ParamSet()
        self.classifier = ParamSet()

    @classmethod
    def init(cls, ambient: int = 32, hidden: int = 64, feature: int = 16,
             classes: int = 10, seed: int = 0) -> "Model":
        m = cls(ambient, hidden, feature, classes)
        rng = np.random.default_rng(seed)
        dims = [(ambient, hidden), (hidden, hidden), (hidden, feature)]
        for i, (fi, fo) in enumerate(dims):
            m.encoder.add(f"enc.w{i}", glorot_uniform(fi, fo, rng))
            m.encoder.add(f"enc.b{i}", np.zeros(fo))
        m.projection.add("proj.w", glorot_uniform(feature, feature, rng))
        m.projection.add("proj.b", np.zeros(feature))
        m.classifier.add("cls.w", glorot_uniform(feature, classes, rng))
        m.classifier.add("cls.b", np.zeros(classes))
        return m

    def forward(self, batch, mode: str = "classify") -> Tensor:
        if mode not in self.MODES:
            raise ConfigError(f"unknown forward mode: {mode}")
        x = batch if isinstance(batch, Tensor) else Tensor(np.atleast_2d(batch))
        if x.data.ndim != 2 or x.data.shape[1] != self.ambient:
            raise ShapeError(
                f"batch shape {x.data.shape} does not match encoder input dim {self.ambient}")
        h = relu(add(matmul(x, self.encoder["enc.w0"]), self.encoder["enc.b0"]))
        h = relu(add(matmul(h, self.encoder["enc.w1"]), self.encoder["enc.b1"]))
        h = add(matmul(h, self.encoder["enc.w2"]), self.encoder["enc.b2"])
        if mode == "embed":
            return h
        if mode == "project":
            z = add(matmul(h, self.projection["proj.w"]), self.projection["proj.b"])
            return l2_normalize_rows(z)
        return add(matmul(h, self.classifier["cls.w"]), self.classifier["cls.b"])

    def embed_array(self, features: np.ndarray) -> np.ndarray:
        """Encoder features as a plain array (for selection / probing)."""
        return self.forward(features, mode="embed").data

    def named_params(self, which: str = "all"):
        groups = {
            "all": (self.encoder, self.projection, self.classifier),
            "encoder": (self.encoder,),
            "pretrain": (self.encoder, self.projection),
            "finetune": (self.encoder, self.classifier),
            "classifier": (self.classifier,),
        }
        if which not in groups:
            raise ConfigError(f"unknown parameter group: {which}")
        for ps in groups[which]:
            yield from ps.items()

    def param_groups(self, which: str = "all") -> list[ParamSet]:
        if which == "pretrain":
            return [self.encoder, self.projection]
        if which == "finetune":
            return [self.encoder, self.classifier]
        if which == "classifier":
            return [self.classifier]
        return [self.encoder, self.projection, self.classifier]

    def zero_grad(self):
        for ps in (self.encoder, self.projection, self.classifier):
            ps.zero_grad()

    def copy(self) -> "Model":
        m = Model(self.ambient, self.hidden, self.feature, self.classes)
        m.encoder = self.encoder.copy()
        m.projection = self.projection.copy()
        m.classifier = self.classifier.copy()
        return m


def save_checkpoint(model: Model, path, tags: dict | None = None):
    """Text checkpoint: one (name, shape, values) line per parameter.

    Values are printed with 17 significant digits, which round-trips
    float64 exactly.
    """
    lines = [CHECKPOINT_MAGIC]
    for key, val in sorted((tags or {}).items()):
        lines.append(f"# {key}={val}")
    lines.append(f"dims {model.ambient} {model.hidden} {model.feature} {model.classes}")
    for name, p in model.named_params("all"):
        shape = ",".join(str(s) for s in p.data.shape)
        values = " ".join(format(v, ".17g") for v in p.data.reshape(-1))
        lines.append(f"{name} {shape} {values}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Model:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ConfigError(f"not a checkpoint file: {path}")
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    if not body or not body[0].startswith("dims "):
        raise ConfigError(f"checkpoint missing dims header: {path}")
    ambient, hidden, feature, classes = (int(t) for t in body[0].split()[1:])
    model = Model.init(ambient, hidden, feature, classes, seed=0)
    params = dict(model.named_params("all"))
    seen = set()
    for line in body[1:]:
        name, shape_s, values_s = line.split(" ", 2)
        if name not in params:
            raise ConfigError(f"unknown parameter in checkpoint: {name}")
        shape = tuple(int(t) for t in shape_s.split(","))
        vals = np.array([float(t) for t in values_s.split(" ")], dtype=np.float64)
        if vals.size != int(np.prod(shape)) or shape != params[name].data.shape:
            raise ConfigError(f"shape mismatch for {name} in checkpoint")
        params[name].data = vals.reshape(shape)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise ConfigError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
