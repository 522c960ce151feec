"""Encoder, projection head and linear classifier built from tensor-core ops.

The encoder is a stack of (3x3 conv, stride 2, relu) blocks, a global
average pool and a dense layer to the embedding. No residual connections or
batch norm.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .tensor import Tensor, conv2d, dense, global_average_pool, kaiming_uniform, l2_normalize_rows, relu


@dataclass
class EncoderConfig:
    in_channels: int = 3
    conv_channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    kernel: int = 3
    stride: int = 2
    embedding_dim: int = 64

    def validate(self):
        if not self.conv_channels:
            raise ValueError("encoder needs at least one conv block")
        if self.kernel < 1 or self.stride < 1 or self.embedding_dim < 1:
            raise ValueError("kernel, stride and embedding_dim must be positive")
        return self


@dataclass
class ProjectionConfig:
    hidden_dim: Optional[int] = None  # None: same as the embedding
    output_dim: int = 32


def _zeros(n, dtype):
    return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


class Module:
    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Encoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.config = config.validate()
        k = config.kernel
        self.convs = []
        c_in = config.in_channels
        for c_out in config.conv_channels:
            w = kaiming_uniform((c_out, c_in, k, k), c_in * k * k, rng, dtype)
            self.convs.append((Tensor(w, requires_grad=True), _zeros(c_out, dtype)))
            c_in = c_out
        self.fc_w = Tensor(kaiming_uniform((c_in, config.embedding_dim), c_in, rng, dtype), requires_grad=True)
        self.fc_b = _zeros(config.embedding_dim, dtype)

    def named_parameters(self):
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"conv{i}.weight"] = w
            out[f"conv{i}.bias"] = b
        out["fc.weight"] = self.fc_w
        out["fc.bias"] = self.fc_b
        return out

    def __call__(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.fc_w.dtype))
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"encoder expects (N, {self.config.in_channels}, H, W) images, got {x.shape}")
        pad = self.config.kernel // 2
        for w, b in self.convs:
            x = relu(conv2d(x, w, stride=self.config.stride, padding=pad, bias=b))
        return dense(global_average_pool(x), self.fc_w, self.fc_b)


class ProjectionHead(Module):
    """dense -> relu -> dense -> row L2 normalization."""

    def __init__(self, embedding_dim: int, config: ProjectionConfig, rng: np.random.Generator, dtype=np.float64):
        hidden = config.hidden_dim or embedding_dim
        if config.output_dim > embedding_dim:
            raise ValueError(f"projection output {config.output_dim} exceeds embedding dim {embedding_dim}")
        self.config = config
        self.w1 = Tensor(kaiming_uniform((embedding_dim, hidden), embedding_dim, rng, dtype), requires_grad=True)
        self.b1 = _zeros(hidden, dtype)
        self.w2 = Tensor(kaiming_uniform((hidden, config.output_dim), hidden, rng, dtype), requires_grad=True)
        # a nonzero output bias keeps rows off the origin even when every hidden unit is dead
        bound = 1.0 / np.sqrt(hidden)
        self.b2 = Tensor(rng.uniform(-bound, bound, size=config.output_dim).astype(dtype), requires_grad=True)

    def named_parameters(self):
        return {"fc1.weight": self.w1, "fc1.bias": self.b1, "fc2.weight": self.w2, "fc2.bias": self.b2}

    def __call__(self, r: Tensor) -> Tensor:
        return l2_normalize_rows(dense(relu(dense(r, self.w1, self.b1)), self.w2, self.b2))


class LinearHead(Module):
    def __init__(self, embedding_dim: int, num_classes: int, rng: np.random.Generator, dtype=np.float64):
        if num_classes < 1:
            raise ValueError("need at least one class")
        self.num_classes = num_classes
        self.weight = Tensor(kaiming_uniform((embedding_dim, num_classes), embedding_dim, rng, dtype), requires_grad=True)
        self.bias = _zeros(num_classes, dtype)

    def named_parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, r: Tensor) -> Tensor:
        return dense(r, self.weight, self.bias)


def predict(logits) -> np.ndarray:
    """Argmax with ties going to the lowest class index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=1)


def expected_parameter_count(enc: EncoderConfig, proj: Optional[ProjectionConfig] = None, num_classes: int = 0) -> int:
    total = 0
    c_in = enc.in_channels
    for c_out in enc.conv_channels:
        total += c_out * c_in * enc.kernel**2 + c_out
        c_in = c_out
    total += c_in * enc.embedding_dim + enc.embedding_dim
    if proj is not None:
        hidden = proj.hidden_dim or enc.embedding_dim
        total += enc.embedding_dim * hidden + hidden + hidden * proj.output_dim + proj.output_dim
    if num_classes:
        total += enc.embedding_dim * num_classes + num_classes
    return total


class Network(Module):
    """Encoder plus optional projection head and optional classifier.

    Parameter names are prefixed ``encoder.``, ``projection.`` and ``classifier.``.
    """

    def __init__(
        self,
        encoder_config: EncoderConfig,
        projection_config: Optional[ProjectionConfig] = None,
        num_classes: Optional[int] = None,
        seed: int = 0,
        dtype=np.float64,
    ):
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.encoder_config = encoder_config
        self.projection_config = projection_config
        self.encoder = Encoder(encoder_config, rng, dtype)
        self.projection = (
            ProjectionHead(encoder_config.embedding_dim, projection_config, rng, dtype) if projection_config else None
        )
        self.classifier = LinearHead(encoder_config.embedding_dim, num_classes, rng, dtype) if num_classes else None

    def named_parameters(self):
        out = {f"encoder.{k}": v for k, v in self.encoder.named_parameters().items()}
        if self.projection is not None:
            out.update({f"projection.{k}": v for k, v in self.projection.named_parameters().items()})
        if self.classifier is not None:
            out.update({f"classifier.{k}": v for k, v in self.classifier.named_parameters().items()})
        return out

    def encode(self, images) -> Tensor:
        return self.encoder(images)

    def project(self, r: Tensor) -> Tensor:
        if self.projection is None:
            raise RuntimeError("network has no projection head")
        return self.projection(r)

    def classify(self, images_or_r) -> Tensor:
        if self.classifier is None:
            raise RuntimeError("network has no classifier head")
        x = images_or_r
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        r = self.encode(x) if arr.ndim == 4 else x
        return self.classifier(r)

    def attach_classifier(self, num_classes: int, seed: int) -> LinearHead:
        self.classifier = LinearHead(self.encoder_config.embedding_dim, num_classes, np.random.default_rng(seed), self.dtype)
        return self.classifier

    def drop_projection(self) -> None:
        self.projection = None
        self.projection_config = None

    # -- (de)serialization ------------------------------------------------------
    def architecture(self) -> dict:
        return {
            "encoder": asdict(self.encoder_config),
            "projection": asdict(self.projection_config) if self.projection_config else None,
            "num_classes": self.classifier.num_classes if self.classifier else None,
            "dtype": self.dtype.str,
        }

    @classmethod
    def from_architecture(cls, arch: dict) -> "Network":
        proj = ProjectionConfig(**arch["projection"]) if arch.get("projection") else None
        return cls(EncoderConfig(**arch["encoder"]), proj, arch.get("num_classes"), dtype=np.dtype(arch["dtype"]))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        if strict and missing:
            raise KeyError(f"state is missing parameters {missing}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
