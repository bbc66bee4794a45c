"""Layer specifications and torch realizations of the two classifiers.

``ModelSpec`` is the single description of each architecture. ``analytic_*``
functions count parameters from the spec alone (shape propagation, no torch),
which is what the instantiated modules are checked against.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import torch
import torch.nn as nn
import torchvision

BASELINE = "baseline_cnn"
TRANSFER = "vgg16_transfer"

# (out_channels per conv) with "M" for a 2x2/2 max-pool; 3x3 same-padding convs
VGG16_CONV_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv2d | maxpool | flatten | dense | backbone
    units: int = 0  # filters for conv2d, units for dense
    kernel: tuple[int, int] | None = None
    activation: str = "none"
    trainable: bool = True
    padding: str = "valid"
    pool: int = 2


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_size: int
    layers: tuple[LayerSpec, ...]
    head_kind: str

    def __post_init__(self) -> None:
        outputs = [l for l in self.layers if l.activation in ("sigmoid", "softmax")]
        if len(outputs) != 1 or self.layers[-1] is not outputs[0]:
            raise ModelError(f"{self.name}: exactly one output layer must terminate the spec")
        for l in self.layers:
            if l.kind == "conv2d" and (l.kernel is None or l.units < 1):
                raise ModelError(f"{self.name}: conv layer needs kernel and filters")
            if l.kind == "dense" and l.units < 1:
                raise ModelError(f"{self.name}: dense layer needs units")


@dataclass(frozen=True)
class ParameterCount:
    trainable: int
    frozen: int

    @property
    def total(self) -> int:
        return self.trainable + self.frozen


def baseline_cnn_spec() -> ModelSpec:
    return ModelSpec(
        name=BASELINE,
        input_size=64,
        layers=(
            LayerSpec("conv2d", 32, (3, 3), "relu"),
            LayerSpec("maxpool"),
            LayerSpec("conv2d", 64, (3, 3), "relu"),
            LayerSpec("maxpool"),
            LayerSpec("flatten"),
            LayerSpec("dense", 128, activation="relu"),
            LayerSpec("dense", 1, activation="sigmoid"),
        ),
        head_kind="sigmoid_scalar",
    )


def transfer_head_spec() -> ModelSpec:
    return ModelSpec(
        name=TRANSFER,
        input_size=254,
        layers=(
            LayerSpec("backbone", 512, trainable=False),
            LayerSpec("flatten"),
            LayerSpec("dense", 500, activation="relu"),
            LayerSpec("dense", 100, activation="relu"),
            LayerSpec("dense", 2, activation="softmax"),
        ),
        head_kind="softmax_pair",
    )


def spec_by_name(name: str) -> ModelSpec:
    if name == BASELINE:
        return baseline_cnn_spec()
    if name == TRANSFER:
        return transfer_head_spec()
    raise ModelError(f"unknown model spec {name!r}")


# --------------------------------------------------------------------------
# analytic shape propagation


def vgg16_backbone_shape(size: int) -> tuple[int, int, int]:
    """(channels, h, w) after the VGG16 conv stack for a square input."""
    channels, side = 3, size
    for step in VGG16_CONV_PLAN:
        if step == "M":
            side //= 2
        else:
            channels = step
    if side < 1:
        raise ModelError(f"input size {size} is too small for the VGG16 backbone")
    return channels, side, side


def vgg16_backbone_param_count() -> int:
    total, in_ch = 0, 3
    for step in VGG16_CONV_PLAN:
        if step != "M":
            total += 3 * 3 * in_ch * step + step
            in_ch = step
    return total


def analytic_parameter_counts(spec: ModelSpec, input_size: int | None = None) -> tuple[ParameterCount, int]:
    """Propagate shapes through ``spec``; returns the counts and the flatten
    dimension."""
    size = spec.input_size if input_size is None else input_size
    channels, h, w = 3, size, size
    features = None
    trainable = frozen = 0
    flat_dim = 0
    for layer in spec.layers:
        if layer.kind == "conv2d":
            kh, kw = layer.kernel
            n = kh * kw * channels * layer.units + layer.units
            if layer.padding == "valid":
                h, w = h - kh + 1, w - kw + 1
            channels = layer.units
        elif layer.kind == "maxpool":
            h, w = h // layer.pool, w // layer.pool
            n = 0
        elif layer.kind == "backbone":
            channels, h, w = vgg16_backbone_shape(h)
            n = vgg16_backbone_param_count()
        elif layer.kind == "flatten":
            features = flat_dim = channels * h * w
            n = 0
        elif layer.kind == "dense":
            if features is None:
                raise ModelError("dense layer before flatten")
            n = features * layer.units + layer.units
            features = layer.units
        else:
            raise ModelError(f"unknown layer kind {layer.kind!r}")
        if h < 1 or w < 1:
            raise ModelError(f"input size {size} collapses to an empty feature map")
        if layer.trainable:
            trainable += n
        else:
            frozen += n
    return ParameterCount(trainable, frozen), flat_dim


# --------------------------------------------------------------------------
# torch realization


class ScreeningModel(nn.Module):
    """``forward`` returns logits; ``predict`` applies the output activation."""

    def __init__(self, spec: ModelSpec, backbone: nn.Module | None, body: nn.Sequential):
        super().__init__()
        self.spec = spec
        self.backbone = backbone
        self.body = body
        self.untrained_backbone = False
        self.weights_sha256: str | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.backbone is not None:
            if any(p.requires_grad for p in self.backbone.parameters()):
                x = self.backbone(x)
            else:
                with torch.no_grad():
                    x = self.backbone(x)
        return self.body(x)

    def train(self, mode: bool = True) -> "ScreeningModel":
        super().train(mode)
        # frozen backbone always runs in inference mode
        if self.backbone is not None:
            self.backbone.eval()
        return self

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Activations right after the flatten layer."""
        if self.backbone is not None:
            with torch.no_grad():
                x = self.backbone(x)
        for module in self.body:
            x = module(x)
            if isinstance(module, nn.Flatten):
                return x
        raise ModelError("model has no flatten layer")


def _build_body(spec: ModelSpec, in_channels: int, in_side: int) -> nn.Sequential:
    modules: list[nn.Module] = []
    channels, side, features = in_channels, in_side, None
    for layer in spec.layers:
        if layer.kind == "backbone":
            continue
        if layer.kind == "conv2d":
            modules.append(nn.Conv2d(channels, layer.units, layer.kernel, padding=layer.padding))
            channels = layer.units
            side = side - layer.kernel[0] + 1 if layer.padding == "valid" else side
        elif layer.kind == "maxpool":
            modules.append(nn.MaxPool2d(layer.pool))
            side //= layer.pool
        elif layer.kind == "flatten":
            modules.append(nn.Flatten())
            features = channels * side * side
        elif layer.kind == "dense":
            modules.append(nn.Linear(features, layer.units))
            features = layer.units
        # output activation is applied by predict / folded into the loss
        if layer.activation == "relu":
            modules.append(nn.ReLU())
    return nn.Sequential(*modules)


def _glorot_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            nn.init.zeros_(m.bias)


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_backbone_weights(backbone: nn.Module, weights_path: str | os.PathLike) -> None:
    """Load VGG16 conv weights from a torchvision-style state dict.

    Accepts a full ``vgg16`` state dict (``features.N.weight`` keys) or one
    holding only the conv stack (``N.weight`` keys).
    """
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ModelError(f"cannot read weights file {weights_path}: {exc}") from exc
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    if not isinstance(state, dict):
        raise ModelError(f"{weights_path}: expected a state dict")
    if any(k.startswith("features.") for k in state):
        state = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
    target = backbone.state_dict()
    for key, ref in target.items():
        got = state.get(key)
        if got is None:
            raise ModelError(f"{weights_path}: layer features.{key} missing (expected shape {tuple(ref.shape)})")
        if tuple(got.shape) != tuple(ref.shape):
            raise ModelError(
                f"{weights_path}: layer features.{key} has shape {tuple(got.shape)}, "
                f"expected {tuple(ref.shape)}"
            )
    backbone.load_state_dict({k: state[k] for k in target})


def instantiate(spec: ModelSpec, seed: int, weights_path: str | os.PathLike | None = None) -> ScreeningModel:
    """Build ``spec`` with seeded Glorot-uniform weights.

    For the transfer model without ``weights_path`` the backbone gets seeded
    pseudo-random weights and the model is tagged ``untrained_backbone``.
    """
    if spec.name not in (BASELINE, TRANSFER):
        raise ModelError(f"unknown model spec {spec.name!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        backbone = None
        channels, side = 3, spec.input_size
        if any(l.kind == "backbone" for l in spec.layers):
            backbone = torchvision.models.vgg16(weights=None).features
            channels, side, _ = vgg16_backbone_shape(spec.input_size)
        body = _build_body(spec, channels, side)
        _glorot_init(body)
    model = ScreeningModel(spec, backbone, body)
    if backbone is not None:
        if weights_path is None:
            model.untrained_backbone = True
        else:
            load_backbone_weights(backbone, weights_path)
            model.weights_sha256 = file_sha256(weights_path)
        for p in backbone.parameters():
            p.requires_grad_(False)
    elif weights_path is not None:
        raise ModelError(f"{spec.name} has no backbone to load weights into")
    model.train()
    return model


def parameter_counts(model: nn.Module) -> ParameterCount:
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    frozen = sum(p.numel() for p in model.parameters() if not p.requires_grad)
    return ParameterCount(trainable, frozen)


def state_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def predict(model: ScreeningModel, batch: torch.Tensor, chunk: int = 32) -> torch.Tensor:
    """Sigmoid head: ``(N,)`` probabilities. Softmax head: ``(N, 2)``."""
    size = model.spec.input_size
    if batch.ndim != 4 or tuple(batch.shape[1:]) != (3, size, size):
        raise ModelError(f"expected input of shape (N, 3, {size}, {size}), got {tuple(batch.shape)}")
    was_training = model.training
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, batch.shape[0], chunk):
            logits = model(batch[start:start + chunk])
            if model.spec.head_kind == "sigmoid_scalar":
                # float64 keeps saturation far out; the clamp keeps (0, 1) open
                probs = torch.sigmoid(logits[:, 0].double())
                outs.append(probs.clamp(torch.finfo(torch.float64).tiny, 1.0 - 2.0**-53))
            else:
                outs.append(torch.softmax(logits.double(), dim=1))
    model.train(was_training)
    if not outs:
        return torch.empty(0)
    return torch.cat(outs)


def export_model(model: ScreeningModel, path: str | os.PathLike, seed: int) -> None:
    torch.save(
        {
            "spec_name": model.spec.name,
            "seed": seed,
            "weights_sha256": model.weights_sha256,
            "untrained_backbone": model.untrained_backbone,
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_exported(path: str | os.PathLike) -> ScreeningModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    spec = spec_by_name(blob["spec_name"])
    model = instantiate(spec, int(blob["seed"]))
    model.load_state_dict(blob["state_dict"])
    model.untrained_backbone = bool(blob["untrained_backbone"])
    model.weights_sha256 = blob["weights_sha256"]
    return model
