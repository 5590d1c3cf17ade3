"""Backbone registry, single-logit classifier, loss and checkpoint archive."""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from .errors import BackboneUnavailableError, DataError

CONVNEXT_BACKBONE = "convnextv2_base.fcmae_ft_in22k_in1k"
TINY_BACKBONE = "tiny-cnn-test"
INPUT_SIZE = 128

CHECKPOINT_FORMAT = "mitoslice-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    identifier: str = CONVNEXT_BACKBONE
    pretrained: bool = True

    def to_dict(self):
        return asdict(self)


class TinyCNN(nn.Module):
    """Three conv/BN/ReLU/pool stages and a global average pool. No downloads."""

    def __init__(self, widths=(16, 32, 48)):
        super().__init__()
        layers, c_in = [], 3
        for i, c_out in enumerate(widths):
            layers += [
                # stride-2 stem keeps CPU cost low at 128 px input
                nn.Conv2d(c_in, c_out, 3, stride=2 if i == 0 else 1, padding=1, bias=False),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.num_features = c_in

    def forward(self, x):
        return self.features(x).mean(dim=(2, 3))


def _tiny_factory(pretrained: bool):
    if pretrained:
        raise BackboneUnavailableError(f"{TINY_BACKBONE} has no pretrained weights")
    net = TinyCNN()
    return net, net.num_features


def _timm_factory(name: str):
    def factory(pretrained: bool):
        try:
            import timm
        except ImportError as exc:
            raise BackboneUnavailableError(
                f"backbone {name!r} needs the 'timm' package (pip install mitoslice[pretrained])"
            ) from exc
        try:
            net = timm.create_model(name, pretrained=pretrained, num_classes=0)
        except Exception as exc:  # network, hub or weight errors
            raise BackboneUnavailableError(f"could not build {name!r} (pretrained={pretrained}): {exc}") from exc
        return net, int(net.num_features)

    return factory


BACKBONES: dict[str, Callable[[bool], tuple[nn.Module, int]]] = {
    CONVNEXT_BACKBONE: _timm_factory(CONVNEXT_BACKBONE),
    TINY_BACKBONE: _tiny_factory,
}


def register_backbone(identifier: str, factory: Callable[[bool], tuple[nn.Module, int]]):
    BACKBONES[identifier] = factory


class ClassifierModel(nn.Module):
    def __init__(self, backbone: nn.Module, feature_dim: int, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        self.feature_dim = feature_dim
        self.backbone = backbone
        self.head = nn.Linear(feature_dim, 1)
        bound = 1.0 / math.sqrt(feature_dim)
        nn.init.uniform_(self.head.weight, -bound, bound)
        nn.init.zeros_(self.head.bias)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x):
        return self.head(self.backbone(x)).squeeze(-1)


def build_model(spec: BackboneSpec, seed: int | None = None) -> ClassifierModel:
    """Build backbone + fresh single-logit head. ``seed`` pins initialization."""
    try:
        factory = BACKBONES[spec.identifier]
    except KeyError:
        raise ValueError(f"unknown backbone {spec.identifier!r}; known: {sorted(BACKBONES)}") from None
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        backbone, dim = factory(spec.pretrained)
        return ClassifierModel(backbone, dim, spec)


def forward(model: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    if batch.ndim != 4 or batch.shape[1] != 3 or tuple(batch.shape[2:]) != (INPUT_SIZE, INPUT_SIZE):
        raise ValueError(f"expected N x 3 x {INPUT_SIZE} x {INPUT_SIZE} input, got {tuple(batch.shape)}")
    return model(batch)


def bce_with_logits(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on logits, in the fused log-sum-exp form."""
    if logits.numel() == 0:
        raise ValueError("empty batch")
    targets = targets.to(logits.dtype)
    loss = logits.clamp(min=0) - logits * targets + torch.log1p(torch.exp(-logits.abs()))
    return loss.mean()


# --- checkpoint archive -----------------------------------------------------


def _state_digest(state: dict[str, torch.Tensor], meta: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(meta, sort_keys=True).encode())
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes() if t.dtype != torch.bfloat16 else t.float().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, state_dict: dict, meta: dict) -> Path:
    """Write a single-file archive: format tag, version, meta, parameters, sha256.

    ``meta`` must be JSON-serializable and carry at least ``backbone``, ``crop``,
    ``fold``, ``seed`` and ``best_val_loss``.
    """
    for key in ("backbone", "crop", "fold", "seed", "best_val_loss"):
        if key not in meta:
            raise ValueError(f"checkpoint meta missing {key!r}")
    state = {k: v.detach().cpu().clone() for k, v in state_dict.items()}
    archive = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": json.loads(json.dumps(meta)),
        "state_dict": state,
        "sha256": _state_digest(state, meta),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(archive, buf)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    archive = torch.load(path, map_location="cpu", weights_only=True)
    if archive.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    if archive.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {archive.get('version')}")
    if _state_digest(archive["state_dict"], archive["meta"]) != archive["sha256"]:
        raise DataError(f"{path}: checksum mismatch, archive is corrupt")
    return archive


def model_from_checkpoint(archive: dict) -> ClassifierModel:
    b = archive["meta"]["backbone"]
    # Architecture only; the stored parameters replace any pretrained weights.
    model = build_model(BackboneSpec(b["identifier"], pretrained=False))
    model.load_state_dict(archive["state_dict"])
    model.spec = BackboneSpec(**b)
    return model.eval()
