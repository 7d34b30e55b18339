"""
RegNet — Сеть-регуляризатор Φ_V (U-Net-подобная) на core.tensor.

Архитектура задаётся декларативно списком LayerSpec; веса хранятся в
WeightStore как словарь "<слой>.weight" / "<слой>.bias" → массив.

Пресет tiny-unet:
    1→8→8 ↓ 8→16→16 ↓ 16→32→32 ↑ 32→16 ⊕ → 16 ↑ 16→8 ⊕ → 8 → 1
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from core.errors import ConfigError, ShapeError
from core.tensor import (
    Array, Tensor, add, concat_channels, conv2d, leaky_relu,
    maxpool2d, upsample_nearest2x,
)

logger = logging.getLogger("nett.regnet")

DEFAULT_SLOPE = 0.1


class LayerKind(str, Enum):
    CONV = "conv"
    LEAKY_RELU = "leaky_relu"
    MAXPOOL = "maxpool"
    UPSAMPLE = "upsample"
    CONCAT_SKIP = "concat_skip"


@dataclass(frozen=True)
class LayerSpec:
    """Описание одного слоя."""
    kind: LayerKind
    name: str
    in_channels: int = 0        # только conv
    out_channels: int = 0       # только conv
    kernel: int = 3             # только conv
    slope: float = DEFAULT_SLOPE  # только leaky_relu
    source: str | None = None   # только concat_skip: имя более раннего слоя

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value, "name": self.name}
        if self.kind is LayerKind.CONV:
            d.update(in_channels=self.in_channels, out_channels=self.out_channels, kernel=self.kernel)
        elif self.kind is LayerKind.LEAKY_RELU:
            d["slope"] = self.slope
        elif self.kind is LayerKind.CONCAT_SKIP:
            d["source"] = self.source
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LayerSpec:
        return cls(**{**d, "kind": LayerKind(d["kind"])})


@dataclass(frozen=True)
class NetworkSpec:
    """Упорядоченный список слоёв + флаг финального пропуска (Φ(x) = net(x) + x)."""
    layers: tuple[LayerSpec, ...]
    in_channels: int = 1
    out_channels: int = 1
    final_skip: bool = False
    preset: str = "custom"

    @property
    def pool_count(self) -> int:
        return sum(1 for layer in self.layers if layer.kind is LayerKind.MAXPOOL)

    @property
    def conv_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.kind is LayerKind.CONV]

    def validate(self) -> None:
        """Проверить цепочку каналов, уровни разрешения и источники пропусков."""
        if not self.layers:
            raise ConfigError("network spec has no layers", code="network")
        channels = self.in_channels
        level = 0
        seen: dict[str, tuple[int, int]] = {}   # имя → (каналы, уровень)
        for layer in self.layers:
            if layer.name in seen:
                raise ConfigError(f"layer {layer.name!r}: duplicate name", code="network")
            if layer.kind is LayerKind.CONV:
                if layer.in_channels != channels:
                    raise ConfigError(
                        f"layer {layer.name!r}: expects {layer.in_channels} input channels, "
                        f"chain provides {channels}", code="network")
                if layer.out_channels < 1 or layer.kernel < 1 or layer.kernel % 2 == 0:
                    raise ConfigError(f"layer {layer.name!r}: invalid out_channels/kernel", code="network")
                channels = layer.out_channels
            elif layer.kind is LayerKind.LEAKY_RELU:
                if not 0.0 < layer.slope < 1.0:
                    raise ConfigError(f"layer {layer.name!r}: slope must lie in (0, 1)", code="network")
            elif layer.kind is LayerKind.MAXPOOL:
                level += 1
            elif layer.kind is LayerKind.UPSAMPLE:
                level -= 1
                if level < 0:
                    raise ConfigError(f"layer {layer.name!r}: more upsamples than pools", code="network")
            elif layer.kind is LayerKind.CONCAT_SKIP:
                src = seen.get(layer.source or "")
                if src is None:
                    raise ConfigError(f"layer {layer.name!r}: skip source {layer.source!r} is not an earlier layer",
                                      code="network")
                if src[1] != level:
                    raise ConfigError(f"layer {layer.name!r}: skip source {layer.source!r} is at level {src[1]}, "
                                      f"current level is {level}", code="network")
                channels += src[0]
            seen[layer.name] = (channels, level)
        if level != 0:
            raise ConfigError(f"network ends at level {level}: pools and upsamples must match", code="network")
        if channels != self.out_channels:
            raise ConfigError(f"network ends with {channels} channels, expected {self.out_channels}", code="network")
        if self.final_skip and self.in_channels != self.out_channels:
            raise ConfigError("final skip needs equal input and output channels", code="network")

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in self.conv_layers:
            k = layer.kernel
            shapes[f"{layer.name}.weight"] = (layer.out_channels, layer.in_channels, k, k)
            shapes[f"{layer.name}.bias"] = (layer.out_channels,)
        return shapes

    def to_dict(self) -> dict[str, Any]:
        return {
            "preset": self.preset,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "final_skip": self.final_skip,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> NetworkSpec:
        return cls(
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            in_channels=d.get("in_channels", 1),
            out_channels=d.get("out_channels", 1),
            final_skip=d.get("final_skip", False),
            preset=d.get("preset", "custom"),
        )


def unet_spec(
    levels: int = 2,
    width: int = 8,
    slope: float = DEFAULT_SLOPE,
    final_skip: bool = False,
    channels: int = 1,
    preset: str = "unet",
) -> NetworkSpec:
    """Кодер–декодер: на каждом уровне две свёртки 3×3, пропуски — конкатенацией."""
    layers: list[LayerSpec] = []

    def conv_act(name: str, cin: int, cout: int) -> None:
        layers.append(LayerSpec(LayerKind.CONV, name, cin, cout))
        layers.append(LayerSpec(LayerKind.LEAKY_RELU, f"{name}_act", slope=slope))

    c = channels
    skips: list[tuple[str, int]] = []
    for lvl in range(1, levels + 1):
        w = width * 2 ** (lvl - 1)
        conv_act(f"enc{lvl}a", c, w)
        conv_act(f"enc{lvl}b", w, w)
        skips.append((f"enc{lvl}b_act", w))
        layers.append(LayerSpec(LayerKind.MAXPOOL, f"pool{lvl}"))
        c = w

    w = width * 2 ** levels
    conv_act("mid_a", c, w)
    conv_act("mid_b", w, w)
    c = w

    for lvl in range(levels, 0, -1):
        src, w = skips[lvl - 1]
        layers.append(LayerSpec(LayerKind.UPSAMPLE, f"up{lvl}"))
        conv_act(f"dec{lvl}_up", c, w)
        layers.append(LayerSpec(LayerKind.CONCAT_SKIP, f"skip{lvl}", source=src))
        conv_act(f"dec{lvl}", 2 * w, w)
        c = w

    layers.append(LayerSpec(LayerKind.CONV, "out", c, channels))
    return NetworkSpec(tuple(layers), channels, channels, final_skip, preset)


def tiny_unet(slope: float = DEFAULT_SLOPE, final_skip: bool = False) -> NetworkSpec:
    """Настольный пресет: каналы 1→8→16→32, два пула, два апсемплинга."""
    return unet_spec(levels=2, width=8, slope=slope, final_skip=final_skip, preset="tiny-unet")


PRESETS = {"tiny-unet": tiny_unet}


def preset_spec(name: str, slope: float = DEFAULT_SLOPE, final_skip: bool = False) -> NetworkSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown network preset {name!r}; known: {', '.join(PRESETS)}", code="network")
    return PRESETS[name](slope=slope, final_skip=final_skip)


# ============================================================
# Веса
# ============================================================

@dataclass
class WeightStore:
    """Именованные параметры сети."""
    spec: NetworkSpec
    params: dict[str, Array] = field(default_factory=dict)
    seed: int = 0

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> WeightStore:
        return WeightStore(self.spec, {k: v.copy() for k, v in self.params.items()}, self.seed)

    def zeros(self) -> WeightStore:
        return WeightStore(self.spec, {k: np.zeros_like(v) for k, v in self.params.items()}, self.seed)

    def parameter_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}


def _following_slope(spec: NetworkSpec, index: int) -> float | None:
    nxt = spec.layers[index + 1] if index + 1 < len(spec.layers) else None
    if nxt is not None and nxt.kind is LayerKind.LEAKY_RELU:
        return nxt.slope
    return None


def build_network(spec: NetworkSpec, seed: int = 0) -> WeightStore:
    """He-инициализация по fan-in с поправкой на наклон leaky ReLU; смещения нулевые."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Array] = {}
    convs = spec.conv_layers
    for i, layer in enumerate(spec.layers):
        if layer.kind is not LayerKind.CONV:
            continue
        k = layer.kernel
        fan_in = layer.in_channels * k * k
        slope = _following_slope(spec, i)
        gain = 2.0 / (1.0 + slope ** 2) if slope is not None else 1.0
        w = rng.normal(0.0, np.sqrt(gain / fan_in), size=(layer.out_channels, layer.in_channels, k, k))
        if spec.final_skip and layer is convs[-1]:
            # Φ стартует с тождества
            w = np.zeros_like(w)
        params[f"{layer.name}.weight"] = w
        params[f"{layer.name}.bias"] = np.zeros(layer.out_channels)
    store = WeightStore(spec, params, seed)
    logger.debug(f"Сеть {spec.preset}: {store.parameter_count} параметров (seed={seed})")
    return store


def forward(weights: WeightStore, x: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
    """Φ_V(x) для x формы N×C×H×W; лента (если открыта) доходит до x."""
    spec = weights.spec
    if x.data.ndim != 4:
        raise ShapeError(f"forward: expected N×C×H×W input, got {x.shape}")
    div = 2 ** spec.pool_count
    h, w = x.shape[2:]
    if h % div or w % div:
        raise ShapeError(f"forward: spatial dims {h}x{w} are not divisible by {div} (2^{spec.pool_count} pools)")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"forward: input {x.shape} has {x.shape[1]} channels, network expects {spec.in_channels}")
    p = params if params is not None else weights.parameter_tensors()

    outputs: dict[str, Tensor] = {}
    h_t = x
    for layer in spec.layers:
        if layer.kind is LayerKind.CONV:
            h_t = conv2d(h_t, p[f"{layer.name}.weight"], p[f"{layer.name}.bias"], pad=layer.kernel // 2)
        elif layer.kind is LayerKind.LEAKY_RELU:
            h_t = leaky_relu(h_t, layer.slope)
        elif layer.kind is LayerKind.MAXPOOL:
            h_t = maxpool2d(h_t)
        elif layer.kind is LayerKind.UPSAMPLE:
            h_t = upsample_nearest2x(h_t)
        elif layer.kind is LayerKind.CONCAT_SKIP:
            h_t = concat_channels(h_t, outputs[layer.source])
        outputs[layer.name] = h_t
    if spec.final_skip:
        h_t = add(h_t, x)
    return h_t


def predict(weights: WeightStore, images: Array) -> Array:
    """Φ на изображениях (H, W) или (N, H, W) без записи на ленту."""
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    batch = images[None, None] if single else images[:, None]
    out = forward(weights, Tensor(batch)).data[:, 0]
    return out[0] if single else out
