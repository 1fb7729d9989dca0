"""
Moduł Denoisera - UNet ε_θ(x_t, t)
==================================
Obsługuje:
- Konfigurację małego UNet warunkowanego krokiem czasu
- Inicjalizację Kaiming (warstwa wyjściowa zerowa)
- Przejście w przód na silniku tensorów
- Cień EMA wag używany do próbkowania
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from loguru import logger

from lqsynth.core.errors import DimensionError, StepRangeError
from lqsynth.core.optim import ema_update
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import (
    Tensor,
    default_dtype,
    add,
    concat_channels,
    conv2d,
    group_norm,
    linear,
    reshape,
    silu,
    time_embedding_batch,
    upsample_nearest2x,
)


@dataclass
class UNetConfig:
    """Konfiguracja architektury denoisera."""
    in_channels: int = 3
    base_channels: int = 32
    channel_mults: List[int] = field(default_factory=lambda: [1, 2, 4])
    res_blocks_per_level: int = 2
    time_embed_dim: int = 128
    norm_groups: int = 8
    total_steps: int = 1000

    def __post_init__(self):
        self.channel_mults = [int(m) for m in self.channel_mults]
        self.validate()

    @property
    def levels(self) -> int:
        return len(self.channel_mults)

    def level_channels(self) -> List[int]:
        return [self.base_channels * m for m in self.channel_mults]

    def validate(self) -> None:
        if not self.channel_mults or min(self.channel_mults) < 1:
            raise DimensionError(f"Niepoprawne mnożniki kanałów: {self.channel_mults}")
        if self.res_blocks_per_level < 1:
            raise DimensionError("Wymagany co najmniej jeden blok residualny na poziom")
        if self.base_channels < 2 or self.base_channels % 2:
            raise DimensionError(
                f"base_channels musi być parzyste (osadzenie czasu), jest {self.base_channels}"
            )
        for channels in [self.base_channels] + self.level_channels():
            if channels % self.norm_groups:
                raise DimensionError(
                    f"norm_groups={self.norm_groups} nie dzieli {channels} kanałów"
                )

    def check_input(self, dims: tuple) -> None:
        """Sprawdź, czy wejście pasuje do architektury."""
        if len(dims) != 4 or dims[1] != self.in_channels:
            raise DimensionError(f"Oczekiwano (N, {self.in_channels}, H, W), jest {dims}")
        factor = 2 ** (self.levels - 1)
        _, _, h, w = dims
        if h % factor or w % factor:
            raise DimensionError(f"Wymiary {h}x{w} muszą być podzielne przez {factor}")
        if h // factor < 2 or w // factor < 2:
            raise DimensionError(f"Wejście {h}x{w} za małe dla {self.levels} poziomów")

    @classmethod
    def from_settings(cls, settings, total_steps: int = 1000) -> "UNetConfig":
        return cls(
            in_channels=settings.in_channels,
            base_channels=settings.base_channels,
            channel_mults=list(settings.channel_mults),
            res_blocks_per_level=settings.res_blocks_per_level,
            time_embed_dim=settings.time_embed_dim,
            norm_groups=settings.norm_groups,
            total_steps=total_steps,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "in_channels": self.in_channels,
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "res_blocks_per_level": self.res_blocks_per_level,
            "time_embed_dim": self.time_embed_dim,
            "norm_groups": self.norm_groups,
            "total_steps": self.total_steps,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "UNetConfig":
        return cls(**data)


# ==================== Inicjalizacja ====================

class _ParamBuilder:
    """Rejestruje parametry pod unikalnymi nazwami."""

    def __init__(self, rng: Optional[Rng]):
        self.rng = rng
        self.params: Dict[str, Tensor] = {}

    def _add(self, name: str, data: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"Zduplikowana nazwa parametru: {name}")
        self.params[name] = Tensor(data.astype(default_dtype()), requires_grad=True, name=name)

    def kaiming(self, name: str, shape: tuple, fan_in: int) -> None:
        if self.rng is None:
            self._add(name, np.zeros(shape, dtype=default_dtype()))
            return
        bound = np.sqrt(6.0 / fan_in)
        gen = self.rng.child(name).generator()
        self._add(name, gen.uniform(-bound, bound, size=shape))

    def constant(self, name: str, shape: tuple, value: float) -> None:
        self._add(name, np.full(shape, value, dtype=default_dtype()))

    def conv(self, prefix: str, cin: int, cout: int, k: int = 3, zero: bool = False) -> None:
        if zero:
            self.constant(f"{prefix}.weight", (cout, cin, k, k), 0.0)
        else:
            self.kaiming(f"{prefix}.weight", (cout, cin, k, k), cin * k * k)
        self.constant(f"{prefix}.bias", (cout,), 0.0)

    def dense(self, prefix: str, din: int, dout: int) -> None:
        self.kaiming(f"{prefix}.weight", (dout, din), din)
        self.constant(f"{prefix}.bias", (dout,), 0.0)

    def norm(self, prefix: str, channels: int) -> None:
        self.constant(f"{prefix}.gamma", (channels,), 1.0)
        self.constant(f"{prefix}.beta", (channels,), 0.0)

    def res_block(self, prefix: str, cin: int, cout: int, time_dim: int) -> None:
        self.norm(f"{prefix}.norm1", cin)
        self.conv(f"{prefix}.conv1", cin, cout)
        self.dense(f"{prefix}.time_proj", time_dim, cout)
        self.norm(f"{prefix}.norm2", cout)
        self.conv(f"{prefix}.conv2", cout, cout)
        if cin != cout:
            self.conv(f"{prefix}.skip", cin, cout, k=1)


def _build_parameters(config: UNetConfig, rng: Optional[Rng]) -> Dict[str, Tensor]:
    b = _ParamBuilder(rng)
    td = config.time_embed_dim
    b.dense("time.linear1", config.base_channels, td)
    b.dense("time.linear2", td, td)
    b.conv("conv_in", config.in_channels, config.base_channels)

    channels = config.level_channels()
    ch = config.base_channels
    for level, cout in enumerate(channels):
        for block in range(config.res_blocks_per_level):
            b.res_block(f"down.{level}.res{block}", ch, cout, td)
            ch = cout
        if level < config.levels - 1:
            b.conv(f"down.{level}.downsample", ch, ch)

    b.res_block("mid.res", ch, ch, td)

    for level in reversed(range(config.levels)):
        cout = channels[level]
        if level < config.levels - 1:
            b.conv(f"up.{level}.upsample", ch, ch)
        for block in range(config.res_blocks_per_level):
            cin = ch + cout if block == 0 else cout
            b.res_block(f"up.{level}.res{block}", cin, cout, td)
        ch = cout

    b.norm("norm_out", ch)
    b.conv("conv_out", ch, config.in_channels, zero=True)
    return b.params


# ==================== Model ====================

class DenoiserModel:
    """
    Predyktor szumu ε_θ(x_t, t): UNet z osadzeniem czasu.

    forward() przyjmuje indeksy kroków 0..T−1, predict_noise() kroki dyfuzji 1..T.
    """

    def __init__(
        self,
        config: UNetConfig,
        params: Dict[str, Tensor],
        ema: Optional[Dict[str, Tensor]] = None,
        frozen: bool = False,
    ):
        self.config = config
        self._params = params
        self._frozen = frozen
        if ema is None:
            ema = {name: Tensor(p.data.copy(), name=name) for name, p in params.items()}
        self._ema = ema
        self._check_params()

    @classmethod
    def init(cls, config: UNetConfig, rng: Rng) -> "DenoiserModel":
        """Nowy model z wagami Kaiminga i zerową warstwą wyjściową."""
        model = cls(config, _build_parameters(config, rng))
        logger.info(f"Denoiser zainicjalizowany ({model.param_count()} parametrów)")
        return model

    def _check_params(self) -> None:
        expected = _build_parameters(self.config, None)
        for source, label in ((self._params, "wagi"), (self._ema, "EMA")):
            if set(source) != set(expected):
                missing = sorted(set(expected) - set(source))
                extra = sorted(set(source) - set(expected))
                raise DimensionError(f"{label}: brak {missing[:3]}, nadmiar {extra[:3]}")
            for name, tensor in source.items():
                if tensor.dims != expected[name].dims:
                    raise DimensionError(
                        f"{label} {name}: {tensor.dims} != {expected[name].dims}"
                    )

    # ==================== Parametry ====================

    def parameters(self) -> Dict[str, Tensor]:
        return self._params

    def ema_parameters(self) -> Dict[str, Tensor]:
        return self._ema

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def update_ema(self, decay: float) -> None:
        ema_update(self._ema, self._params, decay)

    def ema_copy(self) -> "DenoiserModel":
        """Zamrożony model na wagach EMA (do próbkowania)."""
        weights = {
            name: Tensor(t.data.copy(), requires_grad=False, name=name)
            for name, t in self._ema.items()
        }
        shadow = {name: Tensor(t.data.copy(), name=name) for name, t in self._ema.items()}
        return DenoiserModel(self.config, weights, ema=shadow, frozen=True)

    @property
    def frozen(self) -> bool:
        return self._frozen

    # ==================== Przejście w przód ====================

    def _res_block(self, prefix: str, x: Tensor, temb: Tensor) -> Tensor:
        p = self._params
        groups = self.config.norm_groups
        h = group_norm(x, groups, p[f"{prefix}.norm1.gamma"], p[f"{prefix}.norm1.beta"])
        h = conv2d(silu(h), p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"])
        t = linear(temb, p[f"{prefix}.time_proj.weight"], p[f"{prefix}.time_proj.bias"])
        h = add(h, reshape(t, (t.dims[0], t.dims[1], 1, 1)))
        h = group_norm(h, groups, p[f"{prefix}.norm2.gamma"], p[f"{prefix}.norm2.beta"])
        h = conv2d(silu(h), p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"])
        skip = x
        if f"{prefix}.skip.weight" in p:
            skip = conv2d(x, p[f"{prefix}.skip.weight"], p[f"{prefix}.skip.bias"])
        return add(skip, h)

    def _encode(self, x: Tensor, indices: np.ndarray):
        """Ścieżka w dół: zwraca (h, skipy kolejnych poziomów, osadzenie czasu)."""
        cfg = self.config
        cfg.check_input(x.dims)
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        if indices.size != x.dims[0]:
            raise DimensionError(f"{indices.size} kroków dla {x.dims[0]} próbek")
        if indices.min() < 0 or indices.max() >= cfg.total_steps:
            raise StepRangeError(f"Indeks kroku poza [0, {cfg.total_steps - 1}]")

        p = self._params
        emb = Tensor(time_embedding_batch(indices, cfg.base_channels, dtype=x.data.dtype))
        temb = linear(emb, p["time.linear1.weight"], p["time.linear1.bias"])
        temb = linear(silu(temb), p["time.linear2.weight"], p["time.linear2.bias"])
        temb = silu(temb)

        h = conv2d(x, p["conv_in.weight"], p["conv_in.bias"])
        skips = []
        for level in range(cfg.levels):
            for block in range(cfg.res_blocks_per_level):
                h = self._res_block(f"down.{level}.res{block}", h, temb)
            skips.append(h)
            if level < cfg.levels - 1:
                h = conv2d(
                    h,
                    p[f"down.{level}.downsample.weight"],
                    p[f"down.{level}.downsample.bias"],
                    stride=2,
                )
        return h, skips, temb

    def forward(self, x: Tensor, indices: np.ndarray) -> Tensor:
        """
        Przewidywany szum dla x_t.

        Args:
            x: (N, C, H, W) w zakresie modelu
            indices: indeks kroku 0..T−1 dla każdej próbki

        Returns:
            Tensor o wymiarach wejścia
        """
        cfg = self.config
        p = self._params
        h, skips, temb = self._encode(x, indices)

        h = self._res_block("mid.res", h, temb)

        for level in reversed(range(cfg.levels)):
            if level < cfg.levels - 1:
                h = upsample_nearest2x(h)
                h = conv2d(h, p[f"up.{level}.upsample.weight"], p[f"up.{level}.upsample.bias"])
            h = concat_channels(h, skips[level])
            for block in range(cfg.res_blocks_per_level):
                h = self._res_block(f"up.{level}.res{block}", h, temb)

        h = group_norm(h, cfg.norm_groups, p["norm_out.gamma"], p["norm_out.beta"])
        return conv2d(silu(h), p["conv_out.weight"], p["conv_out.bias"])

    def features(self, x: Tensor, indices: np.ndarray, level: int) -> np.ndarray:
        """Aktywacje enkodera na danym poziomie, (N, C_level, H_level, W_level)."""
        if not 0 <= level < self.config.levels:
            raise DimensionError(f"Poziom {level} poza [0, {self.config.levels - 1}]")
        _, skips, _ = self._encode(x, indices)
        return skips[level].data

    def predict_noise(self, x: Tensor, steps: np.ndarray) -> Tensor:
        """ε̂ dla kroków dyfuzji t ∈ 1..T."""
        return self.forward(x, np.asarray(steps) - 1)

    __call__ = predict_noise
