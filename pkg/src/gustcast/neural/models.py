"""Spatial CNN and parallel CNN-RNN forecasters.

Both models run one convolutional head per NWP source on every horizon step
(the steps are folded into the batch axis, so the head weights are shared
across steps). The CNN-RNN adds an LSTM encoder over the power lags whose
top-layer final state seeds a decoder cell unrolled over the horizon; the
decoder output of step ``h`` is fused with the step-``h`` conv features.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import LSTM, BatchNorm, Conv2D, Dense, Module, Tensor, concat, conv_output_size, dropout, maxpool2d, \
    relu, stack
from ..autodiff import tensor as T
from ..data.nwp import ARPEGE, GFS
from ..data.windows import HORIZON, LOOKBACK, N_FARMS

N_TIME = 4


@dataclass(frozen=True)
class CnnHeadConfig:
    filters: tuple[int, int] = (264, 128)
    kernels: tuple[int, int] = (4, 2)
    strides: tuple[int, int] = (1, 1)
    padding: tuple[str, str] = ("same", "same")
    pool: int = 2
    dropout: float = 0.2

    def __post_init__(self):
        for name in ("filters", "kernels", "strides", "padding"):
            if len(getattr(self, name)) != 2:
                raise ValueError(f"CNN head needs exactly two conv layers ({name})")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def output_grid(self, height: int, width: int) -> tuple[int, int]:
        for k, s, p in zip(self.kernels, self.strides, self.padding):
            height, width = conv_output_size(height, k, s, p), conv_output_size(width, k, s, p)
        if height < self.pool or width < self.pool:
            raise ValueError(f"conv output {height}x{width} is too small for {self.pool}x{self.pool} pooling")
        return (height - self.pool) // self.pool + 1, (width - self.pool) // self.pool + 1

    def flat_width(self, height: int, width: int) -> int:
        h, w = self.output_grid(height, width)
        return h * w * self.filters[1]


@dataclass(frozen=True)
class NeuralConfig:
    gfs_grid: tuple[int, int, int] = (GFS.lat_count, GFS.lon_count, GFS.selected_level_count)
    arp_grid: tuple[int, int, int] = (ARPEGE.lat_count, ARPEGE.lon_count, ARPEGE.selected_level_count)
    horizon: int = HORIZON
    lookback: int = LOOKBACK
    n_farms: int = N_FARMS
    head: CnnHeadConfig = field(default_factory=CnnHeadConfig)
    encoder_units: tuple[int, ...] = (128, 64)
    dense_units: tuple[int, ...] = (128, 64)
    dtype: str = "float64"

    @property
    def decoder_units(self) -> int:
        return self.encoder_units[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NeuralConfig":
        d = dict(d)
        head = CnnHeadConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("head").items()})
        tuples = {k: tuple(v) for k, v in d.items() if isinstance(v, list)}
        return cls(head=head, **{**d, **tuples})


class CnnHead(Module):
    """conv -> batchnorm -> ReLU, twice, then 2x2 max-pool, dropout and flatten.

    The convolutions carry no bias: batchnorm subtracts the per-channel mean
    right after, so a bias would receive an identically zero gradient.
    """

    def __init__(self, grid: tuple[int, int, int], config: CnnHeadConfig, rng: np.random.Generator, dtype):
        self.grid = tuple(grid)
        self.config = config
        channels = grid[2]
        self.conv1 = Conv2D(channels, config.filters[0], config.kernels[0], config.strides[0], config.padding[0],
                            rng, dtype, use_bias=False)
        self.bn1 = BatchNorm(config.filters[0], dtype=dtype)
        self.conv2 = Conv2D(config.filters[0], config.filters[1], config.kernels[1], config.strides[1],
                            config.padding[1], rng, dtype, use_bias=False)
        self.bn2 = BatchNorm(config.filters[1], dtype=dtype)
        self.width = config.flat_width(grid[0], grid[1])

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        if tuple(x.shape[1:]) != self.grid:
            raise ValueError(f"head expects grids of shape {self.grid}, got {tuple(x.shape[1:])}")
        h = relu(self.bn1(self.conv1(x)))
        h = relu(self.bn2(self.conv2(h)))
        h = maxpool2d(h, self.config.pool, self.config.pool)
        h = dropout(h, self.config.dropout, self.training, rng)
        return T.reshape(h, (x.shape[0], self.width))


class DenseStack(Module):
    """Hidden ReLU layers followed by a single linear output unit."""

    def __init__(self, in_features: int, units: tuple[int, ...], rng: np.random.Generator, dtype):
        sizes = (in_features,) + tuple(units)
        self.hidden = [Dense(a, b, rng, dtype) for a, b in zip(sizes[:-1], sizes[1:])]
        self.output = Dense(sizes[-1], 1, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.hidden:
            x = relu(layer(x))
        return self.output(x)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _check_inputs(config: NeuralConfig, batch: dict, need_lags: bool) -> int:
    B = len(batch["x_gfs"])
    hz = config.horizon
    expected = {"x_gfs": (B, hz) + config.gfs_grid, "x_arp": (B, hz) + config.arp_grid,
                "x_time": (B, hz, N_TIME), "x_farm": (B, config.n_farms)}
    if need_lags:
        expected["x_lags"] = (B, config.lookback, 1)
    for key, shape in expected.items():
        if key not in batch:
            raise ValueError(f"missing input {key}")
        if tuple(np.shape(batch[key])) != shape:
            raise ValueError(f"{key} has shape {tuple(np.shape(batch[key]))}, expected {shape}")
    return B


class _Forecaster(Module):
    kind = ""

    def __init__(self, config: NeuralConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        dtype = np.dtype(config.dtype)
        self.config = config
        self.seed = seed
        self.gfs_head = CnnHead(config.gfs_grid, config.head, rng, dtype)
        self.arp_head = CnnHead(config.arp_grid, config.head, rng, dtype)
        self._init_rest(rng, dtype)
        self._dropout_rng: np.random.Generator | None = None
        self.trained = False

    def _init_rest(self, rng, dtype):
        raise NotImplementedError

    def set_dropout_rng(self, rng: np.random.Generator | None) -> None:
        self._dropout_rng = rng

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def conv_features(self, x_gfs, x_arp) -> Tensor:
        """``[B*horizon, gfs_width + arp_width]``; rows are sample-major, step-minor."""
        B, hz = np.shape(x_gfs)[:2]
        g = _as_tensor(x_gfs, self.dtype)
        a = _as_tensor(x_arp, self.dtype)
        g = self.gfs_head(T.reshape(g, (B * hz,) + tuple(g.shape[2:])), self._dropout_rng)
        a = self.arp_head(T.reshape(a, (B * hz,) + tuple(a.shape[2:])), self._dropout_rng)
        return concat([g, a], axis=1)

    def _side_features(self, batch: dict, B: int) -> Tensor:
        hz = self.config.horizon
        time = np.asarray(batch["x_time"], dtype=self.dtype).reshape(B * hz, N_TIME)
        farm = np.repeat(np.asarray(batch["x_farm"], dtype=self.dtype), hz, axis=0)
        return Tensor(np.concatenate([time, farm], axis=1))

    @property
    def fused_width(self) -> int:
        raise NotImplementedError


class SpatialCnn(_Forecaster):
    """Per-step conv features of both sources plus time and farm features; no lag input."""

    kind = "cnn"

    def _init_rest(self, rng, dtype):
        self.head = DenseStack(self.fused_width, self.config.dense_units, rng, dtype)

    @property
    def fused_width(self) -> int:
        return self.gfs_head.width + self.arp_head.width + N_TIME + self.config.n_farms

    def forward(self, batch: dict) -> Tensor:
        B = _check_inputs(self.config, batch, need_lags=False)
        fused = concat([self.conv_features(batch["x_gfs"], batch["x_arp"]), self._side_features(batch, B)], axis=1)
        return T.reshape(self.head(fused), (B, self.config.horizon))


class CnnRnn(_Forecaster):
    """LSTM encoder over the lags, decoder cell over the horizon, fused per step with the conv features."""

    kind = "cnn-rnn"

    def _init_rest(self, rng, dtype):
        sizes = (1,) + tuple(self.config.encoder_units)
        self.encoder = [LSTM(a, b, rng, dtype) for a, b in zip(sizes[:-1], sizes[1:])]
        self.decoder = LSTM(N_TIME + self.config.n_farms, self.config.decoder_units, rng, dtype)
        self.head = DenseStack(self.fused_width, self.config.dense_units, rng, dtype)

    @property
    def fused_width(self) -> int:
        return self.config.decoder_units + self.gfs_head.width + self.arp_head.width + N_TIME + self.config.n_farms

    def encode(self, x_lags):
        seq = _as_tensor(x_lags, self.dtype)
        finals = []
        for layer in self.encoder:
            seq, state = layer(seq)
            finals.append(state)
        return finals

    def forward(self, batch: dict) -> Tensor:
        B = _check_inputs(self.config, batch, need_lags=True)
        hz = self.config.horizon
        state = self.encode(batch["x_lags"])[-1]
        side = self._side_features(batch, B)
        dec_in = T.reshape(side, (B, hz, side.shape[1]))
        outputs = []
        for h in range(hz):
            out, state = self.decoder.step(state, dec_in[:, h, :])
            outputs.append(out)
        dec = T.reshape(stack(outputs, axis=1), (B * hz, self.config.decoder_units))
        fused = concat([dec, self.conv_features(batch["x_gfs"], batch["x_arp"]), side], axis=1)
        return T.reshape(self.head(fused), (B, hz))


MODELS = {"cnn": SpatialCnn, "cnn-rnn": CnnRnn}


def build_model(kind: str, config: NeuralConfig = NeuralConfig(), seed: int = 0) -> _Forecaster:
    try:
        return MODELS[kind](config, seed)
    except KeyError:
        raise ValueError(f"unknown neural model {kind!r}; choose from {sorted(MODELS)}") from None
