"""Gated residual forecaster: RevIN, adaptive norm, decomposition, patching,
linear + KAN/MLP correction branches, and per-channel gates.

All processing is channel-independent: a batch of windows [N, L, C] is
reshaped to rows [N*C, L], every branch applies one shared set of weights to
each row, and per-channel RevIN statistics are restored at the end. Core
variants share this pipeline and differ only in which branches exist and how
they are combined:

    linear_only  y = f_lin
    kan_only     y = f_kan_trend + f_kan_resid           (no gates)
    ungated_kan  y = f_lin + f_kan_trend + f_kan_resid   (gates fixed at 1)
    gated_kan    y = f_lin + g_t * f_kan_t + g_r * f_kan_r
    gated_mlp    as gated_kan with MLP stacks in place of KAN stacks
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .rng import stream
from .splines import KanLayer, SplineGrid

__all__ = [
    "CORES",
    "ModelConfig",
    "RevinState",
    "ForwardResult",
    "GatedModel",
    "moving_average_matrix",
    "decompose",
    "patchify",
    "patch_lag_interval",
    "revin_normalize",
    "revin_denormalize",
    "adaptive_normalize",
    "windows_to_rows",
    "rows_to_windows",
    "u_kan",
    "r_kan",
    "save_model",
    "load_model",
    "ModelFormatError",
]

CORES = ("linear_only", "kan_only", "ungated_kan", "gated_kan", "gated_mlp")

MODEL_FORMAT = "gated-kan-model"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_length: int = 96
    horizon: int = 16
    channels: int = 1
    patch_len: int = 16
    stride: int = 8
    embed_dim: int = 32
    ma_kernel: int = 25
    grid_size: int = 5
    spline_order: int = 3
    hidden_dim: int = 64
    kan_depth: int = 2
    stats_dim: int = 8
    stats_hidden: int = 32
    gate_hidden: int = 64
    core: str = "gated_kan"
    revin_eps: float = 1e-5

    def __post_init__(self):
        if self.core not in CORES:
            raise ValueError(f"unknown core {self.core!r}; choose from {CORES}")
        if not 1 <= self.patch_len <= self.input_length:
            raise ValueError("patch_len must be in [1, input_length]")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if (self.input_length - self.patch_len) % self.stride != 0:
            raise ValueError(
                f"(input_length - patch_len) = {self.input_length - self.patch_len}"
                f" must be divisible by stride = {self.stride}"
            )
        if self.ma_kernel % 2 == 0:
            raise ValueError("ma_kernel must be odd")
        if self.ma_kernel > self.input_length:
            raise ValueError("ma_kernel must be <= input_length")
        if self.kan_depth < 1:
            raise ValueError("kan_depth must be >= 1")

    @property
    def n_patches(self) -> int:
        return (self.input_length - self.patch_len) // self.stride + 1

    @property
    def flat_dim(self) -> int:
        return self.n_patches * self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ModelFormatError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class RevinState:
    """Per-channel window statistics kept for denormalization."""

    mean: np.ndarray
    std: np.ndarray


# -- pipeline pieces ---------------------------------------------------------


def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """Centered moving average with replicate-padded ends, as a [L, L] map."""
    if kernel % 2 == 0:
        raise ValueError("ma_kernel must be odd")
    half = kernel // 2
    m = np.zeros((length, length), dtype=np.float64)
    for t in range(length):
        for u in range(t - half, t + half + 1):
            m[t, min(max(u, 0), length - 1)] += 1.0 / kernel
    return m


def _decompose_rows(x: Tensor, ma: Tensor) -> tuple[Tensor, Tensor]:
    # One Fast2Sum-style refinement so trend + residual reconstructs x exactly
    # on scale-compatible data.
    trend0 = ad.matmul(x, ma)
    resid = x - trend0
    trend = x - resid
    resid = x - trend
    return trend, resid


def decompose(x: np.ndarray, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a series [L] or window [L, C] into (trend, residual)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    cols = x[:, None] if squeeze else x
    ma = Tensor(moving_average_matrix(cols.shape[0], kernel))
    trend, resid = _decompose_rows(Tensor(cols.T), ma)
    t, r = trend.values.T, resid.values.T
    return (t[:, 0], r[:, 0]) if squeeze else (t, r)


def patch_matrix(length: int, patch_len: int, stride: int) -> np.ndarray:
    n_patches = (length - patch_len) // stride + 1
    m = np.zeros((length, n_patches * patch_len), dtype=np.float64)
    for p in range(n_patches):
        for u in range(patch_len):
            m[p * stride + u, p * patch_len + u] = 1.0
    return m


def patchify(x: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """Overlapping patches of a series [L] -> [n_patches, patch_len]."""
    x = np.asarray(x, dtype=np.float64)
    if (len(x) - patch_len) % stride != 0:
        raise ValueError(
            f"(len(x) - patch_len) = {len(x) - patch_len} not divisible by stride {stride}"
        )
    n_patches = (len(x) - patch_len) // stride + 1
    return np.stack([x[p * stride : p * stride + patch_len] for p in range(n_patches)])


def patch_lag_interval(patch_index: int, stride: int, patch_len: int) -> tuple[int, int]:
    """Half-open lag interval [start, end) covered by one patch."""
    return patch_index * stride, patch_index * stride + patch_len


def _revin_rows(x: Tensor, eps: float) -> tuple[Tensor, Tensor, Tensor]:
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = ad.square(centered).mean(axis=1, keepdims=True)
    std = ad.sqrt(var + eps)
    return centered / std, mu, std


def revin_normalize(x: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, RevinState]:
    """Normalize a window [L, C] per channel; returns stats for the inverse."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    cols = x[:, None] if squeeze else x
    xn, mu, std = _revin_rows(Tensor(cols.T), eps)
    state = RevinState(mean=mu.values[:, 0], std=std.values[:, 0])
    out = xn.values.T
    return (out[:, 0] if squeeze else out), state


def revin_denormalize(xn: np.ndarray, state: RevinState) -> np.ndarray:
    xn = np.asarray(xn, dtype=np.float64)
    squeeze = xn.ndim == 1
    cols = xn[:, None] if squeeze else xn
    out = cols * state.std[None, :] + state.mean[None, :]
    return out[:, 0] if squeeze else out


def windows_to_rows(x: np.ndarray) -> np.ndarray:
    """[N, L, C] -> [N*C, L] with row order (window, channel)."""
    n, length, c = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1).reshape(n * c, length))


def rows_to_windows(rows: np.ndarray, n: int, channels: int) -> np.ndarray:
    """[N*C, H] -> [N, H, C]."""
    return rows.reshape(n, channels, -1).transpose(0, 2, 1)


# -- parameter containers ------------------------------------------------------


class _Linear:
    """Bias-free linear map (patch embeddings and forecast heads)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.w = rng.uniform(-bound, bound, size=(n_in, n_out))

    def apply(self, x: Tensor, wrap) -> Tensor:
        return ad.matmul(x, wrap(self.w))


class _Dense:
    """Linear map with bias (gate / stats MLPs, MLP core)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        if zero:
            self.w = np.zeros((n_in, n_out))
        else:
            bound = 1.0 / np.sqrt(n_in)
            self.w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.b = np.zeros(n_out)

    def apply(self, x: Tensor, wrap) -> Tensor:
        return ad.matmul(x, wrap(self.w)) + wrap(self.b)


class _GateNet:
    """Two-layer MLP -> sigmoid scalar per channel row.

    The output layer starts at zero so every gate opens at exactly 0.5 and
    moves only on training signal.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.l1 = _Dense(n_in, hidden, rng)
        self.l2 = _Dense(hidden, 1, rng, zero=True)

    def apply(self, x: Tensor, wrap) -> Tensor:
        return ad.sigmoid(self.l2.apply(ad.silu(self.l1.apply(x, wrap)), wrap))


class _StatsNet:
    """Window-shape encoder -> per-row (gamma, beta); identity at init."""

    def __init__(self, n_in: int, hidden: int, stats_dim: int, rng: np.random.Generator):
        self.l1 = _Dense(n_in, hidden, rng)
        self.l2 = _Dense(hidden, stats_dim, rng)
        self.head = _Dense(stats_dim, 2, rng, zero=True)
        self.head.b = np.array([1.0, 0.0])

    def apply(self, x: Tensor, wrap) -> Tensor:
        s = self.l2.apply(ad.silu(self.l1.apply(x, wrap)), wrap)
        return self.head.apply(s, wrap)


class _LinearBranch:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embed = _Linear(cfg.patch_len, cfg.embed_dim, rng)
        self.head = _Linear(cfg.flat_dim, cfg.horizon, rng)


class _KanBranch:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embed = _Linear(cfg.patch_len, cfg.embed_dim, rng)
        grid = SplineGrid(cfg.grid_size, cfg.spline_order)
        dims = [cfg.flat_dim] + [cfg.hidden_dim] * cfg.kan_depth + [cfg.horizon]
        self.layers = [KanLayer(a, b, grid, rng) for a, b in zip(dims[:-1], dims[1:])]


class _MlpBranch:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embed = _Linear(cfg.patch_len, cfg.embed_dim, rng)
        dims = [cfg.flat_dim] + [cfg.hidden_dim] * cfg.kan_depth + [cfg.horizon]
        self.layers = [_Dense(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]


BRANCHES = ("trend", "resid")


def _uses_linear(core: str) -> bool:
    return core != "kan_only"


def _uses_kan(core: str) -> bool:
    return core in ("kan_only", "ungated_kan", "gated_kan")


def _uses_mlp(core: str) -> bool:
    return core == "gated_mlp"


def _uses_gates(core: str) -> bool:
    return core in ("gated_kan", "gated_mlp")


@dataclass
class ForwardResult:
    """Forecast plus the internals analyses need (tape-attached when taped)."""

    y: Tensor
    y_norm: Tensor
    mean: Tensor
    std: Tensor
    x_norm: Tensor
    f_lin: Tensor | None = None
    gates: dict = field(default_factory=dict)
    branch_out: dict = field(default_factory=dict)
    kan_first_in: dict = field(default_factory=dict)
    kan_first_out: dict = field(default_factory=dict)


class GatedModel:
    """Full parameter set of one core variant plus its configuration."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng if rng is not None else stream(0, "init")
        cfg = config
        self.stats = _StatsNet(cfg.input_length, cfg.stats_hidden, cfg.stats_dim, rng)
        self.gates = (
            {b: _GateNet(cfg.input_length, cfg.gate_hidden, rng) for b in BRANCHES}
            if _uses_gates(cfg.core)
            else {}
        )
        self.linear = (
            {b: _LinearBranch(cfg, rng) for b in BRANCHES} if _uses_linear(cfg.core) else {}
        )
        self.kan = {b: _KanBranch(cfg, rng) for b in BRANCHES} if _uses_kan(cfg.core) else {}
        self.mlp = {b: _MlpBranch(cfg, rng) for b in BRANCHES} if _uses_mlp(cfg.core) else {}
        self._ma = moving_average_matrix(cfg.input_length, cfg.ma_kernel)
        self._patch = patch_matrix(cfg.input_length, cfg.patch_len, cfg.stride)
        # Analysis hooks (intervention views): additive bias on the first KAN
        # layer output per branch, and a switch that silences correction branches.
        self.first_layer_bias: dict | None = None
        self.kan_disabled: bool = False

    # -- parameters ----------------------------------------------------------

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays in a fixed, documented order (shared references)."""
        out: dict[str, np.ndarray] = {}
        s = self.stats
        out["stats.l1.w"], out["stats.l1.b"] = s.l1.w, s.l1.b
        out["stats.l2.w"], out["stats.l2.b"] = s.l2.w, s.l2.b
        out["stats.head.w"], out["stats.head.b"] = s.head.w, s.head.b
        for b in BRANCHES:
            if b in self.gates:
                g = self.gates[b]
                out[f"gate.{b}.l1.w"], out[f"gate.{b}.l1.b"] = g.l1.w, g.l1.b
                out[f"gate.{b}.l2.w"], out[f"gate.{b}.l2.b"] = g.l2.w, g.l2.b
        for b in BRANCHES:
            if b in self.linear:
                lin = self.linear[b]
                out[f"linear.{b}.embed.w"] = lin.embed.w
                out[f"linear.{b}.head.w"] = lin.head.w
        for b in BRANCHES:
            if b in self.kan:
                br = self.kan[b]
                out[f"kan.{b}.embed.w"] = br.embed.w
                for i, layer in enumerate(br.layers):
                    out[f"kan.{b}.layer{i}.base_w"] = layer.base_w
                    out[f"kan.{b}.layer{i}.spline_c"] = layer.spline_c
        for b in BRANCHES:
            if b in self.mlp:
                br = self.mlp[b]
                out[f"mlp.{b}.embed.w"] = br.embed.w
                for i, layer in enumerate(br.layers):
                    out[f"mlp.{b}.layer{i}.w"] = layer.w
                    out[f"mlp.{b}.layer{i}.b"] = layer.b
        return out

    def set_parameter(self, name: str, values: np.ndarray) -> None:
        target = self.named_parameters()[name]
        if target.shape != values.shape:
            raise ModelFormatError(
                f"parameter {name}: shape {values.shape} != expected {target.shape}"
            )
        np.copyto(target, values)

    def parameter_snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_parameters().items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.set_parameter(k, v)

    def clone(self) -> "GatedModel":
        other = GatedModel(self.config, rng=stream(0, "clone-init"))
        other.load_snapshot(self.parameter_snapshot())
        if self.first_layer_bias is not None:
            other.first_layer_bias = {k: v.copy() for k, v in self.first_layer_bias.items()}
        other.kan_disabled = self.kan_disabled
        return other

    @property
    def correction_branches(self) -> dict:
        """The nonlinear correction stacks: KAN for KAN cores, MLP for gated_mlp."""
        return self.kan if self.kan else self.mlp

    # -- forward -------------------------------------------------------------

    def _binding(self, tape: Tape | None):
        named = self.named_parameters()
        if tape is None:
            tensors = {k: Tensor(v) for k, v in named.items()}
        else:
            tensors = {k: tape.parameter(v) for k, v in named.items()}
        by_id = {id(arr): tensors[k] for k, arr in named.items()}

        def wrap(arr: np.ndarray) -> Tensor:
            return by_id[id(arr)]

        return tensors, wrap

    def _embed_flat(self, comp: Tensor, embed: _Linear, wrap) -> Tensor:
        cfg = self.config
        rows = comp.shape[0]
        patches = ad.matmul(comp, Tensor(self._patch)).reshape(
            (rows * cfg.n_patches, cfg.patch_len)
        )
        return embed.apply(patches, wrap).reshape((rows, cfg.flat_dim))

    def forward_rows(
        self,
        x,
        tape: Tape | None = None,
        *,
        gate_override: dict | None = None,
        input_mask_rows: np.ndarray | None = None,
        first_layer_bias: dict | None = None,
        binding=None,
    ) -> ForwardResult:
        """Forecast channel rows [R, L] -> [R, H] with exposed internals.

        `x` may be a plain array or a (possibly watched) Tensor. Analysis
        hooks: `gate_override` maps branch -> constant gate value;
        `input_mask_rows` multiplies the normalized input elementwise;
        `first_layer_bias` adds a constant vector to the first KAN layer
        output of a branch (used by mean interventions and sensitivity checks).
        """
        cfg = self.config
        xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if xt.ndim != 2 or xt.shape[1] != cfg.input_length:
            raise ad.ShapeMismatchError(
                f"forward: expected rows [R, {cfg.input_length}], got {xt.shape}"
            )
        rows = xt.shape[0]
        if binding is None:
            _, wrap = self._binding(tape)
        else:
            wrap = binding

        xn, mu, std = _revin_rows(xt, cfg.revin_eps)
        if input_mask_rows is not None:
            xn = xn * Tensor(input_mask_rows)

        gate_override = gate_override or {}
        gates: dict[str, Tensor] = {}
        if self.gates:
            for b in BRANCHES:
                if b in gate_override and gate_override[b] is not None:
                    gates[b] = Tensor(np.full((rows, 1), float(gate_override[b])))
                else:
                    gates[b] = self.gates[b].apply(xn, wrap)

        gb = self.stats.apply(xn, wrap)
        gamma, beta = gb[:, 0:1], gb[:, 1:2]
        xa = xn * gamma + beta

        trend, resid = _decompose_rows(xa, Tensor(self._ma))
        comps = {"trend": trend, "resid": resid}

        f_lin = None
        if self.linear:
            parts = [
                self.linear[b].head.apply(
                    self._embed_flat(comps[b], self.linear[b].embed, wrap), wrap
                )
                for b in BRANCHES
            ]
            f_lin = parts[0] + parts[1]

        branch_out: dict[str, Tensor] = {}
        kan_first_in: dict[str, Tensor] = {}
        kan_first_out: dict[str, Tensor] = {}
        bias = first_layer_bias or self.first_layer_bias or {}
        if not self.kan_disabled:
            for b in BRANCHES:
                if self.kan:
                    br = self.kan[b]
                    z = self._embed_flat(comps[b], br.embed, wrap)
                    kan_first_in[b] = z
                    for li, layer in enumerate(br.layers):
                        z = layer.forward(z, wrap(layer.base_w), wrap(layer.spline_c))
                        if li == 0:
                            if b in bias:
                                z = z + Tensor(np.asarray(bias[b])[None, :])
                            kan_first_out[b] = z
                    branch_out[b] = z
                elif self.mlp:
                    br = self.mlp[b]
                    h = self._embed_flat(comps[b], br.embed, wrap)
                    for li, layer in enumerate(br.layers):
                        h = layer.apply(h, wrap)
                        if li < len(br.layers) - 1:
                            h = ad.silu(h)
                    branch_out[b] = h

        core = cfg.core
        if core == "linear_only" or (self.kan_disabled and self.linear):
            y_norm = f_lin
        elif self.kan_disabled:
            y_norm = Tensor(np.zeros((rows, cfg.horizon)))
        elif core == "kan_only":
            y_norm = branch_out["trend"] + branch_out["resid"]
        elif core == "ungated_kan":
            y_norm = f_lin + branch_out["trend"] + branch_out["resid"]
        else:  # gated_kan / gated_mlp
            y_norm = (
                f_lin
                + gates["trend"] * branch_out["trend"]
                + gates["resid"] * branch_out["resid"]
            )

        y = y_norm * std + mu
        return ForwardResult(
            y=y,
            y_norm=y_norm,
            mean=mu,
            std=std,
            x_norm=xn,
            f_lin=f_lin,
            gates=gates,
            branch_out=branch_out,
            kan_first_in=kan_first_in,
            kan_first_out=kan_first_out,
        )

    def forecast(self, window: np.ndarray, **kwargs) -> tuple[np.ndarray, ForwardResult]:
        """Forecast one window [L, C] -> [H, C], returning internals too."""
        window = np.asarray(window, dtype=np.float64)
        if window.ndim == 1:
            window = window[:, None]
        if window.shape != (self.config.input_length, self.config.channels):
            raise ad.ShapeMismatchError(
                f"forecast: expected window {(self.config.input_length, self.config.channels)},"
                f" got {window.shape}"
            )
        res = self.forward_rows(window.T, **kwargs)
        return res.y.values.T, res

    def predict_windows(self, x: np.ndarray, batch: int = 512, **kwargs) -> np.ndarray:
        """Forecast a window batch [N, L, C] -> [N, H, C] without a tape."""
        n, _, c = x.shape
        rows = windows_to_rows(x)
        outs = []
        for lo in range(0, rows.shape[0], batch * c):
            outs.append(self.forward_rows(rows[lo : lo + batch * c], **kwargs).y.values)
        return rows_to_windows(np.concatenate(outs, axis=0), n, c)


def adaptive_normalize(x_norm: np.ndarray, model: GatedModel) -> np.ndarray:
    """Apply the learned per-channel scale/shift to a RevIN-normalized window."""
    x_norm = np.asarray(x_norm, dtype=np.float64)
    squeeze = x_norm.ndim == 1
    cols = x_norm[:, None] if squeeze else x_norm
    _, wrap = model._binding(None)
    xt = Tensor(cols.T)
    gb = model.stats.apply(xt, wrap)
    out = (xt * gb[:, 0:1] + gb[:, 1:2]).values.T
    return out[:, 0] if squeeze else out


# -- gate diagnostics ----------------------------------------------------------


def _gate_rows(model: GatedModel, x: np.ndarray, batch: int, gate_override=None):
    n, _, c = x.shape
    rows = windows_to_rows(x)
    for lo in range(0, rows.shape[0], batch * c):
        yield model.forward_rows(rows[lo : lo + batch * c], gate_override=gate_override)


def u_kan(model: GatedModel, x: np.ndarray, batch: int = 512, gate_override=None) -> float:
    """Mean gate value over windows, channels, and both branches; in [0, 1]."""
    if not model.gates and not gate_override:
        raise ValueError(f"core {model.config.core!r} has no gates")
    if x.shape[0] == 0:
        raise ValueError("u_kan: empty window set")
    total, count = 0.0, 0
    for res in _gate_rows(model, x, batch, gate_override):
        for b in BRANCHES:
            total += float(res.gates[b].values.sum())
            count += res.gates[b].size
    return total / count


def r_kan(model: GatedModel, x: np.ndarray, batch: int = 512, eps: float = 1e-12) -> float:
    """Calibrated correction share: E[ ||g_t k_t + g_r k_r||_2 / ||y_norm||_2 ].

    Both numerator and denominator live in the RevIN-normalized space, so the
    ratio is scale-free per window; branches are summed before the norm.
    """
    if x.shape[0] == 0:
        raise ValueError("r_kan: empty window set")
    n, _, c = x.shape
    ratios = []
    rows = windows_to_rows(x)
    for lo in range(0, rows.shape[0], batch * c):
        res = model.forward_rows(rows[lo : lo + batch * c])
        if not res.branch_out:
            contrib = np.zeros_like(res.y_norm.values)
        else:
            g = {
                b: (res.gates[b].values if res.gates else 1.0) for b in BRANCHES
            }
            contrib = (
                g["trend"] * res.branch_out["trend"].values
                + g["resid"] * res.branch_out["resid"].values
            )
        nb = contrib.shape[0] // c
        num = np.linalg.norm(contrib.reshape(nb, -1), axis=1)
        den = np.linalg.norm(res.y_norm.values.reshape(nb, -1), axis=1)
        ratios.append(num / np.maximum(den, eps))
    return float(np.mean(np.concatenate(ratios)))


# -- serialization -------------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode()}


def _decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).copy()


def model_document(model: GatedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "tensors": {k: _encode_array(v) for k, v in model.named_parameters().items()},
    }


def save_model(model: GatedModel, path) -> None:
    """Write a self-describing, byte-stable model file (JSON, sorted keys)."""
    doc = model_document(model)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_model(path) -> GatedModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported version {doc.get('version')}")
    config = ModelConfig.from_dict(doc["config"])
    model = GatedModel(config, rng=stream(0, "load-init"))
    names = set(model.named_parameters())
    got = set(doc["tensors"])
    if names != got:
        raise ModelFormatError(
            f"{path}: tensor names mismatch; missing {sorted(names - got)},"
            f" unexpected {sorted(got - names)}"
        )
    for name, tdoc in doc["tensors"].items():
        model.set_parameter(name, _decode_array(tdoc))
    return model
