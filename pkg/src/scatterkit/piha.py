"""Physics-inspired hybrid attention block.

Two branches read the same feature map ``F`` of shape (N, C, H, W):

* data-driven SE: ``D_out = F * sigmoid(W1 relu(W0 gap(F)))``
* physics-driven PASE: component maps gate K contiguous channel groups
  (PAM), a shared selective-SE scores each group (SSE over SAP), and a
  softmax across groups at each channel index couples the groups (PIR).

The block returns ``D_out + P_out``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .tensor import ops
from .tensor.core import Tensor
from .tensor.gradcheck import register

DEFAULT_SAP_THRESHOLD = 0.05


@dataclass(frozen=True)
class PihaConfig:
    channels: int
    groups: int = 4
    reduction: int = 16
    sse_reduction: int = 4
    sap_threshold: float = DEFAULT_SAP_THRESHOLD
    pam_kernel: int = 3
    pir_enabled: bool = True
    fixed_pase_scale: float | None = None
    se_enabled: bool = True
    pase_enabled: bool = True

    def __post_init__(self):
        if self.groups < 1 or self.channels % self.groups:
            raise ValueError(f"channels={self.channels} not divisible by groups={self.groups}")
        if self.channels // self.reduction < 1:
            raise ValueError("SE bottleneck C/r must be >= 1")
        if self.group_channels // self.sse_reduction < 1:
            raise ValueError("SSE bottleneck (C/K)/r must be >= 1")
        if not math.isfinite(self.sap_threshold) and self.sap_threshold != -math.inf:
            raise ValueError("sap_threshold must be finite (or -inf)")
        if self.pam_kernel % 2 != 1:
            raise ValueError("pam_kernel must be odd to preserve H x W")
        if self.pir_enabled == (self.fixed_pase_scale is not None):
            raise ValueError("exactly one of pir_enabled / fixed_pase_scale must be active")

    @property
    def group_channels(self) -> int:
        return self.channels // self.groups

    @property
    def se_hidden(self) -> int:
        return self.channels // self.reduction

    @property
    def sse_hidden(self) -> int:
        return self.group_channels // self.sse_reduction


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class PihaState:
    se_w0: Tensor
    se_w1: Tensor
    sse_w0: Tensor
    sse_w1: Tensor
    pam_w: Tensor
    pam_b: Tensor

    @classmethod
    def init(cls, cfg: PihaConfig, rng: np.random.Generator, dtype=np.float32) -> "PihaState":
        c, ck, k = cfg.channels, cfg.group_channels, cfg.pam_kernel
        arrays = dict(
            se_w0=_kaiming_uniform(rng, (cfg.se_hidden, c), c, dtype),
            se_w1=_kaiming_uniform(rng, (c, cfg.se_hidden), cfg.se_hidden, dtype),
            sse_w0=_kaiming_uniform(rng, (cfg.sse_hidden, ck), ck, dtype),
            sse_w1=_kaiming_uniform(rng, (ck, cfg.sse_hidden), cfg.sse_hidden, dtype),
            pam_w=_kaiming_uniform(rng, (c, 1, k, k), k * k, dtype),
            pam_b=np.zeros(c, dtype=dtype),
        )
        return cls(**{n: Tensor(a, requires_grad=True) for n, a in arrays.items()})

    @classmethod
    def zeros(cls, cfg: PihaConfig, dtype=np.float64) -> "PihaState":
        st = cls.init(cfg, np.random.default_rng(0), dtype)
        for t in st.parameters().values():
            t.data[...] = 0
        return st

    def parameters(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def check(self, cfg: PihaConfig):
        c, ck, k = cfg.channels, cfg.group_channels, cfg.pam_kernel
        expect = dict(se_w0=(cfg.se_hidden, c), se_w1=(c, cfg.se_hidden),
                      sse_w0=(cfg.sse_hidden, ck), sse_w1=(ck, cfg.sse_hidden),
                      pam_w=(c, 1, k, k), pam_b=(c,))
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"PIHA state {name} has shape {got}, expected {shape}")


# ---------------------------------------------------------------- branches

def se_attention(F: Tensor, state: PihaState, trace: dict | None = None) -> Tensor:
    hidden = ops.dense(ops.gap(F), state.se_w0)
    if trace is not None:
        trace["se_hidden_pre"] = hidden.data
    return ops.sigmoid(ops.dense(ops.relu(hidden), state.se_w1))


def _channel_scale(F: Tensor, attn: Tensor) -> Tensor:
    n, c = attn.shape
    return ops.mul(F, ops.reshape(attn, (n, c, 1, 1)))


def se_forward(F: Tensor, state: PihaState, trace: dict | None = None) -> Tensor:
    attn = se_attention(F, state, trace)
    if trace is not None:
        trace["D_attn"] = attn.data
    return _channel_scale(F, attn)


def pam_forward(F: Tensor, components, state: PihaState, cfg: PihaConfig) -> list[Tensor]:
    """``P_k = Conv_k(M_k) * F_k`` for the K contiguous channel blocks of ``F``.

    ``components`` is (N, K, H, W), already resampled to the feature size.
    """
    M = components if isinstance(components, Tensor) else Tensor(np.asarray(components, dtype=F.dtype))
    if M.ndim != 4 or M.shape[1] != cfg.groups:
        raise ValueError(f"expected {cfg.groups} component maps, got shape {M.shape}")
    if M.shape[0] != F.shape[0] or M.shape[2:] != F.shape[2:]:
        raise ValueError(f"component maps {M.shape} do not match features {F.shape}")
    m_bar = ops.conv2d(M, state.pam_w, state.pam_b, groups=cfg.groups, pad=cfg.pam_kernel // 2)
    return ops.split(ops.mul(m_bar, F), cfg.groups, axis=1)


def sap(P_k: Tensor, rho: float) -> Tensor:
    return ops.sap(P_k, rho)


def sse_forward(P: list[Tensor], state: PihaState, rho: float,
                trace: dict | None = None) -> list[Tensor]:
    out = []
    pre = []
    for p in P:
        hidden = ops.dense(sap(p, rho), state.sse_w0)
        pre.append(hidden.data)
        out.append(ops.sigmoid(ops.dense(ops.relu(hidden), state.sse_w1)))
    if trace is not None:
        trace["sse_hidden_pre"] = np.stack(pre, axis=1)
    return out


def pir(p_attn: list[Tensor]) -> list[Tensor]:
    """Softmax across the K groups at every channel index."""
    k = len(p_attn)
    if k < 1:
        raise ValueError("pir needs at least one group")
    stacked = ops.softmax(ops.stack(p_attn, axis=1), axis=1)
    return [ops.take(stacked, i, i + 1, axis=1) for i in range(k)]


def pase_forward(F: Tensor, components, state: PihaState, cfg: PihaConfig,
                 trace: dict | None = None) -> Tensor:
    P = pam_forward(F, components, state, cfg)
    if trace is not None:
        trace["P"] = np.concatenate([p.data for p in P], axis=1)
    p_attn = sse_forward(P, state, cfg.sap_threshold, trace)
    if cfg.pir_enabled:
        weights = [ops.reshape(a, a.shape[:1] + a.shape[2:]) for a in pir(p_attn)]
    else:
        weights = [ops.mul(a, cfg.fixed_pase_scale) for a in p_attn]
    if trace is not None:
        trace["P_att"] = np.stack([w.data for w in weights], axis=1)
    return ops.concat([_channel_scale(p, w) for p, w in zip(P, weights)], axis=1)


def piha_forward(F: Tensor, components, state: PihaState, cfg: PihaConfig,
                 trace: dict | None = None) -> Tensor:
    if F.ndim != 4 or F.shape[1] != cfg.channels:
        raise ValueError(f"PIHA configured for {cfg.channels} channels, got input {F.shape}")
    d_out = se_forward(F, state, trace) if cfg.se_enabled else F
    if not cfg.pase_enabled:
        return d_out
    return ops.add(d_out, pase_forward(F, components, state, cfg, trace))


class PihaBlock:
    def __init__(self, cfg: PihaConfig, state: PihaState):
        state.check(cfg)
        self.cfg = cfg
        self.state = state

    def __call__(self, F: Tensor, components, trace: dict | None = None) -> Tensor:
        return piha_forward(F, components, self.state, self.cfg, trace)

    def parameters(self) -> dict[str, Tensor]:
        return self.state.parameters()


# ---------------------------------------------------------------- helpers

def resample_bilinear(maps: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize over the last two axes with half-pixel centers and edge clamping."""
    maps = np.asarray(maps)
    h0, w0 = maps.shape[-2:]
    if (h0, w0) == (height, width):
        return maps.copy()

    def axis(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo).astype(maps.dtype)

    r0, r1, fr = axis(height, h0)
    c0, c1, fc = axis(width, w0)
    top = maps[..., r0, :] * (1 - fr)[:, None] + maps[..., r1, :] * fr[:, None]
    return top[..., c0] * (1 - fc) + top[..., c1] * fc


ATTN_CSV_HEADER = ("sample_id", "azimuth_deg", "branch", "group", "channel", "weight")


def attention_rows(sample_ids, azimuths, trace: dict, cfg: PihaConfig) -> Iterable[tuple]:
    """CSV rows for one traced batch: SE weights (group -1) then PASE weights."""
    d_attn = trace.get("D_attn")
    p_att = trace.get("P_att")
    for n, (sid, az) in enumerate(zip(sample_ids, azimuths)):
        if d_attn is not None:
            for c in range(d_attn.shape[1]):
                yield (sid, f"{az:.3f}", "SE", -1, c, f"{float(d_attn[n, c]):.9g}")
        if p_att is not None:
            for g in range(p_att.shape[1]):
                for i in range(p_att.shape[2]):
                    yield (sid, f"{az:.3f}", "PASE", g, g * cfg.group_channels + i,
                           f"{float(p_att[n, g, i]):.9g}")


def write_attention_csv(path, rows: Iterable[tuple]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTN_CSV_HEADER)
        w.writerows(rows)


# ---------------------------------------------------------------- gradcheck

def _kink_distance(trace: dict, rho: float) -> float:
    d = np.abs(trace["P"] - rho).min()
    for key in ("se_hidden_pre", "sse_hidden_pre"):
        if key in trace:
            d = min(d, np.abs(trace[key]).min())
    return float(d)


def gradcheck_instance(rng: np.random.Generator, dtype, channels=16, groups=4, size=8,
                       batch=1, margin=2e-4, **cfg_kw):
    """Random PIHA instance whose SAP thresholds and ReLU kinks sit at least
    ``margin`` away from every evaluated value (finite differences stay on one
    smooth piece)."""
    cfg = PihaConfig(channels, groups, **cfg_kw)
    while True:
        state = PihaState.init(cfg, rng, np.float64)
        F = rng.standard_normal((batch, channels, size, size))
        M = rng.uniform(0, 1, (batch, groups, size, size))
        trace = {}
        piha_forward(Tensor(F), M, state, cfg, trace)
        if _kink_distance(trace, cfg.sap_threshold) > margin:
            break
    names = list(state.parameters())
    arrays = [F.astype(dtype)] + [state.parameters()[n].data.astype(dtype) for n in names]

    def fn(F_t, *params):
        st = PihaState(**dict(zip(names, params)))
        return piha_forward(F_t, M.astype(F_t.dtype), st, cfg)

    return fn, arrays


@register("piha")
def _b_piha(rng, dt):
    return gradcheck_instance(rng, dt)


__all__ = ["ATTN_CSV_HEADER", "PihaBlock", "PihaConfig", "PihaState", "attention_rows",
           "gradcheck_instance", "pam_forward", "pase_forward", "piha_forward", "pir",
           "resample_bilinear", "sap", "se_attention", "se_forward", "sse_forward",
           "write_attention_csv"]
