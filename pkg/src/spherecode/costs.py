"""Classifier size/compute accounting for the three output designs.

Counts are analytic (no allocation): a flat cosine classifier stores one
d-vector per identity (m*d), the sampled-softmax variant stores the same
but only touches a fraction alpha per step, and the multi-token design
stores l alphabets of v prototype columns (l*v*d) plus its projection
heads.  With the alphabet band used by ``suggest_length`` the multi-token
parameter count grows like log(m) instead of m.

FLOP counts are dense multiply-accumulates times two, per sample, for
producing classifier logits; bytes assume float32 storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import head_param_count
from .tokenizer import suggest_length

BYTES_PER_PARAM = 4  # float32 storage


@dataclass(frozen=True)
class CostProfile:
    """Size/compute footprint of one classifier configuration."""

    method: str  # formatted tag: fc | subset(a) | gif(l=..;v=..)
    m: int
    d: int
    params: int              # stored classifier parameters
    flops: int               # per-sample logit FLOPs
    bytes: int               # classifier storage, float32
    head_params: int = 0     # projection heads (multi-token only)
    active_params: int = 0   # parameters touched per step (subset only)


def head_flops(d: int, hidden_layers: int = 2) -> int:
    """Per-sample FLOPs of one projection head (dense MACs x 2)."""
    return (hidden_layers + 1) * 2 * d * d


def fc_profile(m: int, d: int) -> CostProfile:
    _check_m_d(m, d)
    params = m * d
    return CostProfile(
        method="fc", m=m, d=d,
        params=params, flops=2 * m * d, bytes=params * BYTES_PER_PARAM,
    )


def subset_profile(m: int, d: int, alpha: float) -> CostProfile:
    _check_m_d(m, d)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    params = m * d
    active = math.ceil(alpha * m) * d
    return CostProfile(
        method=f"subset({alpha:.2f})", m=m, d=d,
        params=params, flops=2 * active, bytes=params * BYTES_PER_PARAM,
        active_params=active,
    )


def gif_profile(
    m: int, d: int, l: int, v: int, hidden_layers: int = 2
) -> CostProfile:
    """Multi-token classifier cost; requires v ** l >= m."""
    _check_m_d(m, d)
    if l < 1 or v < 2:
        raise ValueError(f"bad code shape: l={l}, v={v}")
    if v**l < m:
        raise ValueError(
            f"code space too small: v={v}, l={l} gives {v ** l} codes "
            f"for m={m} identities"
        )
    params = l * v * d
    heads = l * head_param_count(d, hidden_layers)
    return CostProfile(
        # semicolon, not comma: the tag is written into CSV fields
        method=f"gif(l={l};v={v})", m=m, d=d,
        params=params,
        flops=l * 2 * v * d + l * head_flops(d, hidden_layers),
        bytes=params * BYTES_PER_PARAM,
        head_params=heads,
    )


def _check_m_d(m: int, d: int) -> None:
    if m < 1 or d < 1:
        raise ValueError(f"need m >= 1 and d >= 1, got m={m}, d={d}")


def scaling_table(
    ms, d: int, alpha: float = 0.1, hidden_layers: int = 2
) -> list[CostProfile]:
    """Cost rows for every m and method; code shapes via suggest_length."""
    rows: list[CostProfile] = []
    for m in ms:
        shape = suggest_length(m)
        rows.append(fc_profile(m, d))
        rows.append(subset_profile(m, d, alpha))
        rows.append(gif_profile(m, d, shape.l, shape.v, hidden_layers))
    return rows


def cost_csv_lines(rows, config_hash: str = "") -> list[str]:
    """CSV rendering of cost rows: ``m,method,params,flops,bytes``."""
    lines = []
    if config_hash:
        lines.append(f"# config={config_hash}")
    lines.append("m,method,params,flops,bytes")
    for r in rows:
        lines.append(f"{r.m},{r.method},{r.params},{r.flops},{r.bytes}")
    return lines


def write_cost_csv(path, rows, config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(cost_csv_lines(rows, config_hash)) + "\n")
