"""Exact data-rate propagation and output-validity predicates.

Rates are `fractions.Fraction` end to end: a layer fed d_in-channel pixels at
r_in valid features per cycle produces

    r_out = d_out * r_in / (d_in * s^2)

valid features per cycle, for every layer kind.  Rates are only rounded in
human-readable reports; 4/9 and 5/288 must compose without drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .netspec import LayerKind, LayerSpec, NetworkSpec

Rate = Fraction


class Flow(Enum):
    CONTINUOUS = "continuous"
    RESTORED_BY_INTERLEAVING = "restored"
    STALLED = "stalled"


@dataclass(frozen=True)
class LayerRateInfo:
    r_in: Rate
    r_out: Rate
    flow: Flow
    utilization: Fraction


def output_rate(d_in: int, d_out: int, r_in: Rate, s: int) -> Rate:
    """Valid output features per cycle for any layer kind."""
    if d_in <= 0 or d_out <= 0 or s <= 0 or r_in <= 0:
        raise ValueError("rate arguments must be positive")
    return Fraction(d_out) * r_in / (d_in * s * s)


def output_valid(n: int, f: int, k: int, s: int, p: int) -> bool:
    """Whether the sliding window anchored at position n yields an output.

    n = r*f + c indexes the (implicitly padded) stream; the window is valid
    when both r and c lie in {0, s, 2s, ..., f - k + 2p}.
    """
    if not 0 <= n < f * f:
        raise ValueError(f"position {n} outside feature map of side {f}")
    r, c = divmod(n, f)
    hi = f - k + 2 * p
    return r <= hi and c <= hi and r % s == 0 and c % s == 0


def valid_output_positions(f: int, k: int, s: int, p: int) -> list[int]:
    return [n for n in range(f * f) if output_valid(n, f, k, s, p)]


def valid_output_count(f: int, k: int, s: int, p: int) -> int:
    """((f - k + 2p) // s + 1)^2, the output grid size squared."""
    side = (f - k + 2 * p) // s + 1
    return side * side


def pad_select(c: int, i: int, f: int, k: int, p: int) -> int:
    """Gate bit for multiplier column i while the input pixel at column c
    streams in; 0 masks the column to realise implicit zero padding."""
    if c >= f - p + i:
        return 0
    if c < p - k + i + 1:
        return 0
    return 1


def pad_tuple(c: int, f: int, k: int, p: int) -> tuple[int, ...]:
    return tuple(pad_select(c, i, f, k, p) for i in range(k))


def _conv_configs(d_in: int, d_out: int, r_in: Rate) -> int:
    return min(math.ceil(Fraction(d_in) / r_in), d_in * d_out)


def _dw_configs(d_in: int, r_in: Rate) -> int:
    return min(math.ceil(Fraction(d_in) / r_in), d_in)


def classify_flow(layer: LayerSpec, r_in: Rate) -> LayerRateInfo:
    """Continuous / restored-by-interleaving / stalled, plus utilization.

    A layer stalls when its configuration count hits the min() cap, i.e.
    interleaving can no longer hide the idle cycles; utilization is
    min(1, r_in * C / d_in).  FCU-based layers (fully connected, pointwise)
    absorb slow input by construction and never stall.
    """
    r_out = output_rate(layer.d_in, layer.d_out, r_in, layer.s)
    if layer.kind in (LayerKind.FC, LayerKind.PW_CONV, LayerKind.RESIDUAL_ADD):
        return LayerRateInfo(r_in, r_out, Flow.CONTINUOUS, Fraction(1))

    if layer.kind == LayerKind.CONV:
        c = _conv_configs(layer.d_in, layer.d_out, r_in)
    elif layer.kind == LayerKind.DW_CONV:
        c = _dw_configs(layer.d_in, r_in)
    elif layer.kind == LayerKind.MAXPOOL:
        c = -(-layer.d_in // math.ceil(r_in))
    else:
        raise ValueError(f"cannot classify kind {layer.kind}")

    util = min(Fraction(1), r_in * c / layer.d_in)
    if util < 1:
        flow = Flow.STALLED
    elif c > 1:
        flow = Flow.RESTORED_BY_INTERLEAVING
    else:
        flow = Flow.CONTINUOUS
    return LayerRateInfo(r_in, r_out, flow, util)


def propagate_rates(spec: NetworkSpec) -> list[LayerRateInfo]:
    """Chain rates from the input through every layer.

    The first layer sees the input rate (defaulting to d_0, one pixel per
    cycle); a residual merge runs at the lower of its two source rates.
    """
    infos: list[LayerRateInfo] = []
    r = spec.input_rate
    for layer in spec.layers:
        if layer.kind == LayerKind.RESIDUAL_ADD:
            r = min(r, infos[layer.residual_source].r_out)
        info = classify_flow(layer, r)
        infos.append(info)
        r = info.r_out
    return infos
