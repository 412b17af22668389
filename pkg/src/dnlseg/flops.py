"""Closed-form multiply-add accounting for the model.

Conv blocks cost H_out*W_out*C_out*C_in*kh*kw MACs. The attention core at
N = (H/16)*(W/16) positions costs N^2*(2C'+C); the class-map product adds
N^2*C_n, the window similarities N*k^2*(C'+1). Memory reports the N x N
attention maps at element width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

from .errors import ConfigError
from .network import NetConfig


@dataclass
class FlopReport:
    blocks: List[Tuple[str, int]]
    attention_core_macs: int
    module_added_macs: int
    memory_bytes: dict
    input_shape: Tuple[int, int]

    @property
    def total_macs(self) -> int:
        return sum(m for _, m in self.blocks)

    def table(self) -> str:
        width = max(len(n) for n, _ in self.blocks) + 2
        lines = [f"{'block'.ljust(width)}{'MACs':>16}"]
        for name, macs in self.blocks:
            lines.append(f"{name.ljust(width)}{macs:>16,}")
        lines.append(f"{'total'.ljust(width)}{self.total_macs:>16,}")
        lines.append("")
        lines.append(f"module-added MACs:  {self.module_added_macs:,}")
        lines.append(f"module-added FLOPs: {2 * self.module_added_macs:,} (2 per MAC)")
        for key, val in self.memory_bytes.items():
            lines.append(f"memory {key}: {val:,} bytes")
        return "\n".join(lines)

    def keyvals(self) -> str:
        lines = [f"macs.{name} = {macs}" for name, macs in self.blocks]
        lines.append(f"macs.total = {self.total_macs}")
        lines.append(f"macs.attention_core = {self.attention_core_macs}")
        lines.append(f"macs.module_added = {self.module_added_macs}")
        for key, val in self.memory_bytes.items():
            lines.append(f"memory.{key} = {val}")
        return "\n".join(lines)


def _conv_macs(cout, cin, k, hout, wout):
    return cout * cin * k * k * hout * wout


def count_flops(cfg: NetConfig, input_shape: Tuple[int, int]) -> FlopReport:
    h, w = input_shape
    if h % 16 != 0 or w % 16 != 0:
        raise ConfigError(f"input {h}x{w} must be divisible by 16")
    w1, w2, w3, w4 = cfg.stem_widths
    c, cp, cn, k = cfg.channels, cfg.reduced_channels, cfg.num_classes, cfg.window
    h2, w2_ = h // 2, w // 2
    h4, w4_ = h // 4, w // 4
    h8, w8 = h // 8, w // 8
    h16, w16 = h // 16, w // 16
    n = h16 * w16
    elem = 8 if cfg.dtype == "f64" else 4

    blocks: List[Tuple[str, int]] = [
        ("stem.1", _conv_macs(w1, cfg.image_channels, 3, h2, w2_)),
        ("stem.2", _conv_macs(w2, w1, 3, h4, w4_)),
        ("stem.3", _conv_macs(w3, w2, 3, h8, w8)),
        ("stem.4", _conv_macs(w4, w3, 3, h8, w8)),
        ("red.reduce", _conv_macs(c, w4, 1, h8, w8)),
        ("red.block", _conv_macs(c, c, 3, h16, w16) * 2 + _conv_macs(c, c, 1, h16, w16)),
        ("att.qkv", 2 * _conv_macs(cp, c, 1, h16, w16) + _conv_macs(c, c, 1, h16, w16)),
        ("att.coarse", _conv_macs(cn, c, 1, h16, w16)),
        ("att.core", n * n * (2 * cp + c)),
        ("att.gr", n * n * cn),
        ("att.lr", n * k * k * (cp + 1)),
        ("gctx", cfg.gctx_channels * w4),
        ("head.conv", _conv_macs(cfg.head_channels, w4 + c + cfg.gctx_channels, 3, h8, w8)),
        ("head.out", _conv_macs(cn, cfg.head_channels, 1, h8, w8)),
        ("aux2", _conv_macs(cn, w2, 1, h4, w4_)),
        ("aux3", _conv_macs(cn, w3, 1, h8, w8)),
    ]
    core = dict(blocks)["att.core"]
    module_added = sum(
        m for name, m in blocks
        if name in ("att.qkv", "att.coarse", "att.core", "att.gr", "att.lr")
    )
    n_maps = 3 + (1 if cfg.use_gr else 0)  # A, A', A'' and P_class when present
    memory = {
        "attention_map": n * n * elem,
        "attention_maps_total": n_maps * n * n * elem,
        "window_similarities": n * k * k * elem,
    }
    return FlopReport(
        blocks=blocks,
        attention_core_macs=core,
        module_added_macs=module_added,
        memory_bytes=memory,
        input_shape=(h, w),
    )
