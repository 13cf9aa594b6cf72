"""Analytical FLOP model for one linear layer's backward pass.

A matrix product of (m x k) by (k x n) counts ``2*m*k*n`` FLOPs.  The WHT
projections are addition-only and are charged one FLOP per selected base per
token per channel, at the unpadded token count L.

=================== ==================
Vanilla BP          4 * Cx * Cy * L
Projection          (Cx + Cy) * L * r
Low-rank MM         4 * Cx * Cy * r
Reverse projection  Cx * L * r
=================== ==================
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class FlopReport:
    vanilla_bp: int
    projection: int
    lowrank_mm: int
    reverse_projection: int

    @property
    def total_lbp(self):
        return self.projection + self.lowrank_mm + self.reverse_projection

    @property
    def overhead(self):
        return self.projection + self.reverse_projection

    @property
    def speedup(self):
        return self.vanilla_bp / self.total_lbp

    def to_dict(self):
        return {
            "vanilla_bp": self.vanilla_bp,
            "projection": self.projection,
            "lowrank_mm": self.lowrank_mm,
            "reverse_projection": self.reverse_projection,
            "total_lbp": self.total_lbp,
            "overhead": self.overhead,
            "speedup": self.speedup,
        }


def _positive(**dims):
    for name, value in dims.items():
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value}")


def flops_table1(c_x, c_y, length, rank):
    """Per-phase backward FLOPs of exact BP and LBP-WHT for one sample."""
    _positive(c_x=c_x, c_y=c_y, length=length, rank=rank)
    return FlopReport(
        vanilla_bp=4 * c_x * c_y * length,
        projection=(c_x + c_y) * length * rank,
        lowrank_mm=4 * c_x * c_y * rank,
        reverse_projection=c_x * length * rank,
    )


def flops_exact(c_x, c_y, length):
    _positive(c_x=c_x, c_y=c_y, length=length)
    return 4 * c_x * c_y * length


def flops_lora(c_x, c_y, length, rank):
    """Backward FLOPs of a LoRA-adapted layer with a frozen base weight.

    g_x still flows through the full weight; the branch adds
    ``u = g_y @ w_B.T``, ``u @ w_A.T``, ``v = x @ w_A``, ``x.T @ u`` and ``v.T @ g_y``.
    """
    _positive(c_x=c_x, c_y=c_y, length=length, rank=rank)
    g_x_main = 2 * c_x * c_y * length
    branch_gx = 2 * length * rank * c_y + 2 * length * rank * c_x
    branch_gw = 2 * length * c_x * rank + 2 * c_x * length * rank + 2 * rank * length * c_y
    return g_x_main + branch_gx + branch_gw
