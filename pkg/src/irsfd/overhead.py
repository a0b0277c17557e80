"""CSI signaling-overhead accounting for the two update protocols.

Single-timescale operation re-estimates every channel (direct and
IRS-related) in every slot of a coherence block; mixed-timescale operation
estimates only the low-dimensional effective channels per slot plus a
fixed number of full-CSI samples per block. Exact integer arithmetic
throughout (Python ints do not overflow).
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class OverheadParams:
    """Quantities entering the signaling-bit counts.

    q: bits per quantized CSI element; T_s: slots per coherence block;
    A_s: full-CSI samples collected per block; N_U / N_D: AP receive and
    transmit antenna counts; M_U / M_D: per-user antenna counts; T may be
    zero (no reflecting surface).
    """

    q: int
    T_s: int
    A_s: int
    K: int
    L: int
    N_U: int
    N_D: int
    M_U: int
    M_D: int
    T: int

    def __post_init__(self) -> None:
        positive = (self.q, self.T_s, self.A_s, self.K, self.L,
                    self.N_U, self.N_D, self.M_U, self.M_D)
        if any(v < 1 for v in positive):
            raise ValueError("all overhead parameters except T must be >= 1")
        if self.T < 0:
            raise ValueError("T must be non-negative")


def csi_overhead(p: OverheadParams) -> tuple[int, int]:
    """(single-timescale bits, mixed-timescale bits) per coherence block.

    Q_s = q T_s (N_U K M_U + N_D L M_D + K L M_U M_D
                 + T (N_U + N_D + 2 K M_U + 2 L M_D - 3))
    Q_m = q T_s (N_U K M_U + N_D L M_D + K L M_U M_D)
          + q A_s T (N_U + N_D + 2 K M_U + 2 L M_D - 3)
    """
    direct = p.N_U * p.K * p.M_U + p.N_D * p.L * p.M_D + p.K * p.L * p.M_U * p.M_D
    irs = p.N_U + p.N_D + 2 * p.K * p.M_U + 2 * p.L * p.M_D - 3
    q_s = p.q * p.T_s * (direct + p.T * irs)
    q_m = p.q * p.T_s * direct + p.q * p.A_s * p.T * irs
    return q_s, q_m
