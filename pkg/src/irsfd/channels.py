"""Channel generation and CSI models.

Covers the full-CSI sampler (large-scale path loss + Rician small-scale
fading over the cell geometry), the residual self-interference channel,
effective-channel composition for a given reflection phase vector, and the
CSI imperfection models: phase quantization, estimation error, delay.

All sampling is driven by an explicit numpy Generator, so every operation
is pure and reproducible; concurrent callers should each own a Generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import j0

from .scenario import ScenarioConfig


@dataclass
class FullCsi:
    """One realization of every channel matrix in the cell.

    H_U[k]: UL user k -> AP (Nr x M_U,k).  H_D[l]: AP -> DL user l (M_D,l x Nt).
    G_U[k]: UL user k -> IRS (T x M_U,k).  G_D[l]: IRS -> DL user l (M_D,l x T).
    V_U: IRS -> AP (Nr x T).               V_D: AP -> IRS (T x Nt).
    J[k][l]: UL user k -> DL user l (M_D,l x M_U,k).
    H_tilde: residual self-interference at the AP (Nr x Nt).
    """

    H_U: list[np.ndarray]
    H_D: list[np.ndarray]
    G_U: list[np.ndarray]
    G_D: list[np.ndarray]
    V_U: np.ndarray
    V_D: np.ndarray
    J: list[list[np.ndarray]]
    H_tilde: np.ndarray

    def matrices(self):
        """Yield (name, matrix) pairs in a stable order."""
        for k, h in enumerate(self.H_U):
            yield f"H_U[{k}]", h
        for l, h in enumerate(self.H_D):
            yield f"H_D[{l}]", h
        for k, g in enumerate(self.G_U):
            yield f"G_U[{k}]", g
        for l, g in enumerate(self.G_D):
            yield f"G_D[{l}]", g
        yield "V_U", self.V_U
        yield "V_D", self.V_D
        for k in range(len(self.J)):
            for l in range(len(self.J[k])):
                yield f"J[{k}][{l}]", self.J[k][l]
        yield "H_tilde", self.H_tilde

    def map(self, fn) -> "FullCsi":
        """Apply fn independently to every channel matrix."""
        return FullCsi(
            H_U=[fn(h) for h in self.H_U],
            H_D=[fn(h) for h in self.H_D],
            G_U=[fn(g) for g in self.G_U],
            G_D=[fn(g) for g in self.G_D],
            V_U=fn(self.V_U),
            V_D=fn(self.V_D),
            J=[[fn(j) for j in row] for row in self.J],
            H_tilde=fn(self.H_tilde),
        )

    def zip_map(self, other: "FullCsi", fn) -> "FullCsi":
        """Combine two realizations matrix-by-matrix."""
        return FullCsi(
            H_U=[fn(a, b) for a, b in zip(self.H_U, other.H_U)],
            H_D=[fn(a, b) for a, b in zip(self.H_D, other.H_D)],
            G_U=[fn(a, b) for a, b in zip(self.G_U, other.G_U)],
            G_D=[fn(a, b) for a, b in zip(self.G_D, other.G_D)],
            V_U=fn(self.V_U, other.V_U),
            V_D=fn(self.V_D, other.V_D),
            J=[[fn(a, b) for a, b in zip(ra, rb)] for ra, rb in zip(self.J, other.J)],
            H_tilde=fn(self.H_tilde, other.H_tilde),
        )


@dataclass
class EffectiveCsi:
    """Low-dimensional composed channels for a fixed reflection vector."""

    Hbar_U: list[np.ndarray]
    Hbar_D: list[np.ndarray]
    Jbar: list[list[np.ndarray]]
    H_tilde: np.ndarray


# ---------------------------------------------------------------------------
# Large-scale / small-scale fading primitives
# ---------------------------------------------------------------------------

def path_loss(d: float, C0: float, D0: float, a: float) -> float:
    """Distance-dependent path gain C0 * (d / D0)^-a (linear)."""
    if d <= 0 or D0 <= 0 or C0 <= 0:
        raise ValueError("d, D0 and C0 must be strictly positive")
    return C0 * (d / D0) ** (-a)


def complex_gaussian(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. circular complex Gaussian entries with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def rician_channel(H_los: np.ndarray, b: float, rng: np.random.Generator) -> np.ndarray:
    """Rician mix of a deterministic LoS matrix and unit-variance scatter.

    b is the linear Rician factor; b = 0 gives pure Rayleigh fading and
    b -> inf recovers the LoS matrix.
    """
    if b < 0:
        raise ValueError("Rician factor must be non-negative")
    H_los = np.asarray(H_los)
    if not np.all(np.isfinite(H_los)):
        raise ValueError("LoS component must be finite")
    nlos = complex_gaussian(H_los.shape, rng)
    return math.sqrt(b / (1.0 + b)) * H_los + math.sqrt(1.0 / (1.0 + b)) * nlos


def si_channel(Nr: int, Nt: int, sigma_si: float, rng: np.random.Generator) -> np.ndarray:
    """Residual self-interference channel: i.i.d. CN(0, sigma_si) entries.

    Only the average loop power is modelled; cancellation internals are
    abstracted away behind sigma_si.
    """
    if Nr < 1 or Nt < 1:
        raise ValueError("invalid self-interference channel size")
    if sigma_si < 0:
        raise ValueError("sigma_si must be non-negative")
    return math.sqrt(sigma_si) * complex_gaussian((Nr, Nt), rng)


# ---------------------------------------------------------------------------
# Array responses; half-wavelength ULA at AP/users, half-wavelength UPA at IRS
# ---------------------------------------------------------------------------

def ula_response(n: int, direction: np.ndarray) -> np.ndarray:
    """Response of an n-element ULA laid along the x axis."""
    return np.exp(1j * np.pi * np.arange(n) * direction[0])


def upa_grid(T: int) -> tuple[int, int]:
    """Rows x cols factorization of T closest to square (rows <= cols)."""
    rows = int(math.isqrt(T))
    while T % rows:
        rows -= 1
    return rows, T // rows


def upa_response(T: int, direction: np.ndarray) -> np.ndarray:
    """Response of a T-element UPA in the x-z plane."""
    rows, cols = upa_grid(T)
    px = np.exp(1j * np.pi * np.arange(cols) * direction[0])
    pz = np.exp(1j * np.pi * np.arange(rows) * direction[2])
    return np.kron(pz, px)


def _los_matrix(rx_resp: np.ndarray, tx_resp: np.ndarray) -> np.ndarray:
    """Rank-one LoS matrix with unit-modulus entries."""
    return np.outer(rx_resp, tx_resp.conj())


def _direction(frm: np.ndarray, to: np.ndarray) -> tuple[np.ndarray, float]:
    d = np.asarray(to, float) - np.asarray(frm, float)
    dist = float(np.linalg.norm(d))
    if dist <= 0.0:
        raise ValueError("coincident nodes in scenario geometry")
    return d / dist, dist


def sample_full_csi(scen: ScenarioConfig, rng: np.random.Generator) -> FullCsi:
    """Draw one full-CSI realization for the scenario geometry.

    Each link combines its distance-dependent path gain with Rician fading
    whose LoS part is the outer product of the endpoint array responses.
    Matrices are drawn in a fixed order, so equal seeds give bitwise-equal
    realizations.
    """
    ap = np.asarray(scen.pos_ap, float)
    irs = np.asarray(scen.pos_irs, float)

    def link(rx_pos, tx_pos, rx_resp_fn, tx_resp_fn, a_exp, b_ric):
        u, dist = _direction(tx_pos, rx_pos)
        gain = path_loss(dist, scen.C0, scen.D0, a_exp)
        los = _los_matrix(rx_resp_fn(u), tx_resp_fn(u))
        return math.sqrt(gain) * rician_channel(los, b_ric, rng)

    ap_ula = lambda u: ula_response(scen.Nr, u)
    ap_tx_ula = lambda u: ula_response(scen.Nt, u)
    irs_upa = lambda u: upa_response(scen.T, u)

    H_U = [link(ap, np.asarray(scen.pos_ul[k]), ap_ula,
                lambda u, k=k: ula_response(scen.M_U[k], u), scen.a_au, scen.b_au)
           for k in range(scen.K)]
    H_D = [link(np.asarray(scen.pos_dl[l]), ap,
                lambda u, l=l: ula_response(scen.M_D[l], u), ap_tx_ula, scen.a_au, scen.b_au)
           for l in range(scen.L)]
    G_U = [link(irs, np.asarray(scen.pos_ul[k]), irs_upa,
                lambda u, k=k: ula_response(scen.M_U[k], u), scen.a_iu, scen.b_iu)
           for k in range(scen.K)]
    G_D = [link(np.asarray(scen.pos_dl[l]), irs,
                lambda u, l=l: ula_response(scen.M_D[l], u), irs_upa, scen.a_iu, scen.b_iu)
           for l in range(scen.L)]
    V_U = link(ap, irs, ap_ula, irs_upa, scen.a_ai, scen.b_ai)
    V_D = link(irs, ap, irs_upa, ap_tx_ula, scen.a_ai, scen.b_ai)
    J = [[link(np.asarray(scen.pos_dl[l]), np.asarray(scen.pos_ul[k]),
               lambda u, l=l: ula_response(scen.M_D[l], u),
               lambda u, k=k: ula_response(scen.M_U[k], u), scen.a_uu, scen.b_uu)
          for l in range(scen.L)] for k in range(scen.K)]
    H_tilde = si_channel(scen.Nr, scen.Nt, scen.sigma_si, rng)
    return FullCsi(H_U=H_U, H_D=H_D, G_U=G_U, G_D=G_D, V_U=V_U, V_D=V_D, J=J,
                   H_tilde=H_tilde)


# ---------------------------------------------------------------------------
# Effective channels and CSI imperfection models
# ---------------------------------------------------------------------------

def effective_channels(csi: FullCsi, theta: np.ndarray) -> EffectiveCsi:
    """Compose direct and reflected paths for the reflection phases theta.

    Hbar_U = H_U + V_U diag(e^{j theta}) G_U, and analogously for the
    DL and UL->DL cross channels; the SI channel passes through unchanged.
    """
    theta = np.asarray(theta, float)
    T = csi.V_U.shape[1]
    if theta.shape != (T,):
        raise ValueError(f"theta must have length {T}, got shape {theta.shape}")
    phi = np.exp(1j * theta)
    K = len(csi.H_U)
    L = len(csi.H_D)
    for k in range(K):
        if csi.G_U[k].shape[0] != T or csi.H_U[k].shape[1] != csi.G_U[k].shape[1]:
            raise ValueError("full CSI dimensions are inconsistent")
    Hbar_U = [csi.H_U[k] + csi.V_U @ (phi[:, None] * csi.G_U[k]) for k in range(K)]
    Hbar_D = [csi.H_D[l] + (csi.G_D[l] * phi[None, :]) @ csi.V_D for l in range(L)]
    Jbar = [[csi.J[k][l] + (csi.G_D[l] * phi[None, :]) @ csi.G_U[k]
             for l in range(L)] for k in range(K)]
    return EffectiveCsi(Hbar_U=Hbar_U, Hbar_D=Hbar_D, Jbar=Jbar, H_tilde=csi.H_tilde)


def quantize_phases(theta: np.ndarray, bits: int) -> np.ndarray:
    """Snap each phase to the nearest point of the 2^bits uniform grid."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    theta = np.asarray(theta, float)
    levels = 2 ** bits
    step = 2.0 * np.pi / levels
    wrapped = np.mod(theta, 2.0 * np.pi)
    return np.mod(np.round(wrapped / step), levels) * step


def perturb_csi(csi: FullCsi, sigma_ce: float, rng: np.random.Generator) -> FullCsi:
    """Add estimation error: per-entry Gaussian noise at sigma_ce times the
    average entry power of each matrix."""
    if sigma_ce < 0:
        raise ValueError("sigma_ce must be non-negative")

    def noisy(h: np.ndarray) -> np.ndarray:
        p = float(np.mean(np.abs(h) ** 2))
        return h + math.sqrt(p * sigma_ce) * complex_gaussian(h.shape, rng)

    return csi.map(noisy)


def delay_correlation(tau: float, doppler_hz: float) -> float:
    """Jakes-type temporal correlation J0(2 pi f_d tau)."""
    if tau < 0:
        raise ValueError("delay must be non-negative")
    return float(j0(2.0 * np.pi * doppler_hz * tau))


def delayed_csi(csi_now: FullCsi, csi_past: FullCsi, tau: float,
                scen: ScenarioConfig, rho: float | None = None) -> FullCsi:
    """Gauss-Markov mixture of a stale realization with a fresh innovation.

    Output = rho * csi_past + sqrt(1 - rho^2) * csi_now with
    rho = J0(2 pi f_d tau) by default; rho may be given directly (tests,
    calibrated sweeps). rho = 1 returns csi_past unchanged.
    """
    if rho is None:
        rho = delay_correlation(tau, scen.doppler_hz)
    if not -1.0 <= rho <= 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    mix = math.sqrt(1.0 - rho * rho)
    return csi_past.zip_map(csi_now, lambda past, now: rho * past + mix * now)


# ---------------------------------------------------------------------------
# CSI dump: text matrix format for cross-implementation comparison
# ---------------------------------------------------------------------------

_DUMP_MAGIC = "irs-fd-csi 1"


def save_csi_dump(csi: FullCsi, path: str | Path) -> None:
    """Write all channel matrices as text: one header line per matrix
    ("matrix <name> <rows> <cols>") followed by row-major rows of
    interleaved "re im" pairs."""
    with open(path, "w") as fh:
        fh.write(_DUMP_MAGIC + "\n")
        fh.write(f"users {len(csi.H_U)} {len(csi.H_D)}\n")
        for name, mat in csi.matrices():
            rows, cols = mat.shape
            fh.write(f"matrix {name} {rows} {cols}\n")
            for r in range(rows):
                fh.write(" ".join(f"{v.real:.17g} {v.imag:.17g}" for v in mat[r]) + "\n")


def load_csi_dump(path: str | Path) -> FullCsi:
    """Read a dump produced by save_csi_dump."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _DUMP_MAGIC:
        raise ValueError("not an irs-fd CSI dump")
    _, k_str, l_str = lines[1].split()
    K, L = int(k_str), int(l_str)
    mats: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        tag, name, rows_s, cols_s = lines[i].split()
        if tag != "matrix":
            raise ValueError(f"bad dump line: {lines[i]!r}")
        rows, cols = int(rows_s), int(cols_s)
        block = np.empty((rows, cols), dtype=complex)
        for r in range(rows):
            vals = np.array(lines[i + 1 + r].split(), dtype=float)
            block[r] = vals[0::2] + 1j * vals[1::2]
        mats[name] = block
        i += 1 + rows
    return FullCsi(
        H_U=[mats[f"H_U[{k}]"] for k in range(K)],
        H_D=[mats[f"H_D[{l}]"] for l in range(L)],
        G_U=[mats[f"G_U[{k}]"] for k in range(K)],
        G_D=[mats[f"G_D[{l}]"] for l in range(L)],
        V_U=mats["V_U"], V_D=mats["V_D"],
        J=[[mats[f"J[{k}][{l}]"] for l in range(L)] for k in range(K)],
        H_tilde=mats["H_tilde"],
    )
