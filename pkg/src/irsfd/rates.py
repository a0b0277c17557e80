"""Physical-layer objective: per-user rates, weighted sum-rate, MSE matrices.

Rates are reported in bits/s/Hz (base-2 logs). The weighted-MSE objective
used by the block-coordinate optimizer keeps the natural log so that the
weight update W = E^{-1} is its exact minimizer; the base only shifts the
objective by a constant factor and does not change the iterates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channels import EffectiveCsi, FullCsi, effective_channels
from .linalg import chol_logdet, chol_solve, cholesky, herm, hermitize
from .scenario import ScenarioConfig

LN2 = float(np.log(2.0))


@dataclass
class BeamformerSet:
    """Short-term precoders: P[k] (M_U,k x D_U,k), F[l] (Nt x D_D,l)."""

    P: list[np.ndarray]
    F: list[np.ndarray]

    def ul_power(self, k: int) -> float:
        return float(np.sum(np.abs(self.P[k]) ** 2))

    def dl_power(self) -> float:
        return float(sum(np.sum(np.abs(f) ** 2) for f in self.F))

    def is_feasible(self, scen: ScenarioConfig, rtol: float = 1e-9) -> bool:
        ok_ul = all(self.ul_power(k) <= scen.P_U[k] * (1.0 + rtol) for k in range(scen.K))
        return ok_ul and self.dl_power() <= scen.P_AP * (1.0 + rtol)

    def copy(self) -> "BeamformerSet":
        return BeamformerSet(P=[p.copy() for p in self.P], F=[f.copy() for f in self.F])


@dataclass
class WmmseAux:
    """Auxiliary receive filters and weights of the MSE reformulation."""

    U_U: list[np.ndarray]
    U_D: list[np.ndarray]
    W_U: list[np.ndarray]
    W_D: list[np.ndarray]


# ---------------------------------------------------------------------------
# Received-signal covariances (shared by rates and the BCD optimizer)
# ---------------------------------------------------------------------------

def ul_covariance(eff: EffectiveCsi, bf: BeamformerSet, scen: ScenarioConfig) -> np.ndarray:
    """Total covariance at the AP receiver: all UL signals + SI + noise."""
    a = scen.noise_ul * np.eye(scen.Nr, dtype=complex)
    for k in range(scen.K):
        hp = eff.Hbar_U[k] @ bf.P[k]
        a = a + hp @ herm(hp)
    for l in range(scen.L):
        sf = eff.H_tilde @ bf.F[l]
        a = a + sf @ herm(sf)
    return hermitize(a)


def dl_covariance(eff: EffectiveCsi, bf: BeamformerSet, scen: ScenarioConfig,
                  l: int) -> np.ndarray:
    """Total covariance at DL user l: all DL streams through the user's own
    channel, UL cross interference, noise."""
    a = scen.noise_dl[l] * np.eye(scen.M_D[l], dtype=complex)
    for lp in range(scen.L):
        hf = eff.Hbar_D[l] @ bf.F[lp]
        a = a + hf @ herm(hf)
    for k in range(scen.K):
        jp = eff.Jbar[k][l] @ bf.P[k]
        a = a + jp @ herm(jp)
    return hermitize(a)


def ul_interference(eff: EffectiveCsi, bf: BeamformerSet, scen: ScenarioConfig,
                    k: int) -> np.ndarray:
    """Interference-plus-noise covariance seen by UL user k (own signal
    excluded; built directly rather than by subtraction, which matters for
    accuracy when the own signal dominates)."""
    a = scen.noise_ul * np.eye(scen.Nr, dtype=complex)
    for kp in range(scen.K):
        if kp == k:
            continue
        hp = eff.Hbar_U[kp] @ bf.P[kp]
        a = a + hp @ herm(hp)
    for l in range(scen.L):
        sf = eff.H_tilde @ bf.F[l]
        a = a + sf @ herm(sf)
    return hermitize(a)


def dl_interference(eff: EffectiveCsi, bf: BeamformerSet, scen: ScenarioConfig,
                    l: int) -> np.ndarray:
    """Interference-plus-noise covariance seen by DL user l."""
    a = scen.noise_dl[l] * np.eye(scen.M_D[l], dtype=complex)
    for lp in range(scen.L):
        if lp == l:
            continue
        hf = eff.Hbar_D[l] @ bf.F[lp]
        a = a + hf @ herm(hf)
    for k in range(scen.K):
        jp = eff.Jbar[k][l] @ bf.P[k]
        a = a + jp @ herm(jp)
    return hermitize(a)


def _logdet_rate(interference: np.ndarray, hx: np.ndarray) -> float:
    """log2 det(I + hx hx^H interference^{-1}), evaluated cancellation-free.

    Whitens the signal by the interference Cholesky factor and takes the
    log-det of the small I + Gram matrix, which keeps full precision at
    physical (watt-scale) magnitudes.
    """
    low = cholesky(interference)
    s = scipy.linalg.solve_triangular(low, hx, lower=True)
    d = hx.shape[1]
    return chol_logdet(np.eye(d, dtype=complex) + herm(s) @ s) / LN2


def uplink_rate(eff: EffectiveCsi, bf: BeamformerSet, scen: ScenarioConfig,
                k: int) -> float:
    """Achievable rate of UL user k in bits/s/Hz."""
    hp = eff.Hbar_U[k] @ bf.P[k]
    return _logdet_rate(ul_interference(eff, bf, scen, k), hp)


def downlink_rate(eff: EffectiveCsi, bf: BeamformerSet, scen: ScenarioConfig,
                  l: int) -> float:
    """Achievable rate of DL user l in bits/s/Hz."""
    hf = eff.Hbar_D[l] @ bf.F[l]
    return _logdet_rate(dl_interference(eff, bf, scen, l), hf)


def rate_breakdown(eff: EffectiveCsi, bf: BeamformerSet,
                   scen: ScenarioConfig) -> tuple[float, float]:
    """Weighted UL and DL sum-rates."""
    ul = sum(scen.alpha[k] * uplink_rate(eff, bf, scen, k) for k in range(scen.K))
    dl = sum(scen.beta[l] * downlink_rate(eff, bf, scen, l) for l in range(scen.L))
    return float(ul), float(dl)


def sum_rate(eff: EffectiveCsi, bf: BeamformerSet, scen: ScenarioConfig) -> float:
    """Weighted sum-rate evaluated on effective channels."""
    ul, dl = rate_breakdown(eff, bf, scen)
    return ul + dl


def weighted_sum_rate(theta: np.ndarray, bf: BeamformerSet, csi: FullCsi,
                      scen: ScenarioConfig) -> float:
    """Weighted sum-rate of full CSI composed with the phase vector theta."""
    return sum_rate(effective_channels(csi, theta), bf, scen)


# ---------------------------------------------------------------------------
# MSE matrices and the weighted-MSE objective
# ---------------------------------------------------------------------------

def _mse_matrix(total_cov: np.ndarray, channel_times_precoder: np.ndarray,
                u: np.ndarray) -> np.ndarray:
    """E = (U^H H X - I)(U^H H X - I)^H + U^H (cov - HX X^H H^H) U, written in
    the equivalent form I - U^H HX - (U^H HX)^H + U^H cov U."""
    d = channel_times_precoder.shape[1]
    m = herm(u) @ channel_times_precoder
    e = np.eye(d, dtype=complex) - m - herm(m) + herm(u) @ total_cov @ u
    return hermitize(e)


def mse_matrix_ul(eff: EffectiveCsi, bf: BeamformerSet, aux: WmmseAux,
                  scen: ScenarioConfig, k: int) -> np.ndarray:
    """MSE matrix of UL user k under receive filter aux.U_U[k]."""
    total = ul_covariance(eff, bf, scen)
    return _mse_matrix(total, eff.Hbar_U[k] @ bf.P[k], aux.U_U[k])


def mse_matrix_dl(eff: EffectiveCsi, bf: BeamformerSet, aux: WmmseAux,
                  scen: ScenarioConfig, l: int) -> np.ndarray:
    """MSE matrix of DL user l under receive filter aux.U_D[l]."""
    total = dl_covariance(eff, bf, scen, l)
    return _mse_matrix(total, eff.Hbar_D[l] @ bf.F[l], aux.U_D[l])


def wmmse_objective(eff: EffectiveCsi, bf: BeamformerSet, aux: WmmseAux,
                    scen: ScenarioConfig) -> float:
    """Weighted-MSE objective (natural log): sum of
    weight * (Tr(W E) - log det W) over all users.

    Raises NumericalError when a weight matrix is not positive definite.
    """
    val = 0.0
    for k in range(scen.K):
        e = mse_matrix_ul(eff, bf, aux, scen, k)
        w = aux.W_U[k]
        val += scen.alpha[k] * (float(np.real(np.trace(w @ e))) - chol_logdet(w))
    for l in range(scen.L):
        e = mse_matrix_dl(eff, bf, aux, scen, l)
        w = aux.W_D[l]
        val += scen.beta[l] * (float(np.real(np.trace(w @ e))) - chol_logdet(w))
    return val


def mmse_rate_duality_gap(eff: EffectiveCsi, bf: BeamformerSet,
                          scen: ScenarioConfig) -> float:
    """Relative gap between the weighted sum-rate and
    sum of weight * log2 det(E_mmse^{-1}) at the exact MMSE receive filters.

    Zero (to numerical precision) for any beamformers; the identity is what
    ties the rate objective to the weighted-MSE reformulation.
    """
    total_rate = sum_rate(eff, bf, scen)
    via_mse = 0.0
    for k in range(scen.K):
        total = ul_covariance(eff, bf, scen)
        hp = eff.Hbar_U[k] @ bf.P[k]
        u = chol_solve(total, hp)
        e = _mse_matrix(total, hp, u)
        via_mse += scen.alpha[k] * (-chol_logdet(e)) / LN2
    for l in range(scen.L):
        total = dl_covariance(eff, bf, scen, l)
        hf = eff.Hbar_D[l] @ bf.F[l]
        u = chol_solve(total, hf)
        e = _mse_matrix(total, hf, u)
        via_mse += scen.beta[l] * (-chol_logdet(e)) / LN2
    denom = max(abs(total_rate), 1e-12)
    return abs(total_rate - via_mse) / denom
