"""Block-coordinate short-term beamforming optimizer.

Cycles closed-form updates over four variable blocks: receive filters,
MSE weights, UL precoders, DL precoders. The precoder blocks are convex
quadratic programs under power constraints, solved through their KKT
conditions with a bisection search on the Lagrange multiplier (one
multiplier per UL user, one shared multiplier for the AP sum power).
Every block update decreases the weighted-MSE objective, so the iteration
is monotone.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .channels import EffectiveCsi
from .linalg import (NumericalError, chol_inverse, chol_logdet, chol_solve,
                     cholesky, herm, hermitize)
from .rates import LN2, BeamformerSet, WmmseAux, dl_covariance, ul_covariance
from .scenario import ScenarioConfig


@dataclass
class BcdConfig:
    """Stopping and bisection controls for the block-coordinate loop."""

    max_iters: int = 100
    tol: float = 1e-4
    bis_tol: float = 1e-9
    bis_max_steps: int = 200

    def __post_init__(self) -> None:
        if self.max_iters < 1 or self.tol <= 0 or self.bis_tol <= 0:
            raise ValueError("max_iters >= 1 and positive tolerances required")


@dataclass
class BcdTrace:
    """Per-iteration record of the optimizer run."""

    objective: list[float] = field(default_factory=list)
    sum_rate: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "sum_rate"])
            for i, (obj, rate) in enumerate(zip(self.objective, self.sum_rate)):
                writer.writerow([i, f"{obj:.12g}", f"{rate:.12g}"])


def random_beamformers(scen: ScenarioConfig, rng: np.random.Generator) -> BeamformerSet:
    """Random Gaussian precoders scaled onto the power budgets."""
    P = []
    for k in range(scen.K):
        g = (rng.standard_normal((scen.M_U[k], scen.D_U[k]))
             + 1j * rng.standard_normal((scen.M_U[k], scen.D_U[k])))
        P.append(np.sqrt(scen.P_U[k]) * g / np.linalg.norm(g))
    F = []
    for l in range(scen.L):
        g = (rng.standard_normal((scen.Nt, scen.D_D[l]))
             + 1j * rng.standard_normal((scen.Nt, scen.D_D[l])))
        F.append(np.sqrt(scen.P_AP / scen.L) * g / np.linalg.norm(g))
    return BeamformerSet(P=P, F=F)


def project_feasible(bf: BeamformerSet, scen: ScenarioConfig) -> BeamformerSet:
    """Scale precoders down onto the power budgets if they exceed them."""
    out = bf.copy()
    for k in range(scen.K):
        p = out.ul_power(k)
        if p > scen.P_U[k]:
            out.P[k] *= np.sqrt(scen.P_U[k] / p)
    total = out.dl_power()
    if total > scen.P_AP:
        scale = np.sqrt(scen.P_AP / total)
        out.F = [f * scale for f in out.F]
    return out


# ---------------------------------------------------------------------------
# Block updates
# ---------------------------------------------------------------------------

def update_receivers(eff: EffectiveCsi, bf: BeamformerSet,
                     scen: ScenarioConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """MMSE receive filters U = A^{-1} H P from the first-order condition."""
    a_ul = ul_covariance(eff, bf, scen)
    U_U = [chol_solve(a_ul, eff.Hbar_U[k] @ bf.P[k]) for k in range(scen.K)]
    U_D = []
    for l in range(scen.L):
        a_dl = dl_covariance(eff, bf, scen, l)
        U_D.append(chol_solve(a_dl, eff.Hbar_D[l] @ bf.F[l]))
    return U_U, U_D


def update_weights(E_U: list[np.ndarray],
                   E_D: list[np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Weight update W = E^{-1} (Hermitian PD for PD inputs)."""
    return [chol_inverse(e) for e in E_U], [chol_inverse(e) for e in E_D]


def _kkt_precoder(a: np.ndarray, rhs: np.ndarray, budget: float,
                  cfg: BcdConfig) -> tuple[np.ndarray, float]:
    """Solve min Tr(X^H a X) - 2 Re Tr(X^H rhs) s.t. ||X||_F^2 <= budget.

    X(mu) = (a + mu I)^{-1} rhs; the power ||X(mu)||^2 is decreasing in mu,
    so the binding multiplier is found by growing an upper bracket and
    bisecting. One Hermitian eigendecomposition turns each power
    evaluation into a scalar sum, so the bisection is cheap. Returns
    (X, mu) with the constraint satisfied and complementary slackness
    within the bisection tolerance.
    """
    if not np.any(rhs):
        return np.zeros_like(rhs), 0.0
    # a is Hermitian PSD in every caller; eigh also regularizes roundoff
    eigvals, q = np.linalg.eigh(hermitize(a))
    eigvals = np.maximum(eigvals, 0.0)
    g2 = np.sum(np.abs(herm(q) @ rhs) ** 2, axis=1)  # per-eigenvector energy

    def power(mu: float) -> float:
        return float(np.sum(g2 / (eigvals + mu) ** 2))

    def solution(mu: float) -> np.ndarray:
        return q @ ((herm(q) @ rhs) / (eigvals + mu)[:, None])

    singular = eigvals.min() <= 1e-14 * max(float(eigvals.max()), 1.0)
    if not singular and power(0.0) <= budget * (1.0 + 1e-12):
        return chol_solve(a, rhs), 0.0
    # singular quadratic term: the multiplier regularizes it (a vanishing
    # multiplier from the bisection then approximates the interior case)
    hi = 1.0
    grow = 0
    while power(hi) > budget:
        hi *= 4.0
        grow += 1
        if grow > 200:
            raise NumericalError(
                f"KKT bisection failed to bracket the multiplier (mu={hi:.3e})")
    lo = 0.0
    steps = 0
    while budget - power(hi) > cfg.bis_tol * budget and steps < cfg.bis_max_steps:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # interval exhausted at float precision
        if power(mid) > budget:
            lo = mid
        else:
            hi = mid
        steps += 1
    return solution(hi), hi


def update_ul_precoders(eff: EffectiveCsi, aux: WmmseAux, scen: ScenarioConfig,
                        cfg: BcdConfig) -> tuple[list[np.ndarray], list[float]]:
    """Per-user KKT precoder update under individual power budgets."""
    uwu = np.zeros((scen.Nr, scen.Nr), dtype=complex)
    for kp in range(scen.K):
        uw = aux.U_U[kp] @ aux.W_U[kp]
        uwu = uwu + scen.alpha[kp] * uw @ herm(aux.U_U[kp])
    P, lambdas = [], []
    for k in range(scen.K):
        a = herm(eff.Hbar_U[k]) @ uwu @ eff.Hbar_U[k]
        for l in range(scen.L):
            juw = herm(eff.Jbar[k][l]) @ aux.U_D[l]
            a = a + scen.beta[l] * juw @ aux.W_D[l] @ herm(juw)
        a = hermitize(a)
        rhs = scen.alpha[k] * herm(eff.Hbar_U[k]) @ aux.U_U[k] @ aux.W_U[k]
        p_k, lam = _kkt_precoder(a, rhs, scen.P_U[k], cfg)
        P.append(p_k)
        lambdas.append(lam)
    return P, lambdas


def dl_precoder_quadratic(eff: EffectiveCsi, aux: WmmseAux,
                          scen: ScenarioConfig) -> np.ndarray:
    """Shared quadratic term of the DL precoder subproblem."""
    a = np.zeros((scen.Nt, scen.Nt), dtype=complex)
    for l in range(scen.L):
        huw = herm(eff.Hbar_D[l]) @ aux.U_D[l]
        a = a + scen.beta[l] * huw @ aux.W_D[l] @ herm(huw)
    for k in range(scen.K):
        suw = herm(eff.H_tilde) @ aux.U_U[k]
        a = a + scen.alpha[k] * suw @ aux.W_U[k] @ herm(suw)
    return hermitize(a)


def update_dl_precoders(eff: EffectiveCsi, aux: WmmseAux, scen: ScenarioConfig,
                        cfg: BcdConfig) -> tuple[list[np.ndarray], float]:
    """DL precoder update; a single multiplier enforces the AP sum power."""
    a = dl_precoder_quadratic(eff, aux, scen)
    rhs = [scen.beta[l] * herm(eff.Hbar_D[l]) @ aux.U_D[l] @ aux.W_D[l]
           for l in range(scen.L)]
    # stack user blocks so the shared multiplier sees the total power
    widths = [r.shape[1] for r in rhs]
    stacked = np.concatenate(rhs, axis=1)
    x, mu = _kkt_precoder(a, stacked, scen.P_AP, cfg)
    F = []
    off = 0
    for w in widths:
        F.append(x[:, off:off + w])
        off += w
    return F, mu


def run_bcd(eff: EffectiveCsi, scen: ScenarioConfig, cfg: BcdConfig | None = None,
            init: BeamformerSet | None = None,
            rng: np.random.Generator | None = None
            ) -> tuple[BeamformerSet, WmmseAux, BcdTrace]:
    """Run the block-coordinate loop until the objective change is below tol.

    init is projected onto the power budgets if needed; when omitted, a
    random feasible set is drawn from rng (default seed 0).
    """
    cfg = cfg or BcdConfig()
    if init is None:
        init = random_beamformers(scen, rng or np.random.default_rng(0))
    bf = project_feasible(init, scen)
    trace = BcdTrace()
    streams = sum(a * d for a, d in zip(scen.alpha, scen.D_U)) \
        + sum(b * d for b, d in zip(scen.beta, scen.D_D))
    aux = None
    prev_obj = np.inf

    def receiver_pass(current: BeamformerSet) -> tuple[WmmseAux, float]:
        """Receiver + weight updates with each covariance factored once.

        At this point Tr(W E) equals the stream count exactly, so the
        objective reduces to streams + sum of weighted log-dets of E,
        which also equals streams - ln2 * sum-rate of `current`.
        """
        hp = [eff.Hbar_U[k] @ current.P[k] for k in range(scen.K)]
        hf = [eff.Hbar_D[l] @ current.F[l] for l in range(scen.L)]
        a_ul_low = cholesky(ul_covariance(eff, current, scen))
        U_U = [scipy.linalg.cho_solve((a_ul_low, True), hp[k])
               for k in range(scen.K)]
        U_D = []
        for l in range(scen.L):
            low = cholesky(dl_covariance(eff, current, scen, l))
            U_D.append(scipy.linalg.cho_solve((low, True), hf[l]))
        value = streams
        W_U, W_D = [], []
        for k in range(scen.K):
            # at the exact receiver, E = I - U^H hp (Hermitian PSD)
            e = hermitize(np.eye(scen.D_U[k], dtype=complex) - herm(U_U[k]) @ hp[k])
            W_U.append(chol_inverse(e))
            value += scen.alpha[k] * chol_logdet(e)
        for l in range(scen.L):
            e = hermitize(np.eye(scen.D_D[l], dtype=complex) - herm(U_D[l]) @ hf[l])
            W_D.append(chol_inverse(e))
            value += scen.beta[l] * chol_logdet(e)
        return WmmseAux(U_U=U_U, U_D=U_D, W_U=W_U, W_D=W_D), value

    for it in range(cfg.max_iters):
        aux, obj = receiver_pass(bf)
        P, _ = update_ul_precoders(eff, aux, scen, cfg)
        F, _ = update_dl_precoders(eff, aux, scen, cfg)
        bf = BeamformerSet(P=P, F=F)
        trace.objective.append(obj)
        trace.sum_rate.append((streams - obj) / LN2)
        trace.iterations = it + 1
        if abs(prev_obj - obj) < cfg.tol:
            trace.converged = True
            break
        prev_obj = obj
    # final entry: objective/rate of the returned beamformers
    aux, obj = receiver_pass(bf)
    trace.objective.append(obj)
    trace.sum_rate.append((streams - obj) / LN2)
    return bf, aux, trace
