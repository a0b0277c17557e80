"""Long-term reflection-phase optimizer.

Stochastic surrogate recursion over batches of full-CSI samples: each
iteration solves the short-term beamforming problem on the sampled
channels, accumulates the phase gradient of the resulting sum-rate into a
running estimate, minimizes a quadratic surrogate in closed form, and
damps the iterate. Phases parameterize the reflection coefficients as
e^{j theta}, so the unit-modulus constraint holds for every iterate by
construction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import FullCsi, effective_channels
from .linalg import chol_solve, herm
from .rates import (LN2, BeamformerSet, dl_covariance, dl_interference,
                    ul_covariance, ul_interference)
from .scenario import ScenarioConfig
from .wmmse import BcdConfig, run_bcd


@dataclass
class SscaConfig:
    """Schedules and surrogate curvature of the long-term loop.

    Step sequences: rho^t = rho_num / (rho_num + t)^rho_exp and
    gamma^t = gamma_num / (gamma_num + t), both clamped to (0, 1]; the
    defaults decay with gamma^t / rho^t -> 0, which is what the recursion
    needs to track the drifting gradient estimate.
    """

    batch: int = 5
    curvature: float = 0.5
    rho_num: float = 10.0
    rho_exp: float = 0.6
    gamma_num: float = 15.0
    max_iters: int = 200
    pool_size: int = 100

    def __post_init__(self) -> None:
        if self.curvature <= 0 or self.batch < 1 or self.max_iters < 1:
            raise ValueError("curvature > 0, batch >= 1, max_iters >= 1 required")


@dataclass
class SurrogateState:
    """Running gradient estimate and current phase iterate."""

    f: np.ndarray
    theta: np.ndarray
    t: int = 0


@dataclass
class SscaTrace:
    batch_rate: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "batch_sum_rate", "grad_norm"])
            for i, (rate, gn) in enumerate(zip(self.batch_rate, self.grad_norm)):
                writer.writerow([i, f"{rate:.12g}", f"{gn:.12g}"])


def step_schedules(t: int, cfg: SscaConfig) -> tuple[float, float]:
    """(rho^t, gamma^t), clamped to (0, 1]."""
    if t < 0:
        raise ValueError("iteration index must be non-negative")
    rho = cfg.rho_num / (cfg.rho_num + t) ** cfg.rho_exp
    gamma = cfg.gamma_num / (cfg.gamma_num + t)
    return min(rho, 1.0), min(gamma, 1.0)


# ---------------------------------------------------------------------------
# Exact phase gradient of the sum-rate at fixed beamformers
# ---------------------------------------------------------------------------

def _phase_term(right: np.ndarray, shaped: np.ndarray,
                m_inv_left: np.ndarray) -> np.ndarray:
    """diag(right @ shaped @ m_inv_left) for one composed-channel term.

    For a covariance term Hbar Q Hbar^H with Hbar = H + left diag(phi) right,
    the derivative of ln det M against phi_n picks out the n-th diagonal
    entry of right @ (Q Hbar^H) @ (M^{-1} left); shaped = Q Hbar^H and
    m_inv_left = M^{-1} left are precomputed by the caller.
    """
    return np.einsum("nj,jm,mn->n", right, shaped, m_inv_left)


def sample_gradient(theta: np.ndarray, csi: FullCsi, bf: BeamformerSet,
                    scen: ScenarioConfig) -> np.ndarray:
    """d (weighted sum-rate) / d theta with the beamformers held fixed.

    Analytic chain rule through the effective-channel composition and the
    log-det rate expressions; bits/s/Hz per radian. Matches central finite
    differences of weighted_sum_rate to oracle precision.
    """
    theta = np.asarray(theta, float)
    eff = effective_channels(csi, theta)
    phi = np.exp(1j * theta)
    K, L, T = scen.K, scen.L, scen.T
    grad = np.zeros(T)

    def lndet_grad_ul(m: np.ndarray, skip_k: int | None) -> np.ndarray:
        """d ln det m / d theta for the AP-side covariance built from all
        UL users except skip_k (the SI term has no theta dependence)."""
        c = np.zeros(T, dtype=complex)
        m_inv_left = chol_solve(m, csi.V_U)
        for kp in range(K):
            if kp == skip_k:
                continue
            q = bf.P[kp] @ herm(bf.P[kp])
            shaped = q @ herm(eff.Hbar_U[kp])
            c += _phase_term(csi.G_U[kp], shaped, m_inv_left)
        return -2.0 * np.imag(phi * c)

    def lndet_grad_dl(m: np.ndarray, l: int, skip_own: bool) -> np.ndarray:
        """d ln det m / d theta for the covariance at DL user l."""
        c = np.zeros(T, dtype=complex)
        x = sum(bf.F[lp] @ herm(bf.F[lp]) for lp in range(L))
        if skip_own:
            x = x - bf.F[l] @ herm(bf.F[l])
        m_inv_left = chol_solve(m, csi.G_D[l])
        shaped = x @ herm(eff.Hbar_D[l])
        c += _phase_term(csi.V_D, shaped, m_inv_left)
        for k in range(K):
            q = bf.P[k] @ herm(bf.P[k])
            shaped_j = q @ herm(eff.Jbar[k][l])
            c += _phase_term(csi.G_U[k], shaped_j, m_inv_left)
        return -2.0 * np.imag(phi * c)

    # UL: the total covariance is shared by all users; per-user interference
    # covariances are rebuilt term-by-term (no subtraction) for accuracy.
    total_ul = ul_covariance(eff, bf, scen)
    grad += sum(scen.alpha) * lndet_grad_ul(total_ul, skip_k=None)
    for k in range(K):
        grad -= scen.alpha[k] * lndet_grad_ul(ul_interference(eff, bf, scen, k),
                                              skip_k=k)

    for l in range(L):
        total_dl = dl_covariance(eff, bf, scen, l)
        grad += scen.beta[l] * lndet_grad_dl(total_dl, l, skip_own=False)
        grad -= scen.beta[l] * lndet_grad_dl(dl_interference(eff, bf, scen, l),
                                             l, skip_own=True)
    return grad / LN2


# ---------------------------------------------------------------------------
# Surrogate recursion
# ---------------------------------------------------------------------------

def update_surrogate(f_prev: np.ndarray, batch_grads: list[np.ndarray],
                     rho: float) -> np.ndarray:
    """f^t = (1 - rho) f^{t-1} + rho * sum of the batch gradients."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    batch_sum = np.sum(batch_grads, axis=0)
    return (1.0 - rho) * np.asarray(f_prev, float) + rho * batch_sum


def surrogate_minimizer(theta: np.ndarray, f: np.ndarray,
                        curvature: float) -> np.ndarray:
    """Closed-form minimizer of the quadratic surrogate: theta - f / (2 w).

    f carries the gradient of the negated sum-rate, so stepping against it
    ascends the rate objective.
    """
    if curvature <= 0:
        raise ValueError("curvature must be positive")
    return np.asarray(theta, float) - np.asarray(f, float) / (2.0 * curvature)


def long_term_step(theta: np.ndarray, theta_bar: np.ndarray,
                   gamma: float) -> np.ndarray:
    """Damped iterate mixing theta^{t+1} = (1 - gamma) theta + gamma theta_bar."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    return (1.0 - gamma) * np.asarray(theta, float) + gamma * np.asarray(theta_bar, float)


def run_ssca(pool: list[FullCsi], scen: ScenarioConfig,
             cfg: SscaConfig | None = None, bcd_cfg: BcdConfig | None = None,
             rng: np.random.Generator | None = None,
             theta0: np.ndarray | None = None) -> tuple[np.ndarray, SscaTrace]:
    """Optimize the long-term phases over a pool of full-CSI samples.

    Each iteration draws a batch from the pool, solves the short-term
    problem per sample (warm-started from that sample's previous solution),
    and feeds the fixed-beamformer phase gradients into the surrogate
    recursion. Returns the final phases and the per-iteration trace.
    """
    if not pool:
        raise ValueError("sample pool must be non-empty")
    cfg = cfg or SscaConfig()
    bcd_cfg = bcd_cfg or BcdConfig()
    rng = rng or np.random.default_rng(0)
    theta = (rng.uniform(0.0, 2.0 * np.pi, scen.T) if theta0 is None
             else np.asarray(theta0, float).copy())
    f = np.zeros(scen.T)
    trace = SscaTrace()
    warm: dict[int, BeamformerSet] = {}
    n = len(pool)
    for t in range(cfg.max_iters):
        rho, gamma = step_schedules(t, cfg)
        idx = rng.choice(n, size=cfg.batch, replace=cfg.batch > n)
        grads = []
        rates = []
        for i in idx:
            i = int(i)
            eff = effective_channels(pool[i], theta)
            bf, _, tr = run_bcd(eff, scen, bcd_cfg, init=warm.get(i), rng=rng)
            warm[i] = bf
            grads.append(-sample_gradient(theta, pool[i], bf, scen))
            rates.append(tr.sum_rate[-1])
        f = update_surrogate(f, grads, rho)
        theta_bar = surrogate_minimizer(theta, f, cfg.curvature)
        theta = long_term_step(theta, theta_bar, gamma)
        trace.batch_rate.append(float(np.mean(rates)))
        trace.grad_norm.append(float(np.linalg.norm(f)))
    return theta, trace
