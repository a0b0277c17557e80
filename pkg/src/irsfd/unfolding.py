"""Learned unrolling of the block-coordinate beamformer.

Two pieces: a long-term network whose only parameter is the reflection
phase vector (feeding the effective-channel map), and a short-term network
that unrolls a fixed number of block-coordinate iterations, replacing each
matrix inversion A^{-1} by the learnable surrogate

    dagger(A) X + A Y + Z

where dagger(A) keeps the reciprocal diagonal of A and zeroes the rest
(exact for diagonal A), and the A Y + Z branch mirrors a first-order
Taylor expansion of the inverse. Per layer and per user the parameters are
the X/Y/Z triplets for all six variable families, additive offsets for the
filter and precoder outputs, and non-negative scalar multipliers for the
power-constrained precoder updates. Precoders are rescaled onto their
power budgets after every layer, and the final stage is one exact
block-coordinate iteration, so the network output is always feasible.

All tensors are complex128/float64; training uses plain SGD with the
phases updated either by SGD or by the stochastic-surrogate recursion of
the long-term optimizer (config switch).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .channels import EffectiveCsi, FullCsi
from .linalg import NumericalError, herm, hermitize
from .rates import LN2, BeamformerSet
from .scenario import ScenarioConfig
from .ssca import SscaConfig, step_schedules

_CDT = torch.complex128
_RDT = torch.float64
_DAGGER_EPS = 1e-12


# ---------------------------------------------------------------------------
# Inverse-surrogate primitives (numpy: public ops; torch twins used in-graph)
# ---------------------------------------------------------------------------

def dagger(a: np.ndarray) -> np.ndarray:
    """Reciprocal-diagonal inverse surrogate: diag(1/a_ii), off-diagonals 0.

    Equals A^{-1} exactly when A is diagonal. Raises NumericalError when a
    diagonal entry is numerically zero rather than silently clamping.
    """
    a = np.asarray(a)
    d = np.diagonal(a)
    if np.any(np.abs(d) < _DAGGER_EPS):
        raise NumericalError("dagger: diagonal entry below 1e-12")
    return np.diag(1.0 / d).astype(complex)


def inverse_approx(a: np.ndarray, x: np.ndarray, y: np.ndarray,
                   z: np.ndarray) -> np.ndarray:
    """Learnable inverse surrogate dagger(a) x + a y + z."""
    return dagger(a) @ x + a @ y + z


def _tdagger(a: torch.Tensor, where: str) -> torch.Tensor:
    d = a.diagonal(dim1=-2, dim2=-1)
    if bool((d.abs() < _DAGGER_EPS).any()):
        raise NumericalError(f"dagger: singular diagonal in {where}")
    return torch.diag_embed(1.0 / d)


def _tinv_approx(a: torch.Tensor, x: torch.Tensor, y: torch.Tensor,
                 z: torch.Tensor, where: str, scale: float = 1.0) -> torch.Tensor:
    """dagger(a) x + a (y / scale^2) + z / scale.

    scale is a fixed per-family magnitude estimate of a; dividing the two
    non-dagger branches by it equalizes the branch sensitivities, so one
    SGD learning rate trains all parameter families. The represented
    function class is unchanged (y, z are free matrices either way) and
    scale = 1 recovers the plain surrogate.
    """
    return _tdagger(a, where) @ x + a @ (y / (scale * scale)) + z / scale


def _th(a: torch.Tensor) -> torch.Tensor:
    return a.conj().transpose(-2, -1)


def _teye(n: int) -> torch.Tensor:
    return torch.eye(n, dtype=_CDT)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class LpbnParams:
    """Long-term network: the reflection phases are the only parameter."""

    theta: torch.Tensor

    def theta_numpy(self) -> np.ndarray:
        return self.theta.detach().numpy().copy()


@dataclass
class SabnLayer:
    X_uu: list[torch.Tensor]
    Y_uu: list[torch.Tensor]
    Z_uu: list[torch.Tensor]
    O_uu: list[torch.Tensor]
    X_ud: list[torch.Tensor]
    Y_ud: list[torch.Tensor]
    Z_ud: list[torch.Tensor]
    O_ud: list[torch.Tensor]
    X_wu: list[torch.Tensor]
    Y_wu: list[torch.Tensor]
    Z_wu: list[torch.Tensor]
    X_wd: list[torch.Tensor]
    Y_wd: list[torch.Tensor]
    Z_wd: list[torch.Tensor]
    X_p: list[torch.Tensor]
    Y_p: list[torch.Tensor]
    Z_p: list[torch.Tensor]
    O_p: list[torch.Tensor]
    lam: torch.Tensor
    X_f: list[torch.Tensor]
    Y_f: list[torch.Tensor]
    Z_f: list[torch.Tensor]
    O_f: list[torch.Tensor]
    mu: torch.Tensor


_UNIT_SCALES = {"uu": 1.0, "ud": 1.0, "wu": 1.0, "wd": 1.0, "p": 1.0, "f": 1.0}


@dataclass
class SabnParams:
    """Per-layer learnable tensors of the unrolled short-term network.

    scales holds fixed per-family magnitude estimates of the matrices the
    inverse surrogates act on (see _tinv_approx); they are calibrated once
    from a probe batch and are not trained.
    """

    layers: list[SabnLayer]
    scales: dict[str, float] = field(default_factory=lambda: dict(_UNIT_SCALES))

    def named_parameters(self):
        for m, layer in enumerate(self.layers):
            for fam in ("X_uu", "Y_uu", "Z_uu", "O_uu", "X_ud", "Y_ud", "Z_ud",
                        "O_ud", "X_wu", "Y_wu", "Z_wu", "X_wd", "Y_wd", "Z_wd",
                        "X_p", "Y_p", "Z_p", "O_p", "X_f", "Y_f", "Z_f", "O_f"):
                for i, t in enumerate(getattr(layer, fam)):
                    yield f"layer{m:02d}.{fam}{i}", t
            yield f"layer{m:02d}.lam", layer.lam
            yield f"layer{m:02d}.mu", layer.mu

    def parameters(self) -> list[torch.Tensor]:
        return [t for _, t in self.named_parameters()]


@dataclass
class TrainConfig:
    """SGD controls for the unrolled network.

    grad_clip caps each parameter tensor's gradient 2-norm before the SGD
    step; the physical watt-scale scenarios produce gradient magnitudes
    spanning many decades across parameter families, and an uncapped first
    step destroys the identity initialization.
    """

    lr: float = 1e-3
    batch: int = 5
    epochs: int = 25
    seed: int = 0
    theta_mode: str = "sgd"  # "sgd" | "ssca"
    init_mode: str = "taylor"  # "taylor" | "identity"
    grad_clip: float = 1.0
    lr_decay: float = 0.3  # multiplier applied at 60% and 85% of the steps
    keep_best: bool = True  # return the best-holdout snapshot
    grad_check: bool = False
    eval_every: int = 20

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.theta_mode not in ("sgd", "ssca"):
            raise ValueError("theta_mode must be 'sgd' or 'ssca'")
        if self.init_mode not in ("taylor", "identity"):
            raise ValueError("init_mode must be 'taylor' or 'identity'")


@dataclass
class TrainTrace:
    step: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    holdout_rate: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "holdout_sum_rate"])
            for s, lo, hr in zip(self.step, self.loss, self.holdout_rate):
                writer.writerow([s, f"{lo:.12g}", "" if math.isnan(hr) else f"{hr:.12g}"])


def _complex_leaf(arr: np.ndarray) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.complex128))
    return t.requires_grad_(True)


def calibrate_scales(scen: ScenarioConfig, probe: list[FullCsi],
                     theta: np.ndarray) -> dict[str, float]:
    """Median diagonal magnitudes of the per-family matrices along one
    exact block iteration from the canonical start, on a probe batch.

    Used as the fixed branch normalizers of the inverse surrogates.
    """
    tcsi = TorchCsi.from_list(probe)
    with torch.no_grad():
        eff = lpbn_forward(tcsi, torch.from_numpy(np.asarray(theta, dtype=np.float64)))
        neff = _dimensionless(eff, scen)
        P, F = _t_matched_filter_state(neff, scen)

        def mag(t: torch.Tensor) -> float:
            return float(t.diagonal(dim1=-2, dim2=-1).abs().median())

        a_ul = _t_ul_cov(neff, P, F, scen, noise_ul=1.0)
        a_dl = [_t_dl_cov(neff, P, F, scen, l, noise_dl=1.0) for l in range(scen.L)]
        U_U = [torch.linalg.solve(a_ul, neff.Hbar_U[k] @ P[k]) for k in range(scen.K)]
        U_D = [torch.linalg.solve(a_dl[l], neff.Hbar_D[l] @ F[l]) for l in range(scen.L)]
        E_U = [_t_mse(a_ul, neff.Hbar_U[k] @ P[k], U_U[k]) for k in range(scen.K)]
        E_D = [_t_mse(a_dl[l], neff.Hbar_D[l] @ F[l], U_D[l]) for l in range(scen.L)]
        W_U = [torch.linalg.solve(0.5 * (e + _th(e)), _teye(e.shape[-1]).expand_as(e))
               for e in E_U]
        W_D = [torch.linalg.solve(0.5 * (e + _th(e)), _teye(e.shape[-1]).expand_as(e))
               for e in E_D]
        a_p, a_f = _t_precoder_quadratics(neff, U_U, U_D, W_U, W_D, scen)
        # scales only tame large-magnitude families; clamping at one keeps
        # O(1) families (typically the MSE matrices) unamplified
        return {
            "uu": max(mag(a_ul), 1.0),
            "ud": max(min(mag(a) for a in a_dl), 1.0),
            "wu": max(min(mag(e) for e in E_U), 1.0),
            "wd": max(min(mag(e) for e in E_D), 1.0),
            "p": max(min(mag(a) for a in a_p), 1.0),
            "f": max(mag(a_f), 1.0),
        }


def init_params(scen: ScenarioConfig, layers: int, rng: np.random.Generator,
                probe: list[FullCsi] | None = None) -> tuple[LpbnParams, SabnParams]:
    """Identity-initialized network: X = I, Y = Z = offsets = 0,
    multipliers at a small positive value, phases uniform in [0, 2 pi).

    When a probe batch is given, the per-family branch normalizers are
    calibrated from it (the identity-initialized function is unaffected)."""
    theta = torch.from_numpy(rng.uniform(0.0, 2.0 * np.pi, scen.T)).requires_grad_(True)
    built = []
    for _ in range(layers):
        def triplet(n: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
            return (_complex_leaf(np.eye(n)), _complex_leaf(np.zeros((n, n))),
                    _complex_leaf(np.zeros((n, n))))

        X_uu, Y_uu, Z_uu, O_uu = [], [], [], []
        for k in range(scen.K):
            x, y, z = triplet(scen.Nr)
            X_uu.append(x); Y_uu.append(y); Z_uu.append(z)
            O_uu.append(_complex_leaf(np.zeros((scen.Nr, scen.D_U[k]))))
        X_ud, Y_ud, Z_ud, O_ud = [], [], [], []
        for l in range(scen.L):
            x, y, z = triplet(scen.M_D[l])
            X_ud.append(x); Y_ud.append(y); Z_ud.append(z)
            O_ud.append(_complex_leaf(np.zeros((scen.M_D[l], scen.D_D[l]))))
        X_wu, Y_wu, Z_wu = map(list, zip(*[triplet(scen.D_U[k]) for k in range(scen.K)]))
        X_wd, Y_wd, Z_wd = map(list, zip(*[triplet(scen.D_D[l]) for l in range(scen.L)]))
        X_p, Y_p, Z_p, O_p = [], [], [], []
        for k in range(scen.K):
            x, y, z = triplet(scen.M_U[k])
            X_p.append(x); Y_p.append(y); Z_p.append(z)
            O_p.append(_complex_leaf(np.zeros((scen.M_U[k], scen.D_U[k]))))
        X_f, Y_f, Z_f, O_f = [], [], [], []
        for l in range(scen.L):
            x, y, z = triplet(scen.Nt)
            X_f.append(x); Y_f.append(y); Z_f.append(z)
            O_f.append(_complex_leaf(np.zeros((scen.Nt, scen.D_D[l]))))
        lam = torch.full((scen.K,), 1e-3, dtype=_RDT, requires_grad=True)
        mu = torch.tensor(1e-3, dtype=_RDT, requires_grad=True)
        built.append(SabnLayer(
            X_uu=X_uu, Y_uu=Y_uu, Z_uu=Z_uu, O_uu=O_uu,
            X_ud=X_ud, Y_ud=Y_ud, Z_ud=Z_ud, O_ud=O_ud,
            X_wu=list(X_wu), Y_wu=list(Y_wu), Z_wu=list(Z_wu),
            X_wd=list(X_wd), Y_wd=list(Y_wd), Z_wd=list(Z_wd),
            X_p=X_p, Y_p=Y_p, Z_p=Z_p, O_p=O_p, lam=lam,
            X_f=X_f, Y_f=Y_f, Z_f=Z_f, O_f=O_f, mu=mu,
        ))
    sabn = SabnParams(layers=built)
    if probe:
        sabn.scales = calibrate_scales(scen, probe, theta.detach().numpy())
    return LpbnParams(theta=theta), sabn


def taylor_init_params(scen: ScenarioConfig, layers: int, rng: np.random.Generator,
                       probe: list[FullCsi],
                       damping: float = 0.5) -> tuple[LpbnParams, SabnParams]:
    """Initialize each layer at a damped first-order expansion of the inverse.

    Exact block iterations are rolled out on a probe batch from the
    canonical start; per layer and family the batch-mean matrix Abar
    anchors the expansion A^{-1} ~ (1+c) Abar^{-1} - c Abar^{-1} A Abar^{-1}
    (exact at A = Abar for any damping c; c < 1 keeps the surrogate
    positive for samples dispersed beyond 2 Abar, where the undamped
    expansion turns indefinite). X starts at zero; the multipliers start
    at the probe-mean exact values. Training refines from here.
    """
    lpbn, sabn = init_params(scen, layers, rng, probe=probe)
    theta = lpbn.theta_numpy()
    tcsi = TorchCsi.from_list(probe)
    sc = sabn.scales

    def mean_inv(t: torch.Tensor) -> torch.Tensor:
        m = t.mean(dim=0)
        m = 0.5 * (m + m.conj().T)
        return torch.linalg.solve(m, torch.eye(m.shape[-1], dtype=_CDT))

    def set_taylor(layer_mats, x, y, z, scale):
        inv = mean_inv(layer_mats)
        with torch.no_grad():
            x.zero_()
            y.copy_(-damping * (inv @ inv) * scale * scale)
            z.copy_((1.0 + damping) * inv * scale)

    with torch.no_grad():
        eff = lpbn_forward(tcsi, torch.from_numpy(theta))
        neff = _dimensionless(eff, scen)
        P, F = _t_matched_filter_state(neff, scen)
        for layer in sabn.layers:
            a_ul = _t_ul_cov(neff, P, F, scen, noise_ul=1.0)
            a_dl = [_t_dl_cov(neff, P, F, scen, l, noise_dl=1.0)
                    for l in range(scen.L)]
            U_U = [torch.linalg.solve(a_ul, neff.Hbar_U[k] @ P[k])
                   for k in range(scen.K)]
            U_D = [torch.linalg.solve(a_dl[l], neff.Hbar_D[l] @ F[l])
                   for l in range(scen.L)]
            E_U = [_t_mse(a_ul, neff.Hbar_U[k] @ P[k], U_U[k]) for k in range(scen.K)]
            E_D = [_t_mse(a_dl[l], neff.Hbar_D[l] @ F[l], U_D[l]) for l in range(scen.L)]
            W_U = [torch.linalg.solve(0.5 * (e + _th(e)),
                                      _teye(e.shape[-1]).expand_as(e)) for e in E_U]
            W_D = [torch.linalg.solve(0.5 * (e + _th(e)),
                                      _teye(e.shape[-1]).expand_as(e)) for e in E_D]
            a_p, a_f = _t_precoder_quadratics(neff, U_U, U_D, W_U, W_D, scen)
            for k in range(scen.K):
                set_taylor(a_ul, layer.X_uu[k], layer.Y_uu[k], layer.Z_uu[k], sc["uu"])
                set_taylor(E_U[k], layer.X_wu[k], layer.Y_wu[k], layer.Z_wu[k], sc["wu"])
            for l in range(scen.L):
                set_taylor(a_dl[l], layer.X_ud[l], layer.Y_ud[l], layer.Z_ud[l], sc["ud"])
                set_taylor(E_D[l], layer.X_wd[l], layer.Y_wd[l], layer.Z_wd[l], sc["wd"])
            # exact precoder update to advance the probe state; multipliers
            # seed the learnable shifts
            P_next, lam_mean = [], []
            for k in range(scen.K):
                rhs = scen.alpha[k] * (_th(neff.Hbar_U[k]) @ U_U[k] @ W_U[k])
                lam = _kkt_multiplier_t(a_p[k], rhs, 1.0)
                lam_mean.append(float(lam.mean()))
                eye = _teye(a_p[k].shape[-1])
                shifted = a_p[k] + lam.view(-1, 1, 1).to(_CDT) * eye
                set_taylor(shifted, layer.X_p[k], layer.Y_p[k], layer.Z_p[k], sc["p"])
                P_next.append(torch.linalg.solve(shifted, rhs))
            rhs_f = [scen.beta[l] * (_th(neff.Hbar_D[l]) @ U_D[l] @ W_D[l])
                     for l in range(scen.L)]
            stacked = torch.cat(rhs_f, dim=-1)
            mu = _kkt_multiplier_t(a_f, stacked, 1.0)
            eye = _teye(a_f.shape[-1])
            shifted = a_f + mu.view(-1, 1, 1).to(_CDT) * eye
            for l in range(scen.L):
                set_taylor(shifted, layer.X_f[l], layer.Y_f[l], layer.Z_f[l], sc["f"])
            solved = torch.linalg.solve(shifted, stacked)
            F_next = []
            off = 0
            for l in range(scen.L):
                w = rhs_f[l].shape[-1]
                F_next.append(solved[..., off:off + w])
                off += w
            layer.lam.copy_(torch.tensor(lam_mean, dtype=_RDT))
            layer.mu.copy_(torch.tensor(float(mu.mean()), dtype=_RDT))
            P, F = P_next, F_next
    return lpbn, sabn


# ---------------------------------------------------------------------------
# Batched torch mirrors of the CSI containers
# ---------------------------------------------------------------------------

class TorchCsi:
    """Full CSI stacked over a batch dimension as complex128 tensors."""

    def __init__(self, H_U, H_D, G_U, G_D, V_U, V_D, J, H_tilde):
        self.H_U, self.H_D, self.G_U, self.G_D = H_U, H_D, G_U, G_D
        self.V_U, self.V_D, self.J, self.H_tilde = V_U, V_D, J, H_tilde

    @classmethod
    def from_list(cls, samples: list[FullCsi]) -> "TorchCsi":
        def stack(mats) -> torch.Tensor:
            return torch.from_numpy(np.ascontiguousarray(np.stack(mats), dtype=np.complex128))

        K = len(samples[0].H_U)
        L = len(samples[0].H_D)
        return cls(
            H_U=[stack([s.H_U[k] for s in samples]) for k in range(K)],
            H_D=[stack([s.H_D[l] for s in samples]) for l in range(L)],
            G_U=[stack([s.G_U[k] for s in samples]) for k in range(K)],
            G_D=[stack([s.G_D[l] for s in samples]) for l in range(L)],
            V_U=stack([s.V_U for s in samples]),
            V_D=stack([s.V_D for s in samples]),
            J=[[stack([s.J[k][l] for s in samples]) for l in range(L)] for k in range(K)],
            H_tilde=stack([s.H_tilde for s in samples]),
        )

    def select(self, idx: np.ndarray) -> "TorchCsi":
        ix = torch.from_numpy(np.asarray(idx, dtype=np.int64))
        pick = lambda t: t.index_select(0, ix)
        return TorchCsi(
            H_U=[pick(t) for t in self.H_U], H_D=[pick(t) for t in self.H_D],
            G_U=[pick(t) for t in self.G_U], G_D=[pick(t) for t in self.G_D],
            V_U=pick(self.V_U), V_D=pick(self.V_D),
            J=[[pick(t) for t in row] for row in self.J],
            H_tilde=pick(self.H_tilde),
        )

    @property
    def batch(self) -> int:
        return self.V_U.shape[0]


class TorchEff:
    """Effective channels as batched tensors (graph-connected to theta)."""

    def __init__(self, Hbar_U, Hbar_D, Jbar, H_tilde):
        self.Hbar_U, self.Hbar_D, self.Jbar, self.H_tilde = Hbar_U, Hbar_D, Jbar, H_tilde

    @classmethod
    def from_numpy(cls, eff: EffectiveCsi) -> "TorchEff":
        one = lambda m: torch.from_numpy(
            np.ascontiguousarray(m, dtype=np.complex128)).unsqueeze(0)
        return cls(
            Hbar_U=[one(m) for m in eff.Hbar_U],
            Hbar_D=[one(m) for m in eff.Hbar_D],
            Jbar=[[one(m) for m in row] for row in eff.Jbar],
            H_tilde=one(eff.H_tilde),
        )


def lpbn_forward(tcsi: TorchCsi, theta: torch.Tensor) -> TorchEff:
    """Effective-channel map with the unit-modulus reflection e^{j theta}."""
    phi = torch.polar(torch.ones_like(theta), theta)
    K, L = len(tcsi.H_U), len(tcsi.H_D)
    Hbar_U = [tcsi.H_U[k] + tcsi.V_U @ (phi.unsqueeze(-1) * tcsi.G_U[k])
              for k in range(K)]
    Hbar_D = [tcsi.H_D[l] + (tcsi.G_D[l] * phi) @ tcsi.V_D for l in range(L)]
    Jbar = [[tcsi.J[k][l] + (tcsi.G_D[l] * phi) @ tcsi.G_U[k]
             for l in range(L)] for k in range(K)]
    return TorchEff(Hbar_U=Hbar_U, Hbar_D=Hbar_D, Jbar=Jbar, H_tilde=tcsi.H_tilde)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def canonical_init_beamformers(scen: ScenarioConfig) -> BeamformerSet:
    """Deterministic feasible starting point: leading-column precoders at
    full power, shared equally across DL users."""
    P = []
    for k in range(scen.K):
        e = np.eye(scen.M_U[k], scen.D_U[k])
        P.append(np.sqrt(scen.P_U[k] / scen.D_U[k]) * e.astype(complex))
    F = []
    for l in range(scen.L):
        e = np.eye(scen.Nt, scen.D_D[l])
        F.append(np.sqrt(scen.P_AP / (scen.L * scen.D_D[l])) * e.astype(complex))
    return BeamformerSet(P=P, F=F)


def _t_matched_filter_state(neff: TorchEff, scen: ScenarioConfig) -> tuple[list, list]:
    """Matched-filter starting point in the dimensionless system.

    Conjugate-transposed channel columns scaled onto unit budgets: cheap,
    fully differentiable (no factorization), and it starts the unrolled
    iterations close enough that a handful of updates nearly converge.
    """
    def cols(h: torch.Tensor, d: int, budget: float) -> torch.Tensor:
        x = _th(h)[..., :d]
        nrm = torch.sqrt((x.abs() ** 2).sum(dim=(-2, -1), keepdim=True))
        return math.sqrt(budget) * x / nrm.clamp_min(1e-150)

    P = [cols(neff.Hbar_U[k], scen.D_U[k], 1.0) for k in range(scen.K)]
    F = [cols(neff.Hbar_D[l], scen.D_D[l], 1.0 / scen.L) for l in range(scen.L)]
    return P, F


def _t_ul_cov(eff: TorchEff, P: list, F: list, scen: ScenarioConfig,
              noise_ul: float | None = None) -> torch.Tensor:
    b = eff.H_tilde.shape[0]
    noise = scen.noise_ul if noise_ul is None else noise_ul
    a = noise * _teye(scen.Nr).expand(b, -1, -1)
    for k in range(scen.K):
        hp = eff.Hbar_U[k] @ P[k]
        a = a + hp @ _th(hp)
    for l in range(scen.L):
        sf = eff.H_tilde @ F[l]
        a = a + sf @ _th(sf)
    return a


def _t_dl_cov(eff: TorchEff, P: list, F: list, scen: ScenarioConfig,
              l: int, noise_dl: float | None = None) -> torch.Tensor:
    b = eff.H_tilde.shape[0]
    noise = scen.noise_dl[l] if noise_dl is None else noise_dl
    a = noise * _teye(scen.M_D[l]).expand(b, -1, -1)
    for lp in range(scen.L):
        hf = eff.Hbar_D[l] @ F[lp]
        a = a + hf @ _th(hf)
    for k in range(scen.K):
        jp = eff.Jbar[k][l] @ P[k]
        a = a + jp @ _th(jp)
    return a


def _dimensionless(eff: TorchEff, scen: ScenarioConfig) -> TorchEff:
    """Rescale channels so noise variances and power budgets are all one.

    This is an exact reparameterization of the block updates (precoders in
    units of their budget square roots, receive sides whitened by noise):
    the iterates map bijectively onto the original ones and the rates are
    unchanged, but every layer quantity sits on a dimensionless scale, so
    a single SGD learning rate works across parameter families.
    """
    su = 1.0 / math.sqrt(scen.noise_ul)
    sd = [1.0 / math.sqrt(scen.noise_dl[l]) for l in range(scen.L)]
    pu = [math.sqrt(p) for p in scen.P_U]
    pf = math.sqrt(scen.P_AP)
    return TorchEff(
        Hbar_U=[eff.Hbar_U[k] * (su * pu[k]) for k in range(scen.K)],
        Hbar_D=[eff.Hbar_D[l] * (sd[l] * pf) for l in range(scen.L)],
        Jbar=[[eff.Jbar[k][l] * (sd[l] * pu[k]) for l in range(scen.L)]
              for k in range(scen.K)],
        H_tilde=eff.H_tilde * (su * pf),
    )


def _t_mse(a_cov: torch.Tensor, hx: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    d = hx.shape[-1]
    m = _th(u) @ hx
    return _teye(d) - m - _th(m) + _th(u) @ a_cov @ u


def _t_precoder_quadratics(eff: TorchEff, U_U, U_D, W_U, W_D,
                           scen: ScenarioConfig) -> tuple[list, torch.Tensor]:
    """A matrices of both precoder subproblems from the current filters."""
    uwu = None
    for kp in range(scen.K):
        term = scen.alpha[kp] * (U_U[kp] @ W_U[kp] @ _th(U_U[kp]))
        uwu = term if uwu is None else uwu + term
    a_p = []
    for k in range(scen.K):
        a = _th(eff.Hbar_U[k]) @ uwu @ eff.Hbar_U[k]
        for l in range(scen.L):
            ju = _th(eff.Jbar[k][l]) @ U_D[l]
            a = a + scen.beta[l] * (ju @ W_D[l] @ _th(ju))
        a_p.append(a)
    a_f = None
    for l in range(scen.L):
        hu = _th(eff.Hbar_D[l]) @ U_D[l]
        term = scen.beta[l] * (hu @ W_D[l] @ _th(hu))
        a_f = term if a_f is None else a_f + term
    for k in range(scen.K):
        su = _th(eff.H_tilde) @ U_U[k]
        a_f = a_f + scen.alpha[k] * (su @ W_U[k] @ _th(su))
    return a_p, a_f


def _scale_to_budget(mats: list[torch.Tensor], budgets: list[float],
                     joint: bool) -> list[torch.Tensor]:
    """Rescale precoders onto their budgets (per matrix, or jointly on the
    summed power). Exact-budget scaling; zero precoders pass through."""
    if joint:
        total = None
        for m in mats:
            p = (m.abs() ** 2).sum(dim=(-2, -1))
            total = p if total is None else total + p
        scale = torch.sqrt(budgets[0] / total.clamp_min(1e-300))
        scale = torch.where(total > 0, scale, torch.ones_like(scale))
        return [m * scale.view(-1, 1, 1) for m in mats]
    out = []
    for m, budget in zip(mats, budgets):
        p = (m.abs() ** 2).sum(dim=(-2, -1))
        scale = torch.sqrt(budget / p.clamp_min(1e-300))
        scale = torch.where(p > 0, scale, torch.ones_like(scale))
        out.append(m * scale.view(-1, 1, 1))
    return out


def _kkt_multiplier_t(a: torch.Tensor, rhs: torch.Tensor, budget: float,
                      steps: int = 100) -> torch.Tensor:
    """Per-sample multiplier for min Tr(X^H a X) - 2 Re Tr(X^H rhs) subject
    to a Frobenius power budget, by bracketed bisection on detached values."""
    with torch.no_grad():
        b = a.shape[0]
        n = a.shape[-1]
        eye = _teye(n)

        def power(lam: torch.Tensor) -> torch.Tensor:
            x = torch.linalg.solve(a + lam.view(-1, 1, 1) * eye, rhs)
            return (x.abs() ** 2).sum(dim=(-2, -1))

        zero = torch.zeros(b, dtype=_RDT)
        try:
            p0 = power(zero)
        except Exception:
            p0 = torch.full((b,), float("inf"), dtype=_RDT)
        over = p0 > budget * (1.0 + 1e-12)
        if not bool(over.any()):
            return zero
        hi = torch.ones(b, dtype=_RDT)
        for _ in range(80):
            p_hi = power(hi)
            grow = over & (p_hi > budget)
            if not bool(grow.any()):
                break
            hi = torch.where(grow, hi * 4.0, hi)
        lo = torch.zeros(b, dtype=_RDT)
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            p_mid = power(mid)
            go_up = p_mid > budget
            lo = torch.where(over & go_up, mid, lo)
            hi = torch.where(over & ~go_up, mid, hi)
        return torch.where(over, hi, zero)


class _ConstrainedSolve(torch.autograd.Function):
    """P = (A + lambda I)^{-1} R with lambda the KKT multiplier of the
    Frobenius power budget.

    The multiplier is found by bisection; the backward pass applies the
    implicit-function correction, so gradients are exact whether or not
    the constraint binds: with c(lambda) = ||P||^2 - budget, the adjoint
    of the solve gains a rank-one term along Y = M^{-1} P scaled by
    kappa = <Gbar, Y> / <P, Y> (real inner products).
    """

    @staticmethod
    def forward(ctx, a: torch.Tensor, rhs: torch.Tensor, budget: float) -> torch.Tensor:
        lam = _kkt_multiplier_t(a, rhs, budget)
        m = a + lam.view(-1, 1, 1).to(_CDT) * _teye(a.shape[-1])
        p = torch.linalg.solve(m, rhs)
        ctx.save_for_backward(m, p, lam)
        return p

    @staticmethod
    def backward(ctx, gbar: torch.Tensor):
        m, p, lam = ctx.saved_tensors
        gtil = torch.linalg.solve(m, gbar)
        y = torch.linalg.solve(m, p)
        s = (p.conj() * y).sum(dim=(-2, -1)).real
        kappa = (gbar.conj() * y).sum(dim=(-2, -1)).real / s.clamp_min(1e-300)
        kappa = torch.where(lam > 0, kappa, torch.zeros_like(kappa))
        grad_rhs = gtil - kappa.view(-1, 1, 1).to(_CDT) * y
        grad_a = -grad_rhs @ _th(p)
        return grad_a, grad_rhs, None


def constrained_solve(a: torch.Tensor, rhs: torch.Tensor,
                      budget: float) -> torch.Tensor:
    """Differentiable budget-constrained KKT solve (see _ConstrainedSolve)."""
    return _ConstrainedSolve.apply(a, rhs, budget)


def _exact_bcd_layer(eff: TorchEff, P: list, F: list, scen: ScenarioConfig,
                     noise_ul: float | None = None,
                     noise_dl: float | None = None,
                     p_budgets: list[float] | None = None,
                     f_budget: float | None = None) -> tuple[list, list]:
    """One exact block-coordinate iteration (true inverses, KKT multipliers
    via the implicit-gradient constrained solve)."""
    p_budgets = list(scen.P_U) if p_budgets is None else p_budgets
    f_budget = scen.P_AP if f_budget is None else f_budget
    a_ul = _t_ul_cov(eff, P, F, scen, noise_ul)
    U_U = [torch.linalg.solve(a_ul, eff.Hbar_U[k] @ P[k]) for k in range(scen.K)]
    U_D = []
    a_dl = []
    for l in range(scen.L):
        a = _t_dl_cov(eff, P, F, scen, l, noise_dl)
        a_dl.append(a)
        U_D.append(torch.linalg.solve(a, eff.Hbar_D[l] @ F[l]))
    W_U = []
    for k in range(scen.K):
        e = _t_mse(a_ul, eff.Hbar_U[k] @ P[k], U_U[k])
        e = 0.5 * (e + _th(e))
        W_U.append(torch.linalg.solve(e, _teye(e.shape[-1]).expand_as(e)))
    W_D = []
    for l in range(scen.L):
        e = _t_mse(a_dl[l], eff.Hbar_D[l] @ F[l], U_D[l])
        e = 0.5 * (e + _th(e))
        W_D.append(torch.linalg.solve(e, _teye(e.shape[-1]).expand_as(e)))
    a_p, a_f = _t_precoder_quadratics(eff, U_U, U_D, W_U, W_D, scen)
    P_out = []
    for k in range(scen.K):
        rhs = scen.alpha[k] * (_th(eff.Hbar_U[k]) @ U_U[k] @ W_U[k])
        P_out.append(constrained_solve(a_p[k], rhs, p_budgets[k]))
    rhs_f = [scen.beta[l] * (_th(eff.Hbar_D[l]) @ U_D[l] @ W_D[l])
             for l in range(scen.L)]
    stacked = torch.cat(rhs_f, dim=-1)
    solved = constrained_solve(a_f, stacked, f_budget)
    F_out = []
    off = 0
    for l in range(scen.L):
        w = rhs_f[l].shape[-1]
        F_out.append(solved[..., off:off + w])
        off += w
    return P_out, F_out


def sabn_forward_t(eff: TorchEff, params: SabnParams, scen: ScenarioConfig,
                   init: BeamformerSet | None = None) -> tuple[list, list]:
    """Unrolled forward pass returning batched precoder tensors.

    Runs on the dimensionless system (see _dimensionless), which is
    update-equivalent to the original but numerically balanced; outputs
    are mapped back to physical units at the end. The default starting
    point is the per-sample matched filter; an explicit init overrides it.
    """
    neff = _dimensionless(eff, scen)
    b = eff.H_tilde.shape[0]
    if init is None:
        P, F = _t_matched_filter_state(neff, scen)
    else:
        P = [torch.from_numpy(np.ascontiguousarray(
             init.P[k] / math.sqrt(scen.P_U[k]), dtype=np.complex128))
             .unsqueeze(0).expand(b, -1, -1) for k in range(scen.K)]
        F = [torch.from_numpy(np.ascontiguousarray(
             init.F[l] / math.sqrt(scen.P_AP), dtype=np.complex128))
             .unsqueeze(0).expand(b, -1, -1) for l in range(scen.L)]
    sc = params.scales
    for m, layer in enumerate(params.layers):
        a_ul = _t_ul_cov(neff, P, F, scen, noise_ul=1.0)
        U_U = []
        for k in range(scen.K):
            inv = _tinv_approx(a_ul, layer.X_uu[k], layer.Y_uu[k], layer.Z_uu[k],
                               f"layer {m} U_U[{k}]", sc["uu"])
            U_U.append(inv @ (neff.Hbar_U[k] @ P[k]) + layer.O_uu[k])
        a_dl = [_t_dl_cov(neff, P, F, scen, l, noise_dl=1.0) for l in range(scen.L)]
        U_D = []
        for l in range(scen.L):
            inv = _tinv_approx(a_dl[l], layer.X_ud[l], layer.Y_ud[l], layer.Z_ud[l],
                               f"layer {m} U_D[{l}]", sc["ud"])
            U_D.append(inv @ (neff.Hbar_D[l] @ F[l]) + layer.O_ud[l])
        # weight outputs are symmetrized: the exact weights are Hermitian,
        # and indefinite asymmetry here destabilizes the precoder quadratics
        W_U = []
        for k in range(scen.K):
            e = _t_mse(a_ul, neff.Hbar_U[k] @ P[k], U_U[k])
            w = _tinv_approx(e, layer.X_wu[k], layer.Y_wu[k], layer.Z_wu[k],
                             f"layer {m} W_U[{k}]", sc["wu"])
            W_U.append(0.5 * (w + _th(w)))
        W_D = []
        for l in range(scen.L):
            e = _t_mse(a_dl[l], neff.Hbar_D[l] @ F[l], U_D[l])
            w = _tinv_approx(e, layer.X_wd[l], layer.Y_wd[l], layer.Z_wd[l],
                             f"layer {m} W_D[{l}]", sc["wd"])
            W_D.append(0.5 * (w + _th(w)))
        a_p, a_f = _t_precoder_quadratics(neff, U_U, U_D, W_U, W_D, scen)
        P_new = []
        for k in range(scen.K):
            shifted = a_p[k] + layer.lam[k].to(_CDT) * _teye(a_p[k].shape[-1])
            inv = _tinv_approx(shifted, layer.X_p[k], layer.Y_p[k], layer.Z_p[k],
                               f"layer {m} P[{k}]", sc["p"])
            rhs = _th(neff.Hbar_U[k]) @ U_U[k] @ W_U[k]
            P_new.append(scen.alpha[k] * (inv @ rhs) + layer.O_p[k])
        F_new = []
        for l in range(scen.L):
            shifted = a_f + layer.mu.to(_CDT) * _teye(a_f.shape[-1])
            inv = _tinv_approx(shifted, layer.X_f[l], layer.Y_f[l], layer.Z_f[l],
                               f"layer {m} F[{l}]", sc["f"])
            rhs = _th(neff.Hbar_D[l]) @ U_D[l] @ W_D[l]
            F_new.append(scen.beta[l] * (inv @ rhs) + layer.O_f[l])
        P = _scale_to_budget(P_new, [1.0] * scen.K, joint=False)
        F = _scale_to_budget(F_new, [1.0], joint=True)
    P, F = _exact_bcd_layer(neff, P, F, scen, noise_ul=1.0, noise_dl=1.0,
                            p_budgets=[1.0] * scen.K, f_budget=1.0)
    P = [P[k] * math.sqrt(scen.P_U[k]) for k in range(scen.K)]
    F = [f * math.sqrt(scen.P_AP) for f in F]
    return P, F


def sabn_forward(eff: EffectiveCsi, params: SabnParams, scen: ScenarioConfig,
                 init: BeamformerSet | None = None) -> BeamformerSet:
    """Numpy-facing forward pass over a single effective-CSI realization."""
    teff = TorchEff.from_numpy(eff)
    with torch.no_grad():
        P, F = sabn_forward_t(teff, params, scen, init)
    return BeamformerSet(P=[p[0].numpy() for p in P], F=[f[0].numpy() for f in F])


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

def _t_rate(interference: torch.Tensor, hx: torch.Tensor) -> torch.Tensor:
    low = torch.linalg.cholesky(0.5 * (interference + _th(interference)))
    s = torch.linalg.solve_triangular(low, hx, upper=False)
    d = hx.shape[-1]
    gram = _teye(d) + _th(s) @ s
    return torch.linalg.slogdet(gram)[1] / LN2


def sum_rate_t(eff: TorchEff, P: list, F: list,
               scen: ScenarioConfig) -> torch.Tensor:
    """Batched weighted sum-rate (bits/s/Hz) in the autograd graph."""
    b = eff.H_tilde.shape[0]
    total = torch.zeros(b, dtype=_RDT)
    for k in range(scen.K):
        a = scen.noise_ul * _teye(scen.Nr).expand(b, -1, -1)
        for kp in range(scen.K):
            if kp == k:
                continue
            hp = eff.Hbar_U[kp] @ P[kp]
            a = a + hp @ _th(hp)
        for l in range(scen.L):
            sf = eff.H_tilde @ F[l]
            a = a + sf @ _th(sf)
        total = total + scen.alpha[k] * _t_rate(a, eff.Hbar_U[k] @ P[k])
    for l in range(scen.L):
        a = scen.noise_dl[l] * _teye(scen.M_D[l]).expand(b, -1, -1)
        for lp in range(scen.L):
            if lp == l:
                continue
            hf = eff.Hbar_D[l] @ F[lp]
            a = a + hf @ _th(hf)
        for k in range(scen.K):
            jp = eff.Jbar[k][l] @ P[k]
            a = a + jp @ _th(jp)
        total = total + scen.beta[l] * _t_rate(a, eff.Hbar_D[l] @ F[l])
    return total


def loss_t(lpbn: LpbnParams, sabn: SabnParams, tcsi: TorchCsi,
           scen: ScenarioConfig, init: BeamformerSet | None = None) -> torch.Tensor:
    """Negated batch-mean weighted sum-rate (the training objective)."""
    eff = lpbn_forward(tcsi, lpbn.theta)
    P, F = sabn_forward_t(eff, sabn, scen, init)
    return -sum_rate_t(eff, P, F, scen).mean()


def loss(lpbn: LpbnParams, sabn: SabnParams, csi_batch: list[FullCsi],
         scen: ScenarioConfig) -> float:
    with torch.no_grad():
        return float(loss_t(lpbn, sabn, TorchCsi.from_list(csi_batch), scen))


def _zero_grads(lpbn: LpbnParams, sabn: SabnParams) -> None:
    for t in [lpbn.theta, *sabn.parameters()]:
        if t.grad is not None:
            t.grad = None


def backward(lpbn: LpbnParams, sabn: SabnParams, csi_batch: list[FullCsi],
             scen: ScenarioConfig) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """Loss and exact reverse-mode gradients for every learnable parameter.

    Complex parameters follow the real-composite convention: the real and
    imaginary parts of the returned arrays are the partial derivatives with
    respect to the corresponding real and imaginary parameter components.
    """
    _zero_grads(lpbn, sabn)
    value = loss_t(lpbn, sabn, TorchCsi.from_list(csi_batch), scen)
    value.backward()
    if not torch.isfinite(value):
        raise NumericalError("non-finite training loss")
    grads = {name: t.grad.detach().numpy().copy() if t.grad is not None
             else np.zeros(t.shape, dtype=t.detach().numpy().dtype)
             for name, t in sabn.named_parameters()}
    theta_grad = lpbn.theta.grad.detach().numpy().copy()
    return float(value.detach()), theta_grad, grads


def theta_gradient_frozen(lpbn: LpbnParams, sabn: SabnParams, csi: FullCsi,
                          scen: ScenarioConfig) -> np.ndarray:
    """d (sum-rate) / d theta with the network's output beamformers frozen.

    This is the component of the full loss gradient that survives when the
    short-term network is treated as a constant map; it coincides with the
    long-term optimizer's per-sample gradient evaluated at the network
    output.
    """
    tcsi = TorchCsi.from_list([csi])
    with torch.no_grad():
        eff = lpbn_forward(tcsi, lpbn.theta)
        P, F = sabn_forward_t(eff, sabn, scen)
    theta = lpbn.theta.detach().clone().requires_grad_(True)
    eff2 = lpbn_forward(tcsi, theta)
    rate = sum_rate_t(eff2, [p.detach() for p in P], [f.detach() for f in F], scen)
    rate.sum().backward()
    return theta.grad.detach().numpy().copy()


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(pool: list[FullCsi], scen: ScenarioConfig, cfg: TrainConfig,
          layers: int = 8, holdout: list[FullCsi] | None = None
          ) -> tuple[LpbnParams, SabnParams, TrainTrace]:
    """Plain-SGD training of the unrolled network on a full-CSI pool.

    The phases update by SGD or by the stochastic-surrogate recursion
    (cfg.theta_mode); multipliers are projected back to >= 0 after every
    step. Raises NumericalError with the trace attached if the loss goes
    non-finite.
    """
    if not pool:
        raise ValueError("training pool must be non-empty")
    torch.set_num_threads(1)
    rng = np.random.default_rng(cfg.seed)
    probe = pool[: min(8, len(pool))]
    if cfg.init_mode == "taylor":
        lpbn, sabn = taylor_init_params(scen, layers, rng, probe)
    else:
        lpbn, sabn = init_params(scen, layers, rng, probe=probe)
    if cfg.grad_check:
        _spot_grad_check(lpbn, sabn, pool[: min(2, len(pool))], scen)
    tpool = TorchCsi.from_list(pool)
    thold = TorchCsi.from_list(holdout) if holdout else None
    trace = TrainTrace()
    ssca_cfg = SscaConfig()
    f_run = np.zeros(scen.T)
    warm: dict[int, object] = {}
    n = len(pool)
    steps_per_epoch = max(1, n // cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    best_rate = -np.inf
    best_state: dict | None = None
    step = 0

    def snapshot() -> dict:
        state = {name: t.detach().clone() for name, t in sabn.named_parameters()}
        state["theta"] = lpbn.theta.detach().clone()
        return state

    def holdout_rate() -> float:
        if thold is None:
            return float("nan")
        try:
            with torch.no_grad():
                eff = lpbn_forward(thold, lpbn.theta)
                P, F = sabn_forward_t(eff, sabn, scen)
                return float(sum_rate_t(eff, P, F, scen).mean())
        except (torch.linalg.LinAlgError, NumericalError):
            return float("-inf")

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n - cfg.batch + 1, cfg.batch):
            idx = order[start:start + cfg.batch]
            _zero_grads(lpbn, sabn)
            try:
                value = loss_t(lpbn, sabn, tpool.select(idx), scen)
            except torch.linalg.LinAlgError as exc:
                raise NumericalError(f"training diverged at step {step}: {exc}",
                                     trace) from exc
            if not torch.isfinite(value):
                raise NumericalError(f"training diverged at step {step}", trace)
            value.backward()
            lr = cfg.lr
            if step >= int(0.85 * total_steps):
                lr *= cfg.lr_decay * cfg.lr_decay
            elif step >= int(0.60 * total_steps):
                lr *= cfg.lr_decay

            def clipped(g: torch.Tensor) -> torch.Tensor:
                if cfg.grad_clip <= 0:
                    return g
                norm = g.norm()
                if norm > cfg.grad_clip:
                    return g * (cfg.grad_clip / norm)
                return g

            with torch.no_grad():
                for _, t in sabn.named_parameters():
                    if t.grad is not None:
                        t.sub_(lr * clipped(t.grad))
                for layer in sabn.layers:
                    layer.lam.clamp_(min=0.0)
                    layer.mu.clamp_(min=0.0)
                tgrad = lpbn.theta.grad
                if cfg.theta_mode == "sgd":
                    # full loss gradient through the network
                    if tgrad is not None:
                        lpbn.theta.sub_(lr * clipped(tgrad))
                else:
                    # stochastic-surrogate recursion: the per-sample phase
                    # gradients are taken at the short-term optimum, exactly
                    # as in the long-term optimizer
                    from .channels import effective_channels
                    from .ssca import sample_gradient
                    from .wmmse import BcdConfig, run_bcd
                    theta_np = lpbn.theta.numpy().copy()
                    inner = BcdConfig(max_iters=40)
                    grads = []
                    for i in idx:
                        i = int(i)
                        eff_i = effective_channels(pool[i], theta_np)
                        bf_i, _, _ = run_bcd(eff_i, scen, inner,
                                             init=warm.get(i),
                                             rng=np.random.default_rng(cfg.seed))
                        warm[i] = bf_i
                        grads.append(-sample_gradient(theta_np, pool[i], bf_i, scen))
                    rho, gamma = step_schedules(step, ssca_cfg)
                    f_run = (1.0 - rho) * f_run + rho * np.sum(grads, axis=0)
                    target = theta_np - f_run / (2.0 * ssca_cfg.curvature)
                    mixed = (1.0 - gamma) * theta_np + gamma * target
                    lpbn.theta.copy_(torch.from_numpy(mixed))
            if step % cfg.eval_every == 0 or step == total_steps - 1:
                hr = holdout_rate()
                trace.step.append(step)
                trace.loss.append(float(value.detach()))
                trace.holdout_rate.append(hr)
                if cfg.keep_best and thold is not None and hr > best_rate:
                    best_rate = hr
                    best_state = snapshot()
            step += 1
    if best_state is not None:
        with torch.no_grad():
            lpbn.theta.copy_(best_state["theta"])
            for name, t in sabn.named_parameters():
                t.copy_(best_state[name])
    return lpbn, sabn, trace


def _spot_grad_check(lpbn: LpbnParams, sabn: SabnParams, batch: list[FullCsi],
                     scen: ScenarioConfig, h: float = 1e-5, tol: float = 1e-3) -> None:
    """Cheap finite-difference spot check of a few phase coordinates."""
    _, theta_grad, _ = backward(lpbn, sabn, batch, scen)
    tcsi = TorchCsi.from_list(batch)
    for i in range(min(3, scen.T)):
        with torch.no_grad():
            base = lpbn.theta[i].item()
            lpbn.theta[i] = base + h
            up = float(loss_t(lpbn, sabn, tcsi, scen))
            lpbn.theta[i] = base - h
            dn = float(loss_t(lpbn, sabn, tcsi, scen))
            lpbn.theta[i] = base
        fd = (up - dn) / (2 * h)
        if abs(fd - theta_grad[i]) > tol * (abs(fd) + abs(theta_grad[i]) + 1e-8):
            raise NumericalError(
                f"gradient spot check failed at theta[{i}]: ad={theta_grad[i]:.3e} fd={fd:.3e}")


def network_beamformers(csi: FullCsi, lpbn: LpbnParams, sabn: SabnParams,
                        scen: ScenarioConfig,
                        theta_override: np.ndarray | None = None
                        ) -> tuple[np.ndarray, BeamformerSet]:
    """Deployment helper: effective channels at the learned (or overridden)
    phases, one forward pass, numpy outputs."""
    from .channels import effective_channels
    theta = lpbn.theta_numpy() if theta_override is None else theta_override
    eff = effective_channels(csi, theta)
    return theta, sabn_forward(eff, sabn, scen)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_VERSION = 1


def save_checkpoint(path: str | Path, lpbn: LpbnParams, sabn: SabnParams,
                    scen: ScenarioConfig) -> None:
    """Versioned npz checkpoint: header fields, dimensions, raw arrays."""
    arrays: dict[str, np.ndarray] = {
        "__version__": np.array(_CKPT_VERSION),
        "__layers__": np.array(len(sabn.layers)),
        "__dims__": np.array([scen.K, scen.L, scen.Nt, scen.Nr, scen.T]),
        "__m_u__": np.array(scen.M_U), "__m_d__": np.array(scen.M_D),
        "__d_u__": np.array(scen.D_U), "__d_d__": np.array(scen.D_D),
        "__scales__": np.array([sabn.scales[k] for k in sorted(sabn.scales)]),
        "theta": lpbn.theta_numpy(),
    }
    for name, t in sabn.named_parameters():
        arrays[name] = t.detach().numpy().copy()
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path,
                    scen: ScenarioConfig) -> tuple[LpbnParams, SabnParams]:
    """Load a checkpoint and validate it against the scenario dimensions."""
    data = np.load(path)
    if int(data["__version__"]) != _CKPT_VERSION:
        raise ValueError("unsupported checkpoint version")
    dims = data["__dims__"]
    if tuple(dims) != (scen.K, scen.L, scen.Nt, scen.Nr, scen.T):
        raise ValueError("checkpoint dimensions do not match the scenario")
    layers = int(data["__layers__"])
    lpbn, sabn = init_params(scen, layers, np.random.default_rng(0))
    sabn.scales = dict(zip(sorted(sabn.scales), (float(v) for v in data["__scales__"])))
    with torch.no_grad():
        lpbn.theta.copy_(torch.from_numpy(np.asarray(data["theta"], dtype=np.float64)))
        for name, t in sabn.named_parameters():
            t.copy_(torch.from_numpy(np.asarray(data[name])))
    return lpbn, sabn


# ---------------------------------------------------------------------------
# Identity-init layer vs exact update oracle (numpy; used by validation)
# ---------------------------------------------------------------------------

def row_dominance(a: np.ndarray) -> float:
    """min over rows of |diagonal| / (sum of off-diagonal magnitudes)."""
    diag = np.abs(np.diag(a))
    off = np.sum(np.abs(a), axis=1) - diag
    return float(np.min(diag / np.maximum(off, 1e-300)))


def layer_vs_exact_errors(eff: EffectiveCsi, bf: BeamformerSet,
                          scen: ScenarioConfig) -> tuple[dict[str, float], float]:
    """Relative Frobenius error of the identity-init surrogate update
    against the exact block update, per variable family, from one state;
    also returns the weakest row dominance among the matrices the
    reciprocal-diagonal surrogate is applied to.

    The precoder comparison is made at the exact update's multipliers so
    the number isolates the inverse approximation.
    """
    from .rates import dl_covariance, mse_matrix_dl, mse_matrix_ul, ul_covariance
    from .rates import WmmseAux
    from .wmmse import (BcdConfig, dl_precoder_quadratic, update_dl_precoders,
                        update_receivers, update_ul_precoders, update_weights)

    def rel(approx: np.ndarray, exact: np.ndarray) -> float:
        return float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-300))

    cfg = BcdConfig()
    dominances = []
    a_ul = ul_covariance(eff, bf, scen)
    dominances.append(row_dominance(a_ul))
    errs: dict[str, list[float]] = {"U": [], "W": [], "PF": []}
    U_U, U_D = update_receivers(eff, bf, scen)
    for k in range(scen.K):
        approx = dagger(a_ul) @ (eff.Hbar_U[k] @ bf.P[k])
        errs["U"].append(rel(approx, U_U[k]))
    a_dl = [dl_covariance(eff, bf, scen, l) for l in range(scen.L)]
    for l in range(scen.L):
        dominances.append(row_dominance(a_dl[l]))
        approx = dagger(a_dl[l]) @ (eff.Hbar_D[l] @ bf.F[l])
        errs["U"].append(rel(approx, U_D[l]))
    aux = WmmseAux(U_U=U_U, U_D=U_D, W_U=[], W_D=[])
    E_U = [mse_matrix_ul(eff, bf, aux, scen, k) for k in range(scen.K)]
    E_D = [mse_matrix_dl(eff, bf, aux, scen, l) for l in range(scen.L)]
    aux.W_U, aux.W_D = update_weights(E_U, E_D)
    for e, w in [*zip(E_U, aux.W_U), *zip(E_D, aux.W_D)]:
        dominances.append(row_dominance(e))
        errs["W"].append(rel(dagger(e), w))
    P_exact, lambdas = update_ul_precoders(eff, aux, scen, cfg)
    uwu = np.zeros((scen.Nr, scen.Nr), dtype=complex)
    for kp in range(scen.K):
        uwu += scen.alpha[kp] * aux.U_U[kp] @ aux.W_U[kp] @ herm(aux.U_U[kp])
    for k in range(scen.K):
        a = herm(eff.Hbar_U[k]) @ uwu @ eff.Hbar_U[k]
        for l in range(scen.L):
            ju = herm(eff.Jbar[k][l]) @ aux.U_D[l]
            a = a + scen.beta[l] * ju @ aux.W_D[l] @ herm(ju)
        a = hermitize(a) + lambdas[k] * np.eye(scen.M_U[k])
        dominances.append(row_dominance(a))
        rhs = scen.alpha[k] * herm(eff.Hbar_U[k]) @ aux.U_U[k] @ aux.W_U[k]
        errs["PF"].append(rel(dagger(a) @ rhs, P_exact[k]))
    F_exact, mu = update_dl_precoders(eff, aux, scen, cfg)
    a_f = dl_precoder_quadratic(eff, aux, scen) + mu * np.eye(scen.Nt)
    dominances.append(row_dominance(a_f))
    for l in range(scen.L):
        rhs = scen.beta[l] * herm(eff.Hbar_D[l]) @ aux.U_D[l] @ aux.W_D[l]
        errs["PF"].append(rel(dagger(a_f) @ rhs, F_exact[l]))
    return {fam: max(v) for fam, v in errs.items()}, min(dominances)
