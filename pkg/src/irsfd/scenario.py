"""Scenario description: network geometry, fading statistics, powers, weights.

A scenario holds everything the channel sampler and the optimizers need.
All stored values are linear (watts / linear gains); the INI config format
uses dB / dBm, matching how link budgets are usually quoted.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def db2lin(x: float) -> float:
    """dB -> linear power ratio."""
    return 10.0 ** (x / 10.0)


def lin2db(x: float) -> float:
    return 10.0 * np.log10(x)


def dbm2watt(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watt2dbm(x: float) -> float:
    return 10.0 * np.log10(x) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Static description of one IRS-assisted full-duplex cell.

    Antenna/stream counts are per user; powers, noise variances, reference
    gain and Rician factors are linear. Positions are 3-D metres.
    """

    K: int
    L: int
    Nt: int
    Nr: int
    M_U: tuple[int, ...]
    M_D: tuple[int, ...]
    D_U: tuple[int, ...]
    D_D: tuple[int, ...]
    T: int
    pos_ap: tuple[float, float, float]
    pos_irs: tuple[float, float, float]
    pos_ul: tuple[tuple[float, float, float], ...]
    pos_dl: tuple[tuple[float, float, float], ...]
    # path loss exponents: AP-IRS, AP-user, IRS-user, user-user
    a_ai: float = 2.4
    a_au: float = 3.8
    a_iu: float = 2.2
    a_uu: float = 3.0
    # Rician factors (linear)
    b_ai: float = db2lin(3.0)
    b_au: float = db2lin(-3.0)
    b_iu: float = db2lin(3.0)
    b_uu: float = db2lin(0.0)
    C0: float = db2lin(-30.0)
    D0: float = 1.0
    noise_ul: float = dbm2watt(-76.0)
    noise_dl: tuple[float, ...] = ()
    sigma_si: float = db2lin(-60.0)
    P_U: tuple[float, ...] = ()
    P_AP: float = dbm2watt(44.0)
    alpha: tuple[float, ...] = ()
    beta: tuple[float, ...] = ()
    doppler_hz: float = 200.0

    def __post_init__(self) -> None:
        if min(self.K, self.L, self.Nt, self.Nr, self.T) < 1:
            raise ValueError("K, L, Nt, Nr, T must all be >= 1")
        for name, per_user, n in (("M_U", self.M_U, self.K), ("M_D", self.M_D, self.L),
                                  ("D_U", self.D_U, self.K), ("D_D", self.D_D, self.L)):
            if len(per_user) != n:
                raise ValueError(f"{name} must have one entry per user")
        for k in range(self.K):
            if not 1 <= self.D_U[k] <= self.M_U[k]:
                raise ValueError("stream count D_U[k] must satisfy 1 <= D_U <= M_U")
        for l in range(self.L):
            if not 1 <= self.D_D[l] <= self.M_D[l]:
                raise ValueError("stream count D_D[l] must satisfy 1 <= D_D <= M_D")
        if len(self.pos_ul) != self.K or len(self.pos_dl) != self.L:
            raise ValueError("user position lists must match K and L")
        if len(self.noise_dl) != self.L or len(self.P_U) != self.K:
            raise ValueError("noise_dl must have L entries and P_U must have K entries")
        if len(self.alpha) != self.K or len(self.beta) != self.L:
            raise ValueError("alpha must have K entries and beta must have L entries")
        positives = [self.C0, self.D0, self.noise_ul, self.sigma_si, self.P_AP,
                     *self.noise_dl, *self.P_U, *self.alpha, *self.beta]
        if any(v <= 0 for v in positives):
            raise ValueError("powers, variances and weights must be strictly positive")
        if min(self.b_ai, self.b_au, self.b_iu, self.b_uu) < 0:
            raise ValueError("Rician factors must be non-negative")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _square_corner_positions(K: int, L: int) -> tuple[tuple, tuple]:
    """Users on the corners of a 20 m square centred at (0, 80, 0).

    UL users take the near corners (y = 70), DL users the far corners
    (y = 90); extra users beyond two per side are shifted inward in x.
    """
    near = [(-10.0, 70.0, 0.0), (10.0, 70.0, 0.0)]
    far = [(-10.0, 90.0, 0.0), (10.0, 90.0, 0.0)]

    def assign(corners: list, n: int) -> tuple:
        out = []
        for i in range(n):
            base = np.asarray(corners[i % 2], dtype=float)
            shift = np.array([2.0 * (i // 2) * (1 if base[0] < 0 else -1), 0.0, 0.0])
            out.append(tuple(base + shift))
        return tuple(out)

    return assign(near, K), assign(far, L)


def _build(N: int, M: int, D: int, T: int, K: int = 2, L: int = 2, **overrides) -> ScenarioConfig:
    pos_ul, pos_dl = _square_corner_positions(K, L)
    base = dict(
        K=K, L=L, Nt=N, Nr=N,
        M_U=(M,) * K, M_D=(M,) * L, D_U=(D,) * K, D_D=(D,) * L, T=T,
        pos_ap=(0.0, 0.0, 0.0), pos_irs=(0.0, 80.0, 3.0),
        pos_ul=pos_ul, pos_dl=pos_dl,
        noise_dl=(dbm2watt(-76.0),) * L,
        P_U=(dbm2watt(24.0),) * K,
        alpha=(1.0,) * K, beta=(1.0,) * L,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def paper_scenario(N: int = 32, M: int = 4, D: int = 4, T: int = 200,
                   K: int = 2, L: int = 2, **overrides) -> ScenarioConfig:
    """Full-scale default setup: N = 32, M = D = 4, T = 200, K = L = 2."""
    return _build(N=N, M=M, D=D, T=T, K=K, L=L, **overrides)


def desk_scenario(N: int = 8, M: int = 2, D: int = 2, T: int = 16,
                  K: int = 2, L: int = 2, **overrides) -> ScenarioConfig:
    """Scaled-down setup used by the test-suite: N = 8, M = D = 2, T = 16."""
    return _build(N=N, M=M, D=D, T=T, K=K, L=L, **overrides)


def unit_scenario(N: int = 8, M: int = 2, D: int = 2, T: int = 16,
                  K: int = 2, L: int = 2, **overrides) -> ScenarioConfig:
    """Normalized instance family for numerical validation.

    Unit noise power, metre-scale geometry and moderate link budgets keep
    every covariance well conditioned, which is what finite-difference
    oracles and fixed-iteration convergence checks need. Physically it is
    a miniature cell; the channel and optimizer code paths are identical
    to the full-scale scenarios.
    """
    pos_ul = tuple((1.5 * (-1) ** k - 0.3 * (k // 2), 2.0, 0.0) for k in range(K))
    pos_dl = tuple((1.5 * (-1) ** l - 0.3 * (l // 2), 6.0, 0.0) for l in range(L))
    base = dict(
        K=K, L=L, Nt=N, Nr=N,
        M_U=(M,) * K, M_D=(M,) * L, D_U=(D,) * K, D_D=(D,) * L, T=T,
        pos_ap=(0.0, 0.0, 0.0), pos_irs=(0.0, 3.0, 1.0),
        pos_ul=pos_ul, pos_dl=pos_dl,
        a_ai=2.0, a_au=2.0, a_iu=2.0, a_uu=2.0,
        b_ai=1.0, b_au=1.0, b_iu=1.0, b_uu=1.0,
        C0=1.0, D0=1.0,
        noise_ul=1.0, noise_dl=(1.0,) * L,
        sigma_si=0.1,
        P_U=(5.0,) * K, P_AP=10.0,
        alpha=(1.0,) * K, beta=(1.0,) * L,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


# ---------------------------------------------------------------------------
# INI config file I/O
# ---------------------------------------------------------------------------

def _fmt_seq(values) -> str:
    return ", ".join(f"{v:g}" for v in values)


def _fmt_points(points) -> str:
    return "; ".join(" ".join(f"{c:g}" for c in p) for p in points)


def _to_configparser(scen: ScenarioConfig) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp["system"] = {
        "k": str(scen.K), "l": str(scen.L),
        "nt": str(scen.Nt), "nr": str(scen.Nr),
        "m_u": _fmt_seq(scen.M_U), "m_d": _fmt_seq(scen.M_D),
        "d_u": _fmt_seq(scen.D_U), "d_d": _fmt_seq(scen.D_D),
        "t": str(scen.T),
    }
    cp["geometry"] = {
        "ap": " ".join(f"{c:g}" for c in scen.pos_ap),
        "irs": " ".join(f"{c:g}" for c in scen.pos_irs),
        "ul_users": _fmt_points(scen.pos_ul),
        "dl_users": _fmt_points(scen.pos_dl),
    }
    cp["pathloss"] = {
        "c0_db": f"{lin2db(scen.C0):g}", "d0_m": f"{scen.D0:g}",
        "exp_ap_irs": f"{scen.a_ai:g}", "exp_ap_user": f"{scen.a_au:g}",
        "exp_irs_user": f"{scen.a_iu:g}", "exp_user_user": f"{scen.a_uu:g}",
    }
    cp["rician"] = {
        "ap_irs_db": f"{lin2db(scen.b_ai):g}", "ap_user_db": f"{lin2db(scen.b_au):g}",
        "irs_user_db": f"{lin2db(scen.b_iu):g}", "user_user_db": f"{lin2db(scen.b_uu):g}",
    }
    cp["power"] = {
        "noise_ul_dbm": f"{watt2dbm(scen.noise_ul):g}",
        "noise_dl_dbm": _fmt_seq(watt2dbm(v) for v in scen.noise_dl),
        "si_db": f"{lin2db(scen.sigma_si):g}",
        "p_ul_dbm": _fmt_seq(watt2dbm(v) for v in scen.P_U),
        "p_ap_dbm": f"{watt2dbm(scen.P_AP):g}",
    }
    cp["weights"] = {"alpha": _fmt_seq(scen.alpha), "beta": _fmt_seq(scen.beta)}
    cp["fading"] = {"doppler_hz": f"{scen.doppler_hz:g}"}
    return cp


def save_scenario(scen: ScenarioConfig, path: str | Path) -> None:
    """Write a scenario as an INI file (dB/dBm units, documented in README)."""
    with open(path, "w") as fh:
        _to_configparser(scen).write(fh)


def default_config_text(scen: ScenarioConfig | None = None) -> str:
    """The shipped defaults (or a given scenario) as INI text."""
    buf = io.StringIO()
    _to_configparser(scen or paper_scenario()).write(buf)
    return buf.getvalue()


def _parse_seq(text: str, cast=float) -> tuple:
    return tuple(cast(tok) for tok in text.replace(",", " ").split())


def _parse_points(text: str) -> tuple:
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk:
            pts.append(tuple(float(tok) for tok in chunk.replace(",", " ").split()))
    return tuple(pts)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse an INI scenario file into a ScenarioConfig."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    sys_ = cp["system"]
    geo = cp["geometry"]
    pl = cp["pathloss"]
    ric = cp["rician"]
    pw = cp["power"]
    wt = cp["weights"]
    K = sys_.getint("k")
    L = sys_.getint("l")
    return ScenarioConfig(
        K=K, L=L, Nt=sys_.getint("nt"), Nr=sys_.getint("nr"),
        M_U=_parse_seq(sys_["m_u"], int), M_D=_parse_seq(sys_["m_d"], int),
        D_U=_parse_seq(sys_["d_u"], int), D_D=_parse_seq(sys_["d_d"], int),
        T=sys_.getint("t"),
        pos_ap=tuple(float(t) for t in geo["ap"].replace(",", " ").split()),
        pos_irs=tuple(float(t) for t in geo["irs"].replace(",", " ").split()),
        pos_ul=_parse_points(geo["ul_users"]),
        pos_dl=_parse_points(geo["dl_users"]),
        a_ai=pl.getfloat("exp_ap_irs"), a_au=pl.getfloat("exp_ap_user"),
        a_iu=pl.getfloat("exp_irs_user"), a_uu=pl.getfloat("exp_user_user"),
        b_ai=db2lin(ric.getfloat("ap_irs_db")), b_au=db2lin(ric.getfloat("ap_user_db")),
        b_iu=db2lin(ric.getfloat("irs_user_db")), b_uu=db2lin(ric.getfloat("user_user_db")),
        C0=db2lin(pl.getfloat("c0_db")), D0=pl.getfloat("d0_m"),
        noise_ul=dbm2watt(pw.getfloat("noise_ul_dbm")),
        noise_dl=tuple(dbm2watt(v) for v in _parse_seq(pw["noise_dl_dbm"])),
        sigma_si=db2lin(pw.getfloat("si_db")),
        P_U=tuple(dbm2watt(v) for v in _parse_seq(pw["p_ul_dbm"])),
        P_AP=dbm2watt(pw.getfloat("p_ap_dbm")),
        alpha=_parse_seq(wt["alpha"]), beta=_parse_seq(wt["beta"]),
        doppler_hz=cp.getfloat("fading", "doppler_hz", fallback=200.0),
    )
