import numpy as np
import pytest

from irsfd.channels import effective_channels, sample_full_csi
from irsfd.scenario import ScenarioConfig, desk_scenario, unit_scenario
from irsfd.wmmse import run_bcd


@pytest.fixture(scope="session")
def desk():
    return desk_scenario()


@pytest.fixture(scope="session")
def unit():
    return unit_scenario()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def scalar_scenario(K: int = 1, L: int = 1) -> ScenarioConfig:
    """All-scalar system (one antenna everywhere) for hand-checked cases."""
    return unit_scenario(N=1, M=1, D=1, T=1, K=K, L=L,
                         noise_ul=1.0, noise_dl=(1.0,) * L,
                         P_U=(100.0,) * K, P_AP=100.0)


@pytest.fixture(scope="session")
def solved_unit_instance(unit):
    """One unit-scale instance solved to convergence (shared by read-only tests)."""
    r = np.random.default_rng(7)
    csi = sample_full_csi(unit, r)
    theta = r.uniform(0, 2 * np.pi, unit.T)
    eff = effective_channels(csi, theta)
    bf, aux, trace = run_bcd(eff, unit, rng=r)
    return {"csi": csi, "theta": theta, "eff": eff, "bf": bf, "aux": aux,
            "trace": trace}
