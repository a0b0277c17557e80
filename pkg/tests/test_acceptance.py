"""Acceptance suite: one test per criterion, each printing a PASS line.

Conventions:
- numerical validation criteria (1-4, 6) run on the normalized unit-scale
  instance family, where finite differences and fixed iteration budgets
  are numerically meaningful;
- scheme-level criteria (5, 7, 9-11) run on the physically-scaled desk
  scenario (N=8, K=L=2, M=2, D=2, T=16 with the full-scale powers).

Heavy artifacts (solved instances, phase optimizations, the trained
network) are session fixtures shared across criteria.
"""
import csv
import time

import numpy as np
import pytest
import torch

from irsfd import unfolding as uf
from irsfd.channels import effective_channels, quantize_phases, sample_full_csi
from irsfd.harness import (Degrade, ExperimentSpec, baseline_hd,
                           baseline_no_irs, baseline_random_irs, make_rng,
                           run_experiment, scheme_full_csi, scheme_ssca,
                           scheme_unfolding)
from irsfd.numdiff import grad_check
from irsfd.overhead import OverheadParams, csi_overhead
from irsfd.rates import mmse_rate_duality_gap, rate_breakdown, sum_rate, weighted_sum_rate
from irsfd.scenario import desk_scenario, unit_scenario
from irsfd.ssca import SscaConfig, run_ssca, sample_gradient
from irsfd.wmmse import (BcdConfig, _kkt_precoder, random_beamformers, run_bcd,
                         update_dl_precoders, update_ul_precoders)

N_INSTANCES = 50
N_SEEDS = 20
DESK = desk_scenario()
UNIT = unit_scenario()


def _report(num: int, passed: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {num:02d} {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, detail


# ---------------------------------------------------------------------------
# shared heavy fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def bcd_batch():
    """Criterion 1-3 workload: 50 random unit-scale instances solved."""
    out = []
    start = time.perf_counter()
    for seed in range(N_INSTANCES):
        r = np.random.default_rng(seed)
        csi = sample_full_csi(UNIT, r)
        theta = r.uniform(0, 2 * np.pi, UNIT.T)
        eff = effective_channels(csi, theta)
        bf, aux, trace = run_bcd(eff, UNIT, BcdConfig(), rng=r)
        out.append({"eff": eff, "bf": bf, "aux": aux, "trace": trace})
    return {"instances": out, "elapsed": time.perf_counter() - start}


@pytest.fixture(scope="session")
def ssca_runs():
    """Criterion 5/9 workload: per-seed phase optimization on the desk
    scenario plus paired held-out references."""
    runs = {}
    inner = BcdConfig(max_iters=30, tol=1e-3)
    for seed in range(N_SEEDS):
        pool = [sample_full_csi(DESK, make_rng(seed, 1)) for _ in range(30)]
        theta, trace = run_ssca(pool, DESK, SscaConfig(max_iters=260),
                                inner, make_rng(seed, 3))
        runs[seed] = {"theta": theta, "trace": trace}
    return runs


@pytest.fixture(scope="session")
def trained_net():
    """Criterion 7/9/10 workload: the 8-layer network trained on 100
    samples of the desk scenario under the 5-minute budget."""
    rng = make_rng(0, 99)
    pool = [sample_full_csi(DESK, rng) for _ in range(100)]
    holdout = [sample_full_csi(DESK, rng) for _ in range(10)]
    cfg = uf.TrainConfig(epochs=40, lr=1e-3, seed=0, theta_mode="ssca",
                         eval_every=40)
    start = time.perf_counter()
    lpbn, sabn, trace = uf.train(pool, DESK, cfg, layers=8, holdout=holdout)
    elapsed = time.perf_counter() - start
    return {"lpbn": lpbn, "sabn": sabn, "trace": trace, "elapsed": elapsed,
            "holdout": holdout}


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_01_bcd_monotone_convergence(bcd_batch):
    bad_mono, bad_conv = 0, 0
    for inst in bcd_batch["instances"]:
        obj = inst["trace"].objective
        if not all(obj[i + 1] <= obj[i] + 1e-9 for i in range(len(obj) - 1)):
            bad_mono += 1
        deltas = np.abs(np.diff(obj))
        if not (inst["trace"].converged and inst["trace"].iterations <= 100
                and (deltas[-1] < 1e-4 if len(deltas) else True)):
            bad_conv += 1
    elapsed = bcd_batch["elapsed"]
    ok = bad_mono == 0 and bad_conv == 0 and elapsed < 60.0
    _report(1, ok, f"{N_INSTANCES} instances: {bad_mono} monotonicity / "
                   f"{bad_conv} convergence failures, {elapsed:.1f}s (< 60s)")


def test_criterion_02_rate_mse_duality(bcd_batch):
    worst = max(mmse_rate_duality_gap(i["eff"], i["bf"], UNIT)
                for i in bcd_batch["instances"])
    _report(2, worst <= 1e-6, f"worst relative duality gap {worst:.2e} (<= 1e-6)")


def test_criterion_03_kkt_bisection(bcd_batch):
    worst_feas, worst_slack = 0.0, 0.0
    cfg = BcdConfig()
    for inst in bcd_batch["instances"]:
        bf, aux, eff = inst["bf"], inst["aux"], inst["eff"]
        for k in range(UNIT.K):
            worst_feas = max(worst_feas,
                             (bf.ul_power(k) - UNIT.P_U[k]) / UNIT.P_U[k])
        worst_feas = max(worst_feas, (bf.dl_power() - UNIT.P_AP) / UNIT.P_AP)
        P, lambdas = update_ul_precoders(eff, aux, UNIT, cfg)
        for k, lam in enumerate(lambdas):
            slack = UNIT.P_U[k] - float(np.sum(np.abs(P[k]) ** 2))
            worst_slack = max(worst_slack, min(lam, slack))
        F, mu = update_dl_precoders(eff, aux, UNIT, cfg)
        slack = UNIT.P_AP - sum(float(np.sum(np.abs(f) ** 2)) for f in F)
        worst_slack = max(worst_slack, min(mu, slack))
    # scalar oracles: interior and budget-binding closed forms
    x, lam = _kkt_precoder(np.eye(1, dtype=complex),
                           np.ones((1, 1), dtype=complex), 100.0, cfg)
    interior_ok = lam == 0.0 and abs(x[0, 0] - 1.0) < 1e-12
    x, lam = _kkt_precoder(np.zeros((1, 1), dtype=complex),
                           np.ones((1, 1), dtype=complex), 0.25, cfg)
    binding_ok = abs(lam - 2.0) < 1e-5 and abs(abs(x[0, 0]) - 0.5) < 1e-6
    ok = worst_feas <= 1e-9 and worst_slack <= 1e-6 and interior_ok and binding_ok
    _report(3, ok, f"feasibility excess {worst_feas:.2e} (<= 1e-9), "
                   f"slackness {worst_slack:.2e} (<= 1e-6), scalar oracles "
                   f"{'ok' if interior_ok and binding_ok else 'BAD'}")


def test_criterion_04_gradient_oracles():
    scen = unit_scenario(T=8)
    worst_ssca = 0.0
    for seed in range(3):
        r = np.random.default_rng(seed)
        csi = sample_full_csi(scen, r)
        theta = r.uniform(0, 2 * np.pi, scen.T)
        bf, _, _ = run_bcd(effective_channels(csi, theta), scen, rng=r)
        rep = grad_check(sample_gradient(theta, csi, bf, scen),
                         lambda t: weighted_sum_rate(t, bf, csi, scen),
                         theta, h=1e-5, tol=1e-5)
        worst_ssca = max(worst_ssca, rep.max_rel_err)

    tiny = unit_scenario(N=4, T=8, M=2, D=1, K=1, L=1)
    r = np.random.default_rng(3)
    pool = [sample_full_csi(tiny, r) for _ in range(2)]
    lpbn, sabn = uf.init_params(tiny, layers=2, rng=r, probe=pool)
    _, theta_grad, grads = uf.backward(lpbn, sabn, pool, tiny)

    def loss_vec(v):
        _set_net_vector(lpbn, sabn, tiny, v)
        return uf.loss(lpbn, sabn, pool, tiny)

    x0 = _get_net_vector(lpbn, sabn, tiny)
    analytic = _grads_to_vector(theta_grad, grads, sabn)
    from irsfd.numdiff import central_diff
    numeric = central_diff(loss_vec, x0, 1e-5)
    _set_net_vector(lpbn, sabn, tiny, x0)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)
    worst_net = float(rel.max())

    worst_frozen = 0.0
    for csi in pool:
        frozen = uf.theta_gradient_frozen(lpbn, sabn, csi, tiny)
        _, bf_net = uf.network_beamformers(csi, lpbn, sabn, tiny)
        ours = sample_gradient(lpbn.theta_numpy(), csi, bf_net, tiny)
        worst_frozen = max(worst_frozen, float(np.abs(frozen - ours).max()))
    ok = worst_ssca <= 1e-5 and worst_net <= 1e-4 and worst_frozen <= 1e-6
    _report(4, ok, f"long-term gradient vs FD {worst_ssca:.2e} (<= 1e-5); "
                   f"network backward vs FD over {x0.size} coords "
                   f"{worst_net:.2e} (<= 1e-4); frozen-network phase gradient "
                   f"vs long-term gradient {worst_frozen:.2e} (<= 1e-6)")


def _eval_theta_rate(theta, seed):
    held = [sample_full_csi(DESK, make_rng(seed, 2)) for _ in range(6)]
    vals = []
    for csi in held:
        bf, _, tr = run_bcd(effective_channels(csi, theta), DESK, BcdConfig(),
                            init=random_beamformers(DESK, make_rng(seed, 5)))
        vals.append(tr.sum_rate[-1])
    return float(np.mean(vals))


def test_criterion_05_ssca_improvement(ssca_runs):
    wins = 0
    for seed, run in ssca_runs.items():
        theta_rand = make_rng(seed, 3).uniform(0, 2 * np.pi, DESK.T)
        if _eval_theta_rate(run["theta"], seed) > _eval_theta_rate(theta_rand, seed):
            wins += 1
    traces = np.array([run["trace"].batch_rate for run in ssca_runs.values()])
    mean_trace = traces.mean(axis=0)
    window = 25
    smooth = np.convolve(mean_trace, np.ones(window) / window, mode="valid")
    at_200 = smooth[200 - window // 2 - 1]
    final = smooth[-1]
    trend_ok = abs(at_200 - final) <= 0.02 * abs(final)
    ok = wins >= 19 and trend_ok
    _report(5, ok, f"optimized phases beat random in {wins}/{N_SEEDS} seeds "
                   f"(>= 19); smoothed mean trace at iteration 200 within "
                   f"{abs(at_200 - final) / abs(final) * 100:.2f}% of final (<= 2%)")


def test_criterion_06_inverse_surrogate():
    # definitional reproduction on a generic 3x3 matrix
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    d = uf.dagger(a)
    exact = all(d[i, j] == (1.0 / a[i, i] if i == j else 0.0)
                for i in range(3) for j in range(3))
    from test_unfolding import calibrated_dominance_errors
    results = calibrated_dominance_errors(UNIT, (2.0, 10.0, 100.0))
    errors = [e for e, _ in results]
    ok = exact and errors[0] <= 0.25 and errors[0] > errors[1] > errors[2]
    _report(6, ok, f"reciprocal-diagonal example exact: {exact}; identity-init "
                   f"layer errors over dominance 2/10/100: "
                   f"{errors[0]:.3f}/{errors[1]:.3f}/{errors[2]:.3f} "
                   f"(<= 0.25 at 2, monotone decreasing)")


def test_criterion_07_unfolding_quality(trained_net, ssca_runs):
    lpbn, sabn = trained_net["lpbn"], trained_net["sabn"]
    holdout = trained_net["holdout"]
    theta_star = ssca_runs[0]["theta"]
    ref = np.mean([run_bcd(effective_channels(c, theta_star), DESK, BcdConfig(),
                           init=random_beamformers(DESK, make_rng(0, 5))
                           )[2].sum_rate[-1] for c in holdout])
    theta_hat = lpbn.theta_numpy()
    net = np.mean([sum_rate(effective_channels(c, theta_hat),
                            uf.network_beamformers(c, lpbn, sabn, DESK)[1], DESK)
                   for c in holdout])
    ratio = net / ref
    ok = ratio >= 0.90 and trained_net["elapsed"] < 300.0
    _report(7, ok, f"trained 8-layer network: {net:.2f} bits/s/Hz vs converged "
                   f"reference at optimized phases {ref:.2f} -> {ratio:.3f} "
                   f"(>= 0.90); training {trained_net['elapsed']:.0f}s (< 300s)")


def test_criterion_08_overhead_formulas():
    expected = {0: (46_080_000, 46_080_000), 100: (790_080_000, 48_312_000),
                200: (1_534_080_000, 50_544_000), 400: (3_022_080_000, 55_008_000)}
    exact = all(csi_overhead(OverheadParams(q=8, T_s=10_000, A_s=30, K=2, L=2,
                                            N_U=32, N_D=32, M_U=4, M_D=4, T=t))
                == expected[t] for t in expected)
    strictly_lower = all(
        csi_overhead(OverheadParams(q=8, T_s=10_000, A_s=30, K=2, L=2, N_U=32,
                                    N_D=32, M_U=4, M_D=4, T=t))[1]
        < csi_overhead(OverheadParams(q=8, T_s=10_000, A_s=30, K=2, L=2, N_U=32,
                                      N_D=32, M_U=4, M_D=4, T=t))[0]
        for t in (1, 100, 200, 400))
    _report(8, exact and strictly_lower,
            "signaling-bit formulas match the pre-computed values at "
            "T in {0,100,200,400} and the mixed protocol is strictly cheaper "
            "for every T >= 1")


def test_criterion_09_scheme_ordering(ssca_runs, trained_net):
    means = {"ssca": [], "unfolding": [], "random-irs": [], "no-irs": [], "hd": []}
    trained = (trained_net["lpbn"], trained_net["sabn"])
    for seed in range(N_SEEDS):
        means["ssca"].append(
            scheme_ssca(DESK, seed, n_eval=6, theta_opt=ssca_runs[seed]["theta"]).total)
        means["unfolding"].append(
            scheme_unfolding(DESK, seed, trained, n_eval=6).total)
        means["random-irs"].append(baseline_random_irs(DESK, seed, n_eval=6).total)
        means["no-irs"].append(baseline_no_irs(DESK, seed, n_eval=6).total)
        means["hd"].append(baseline_hd(DESK, seed, n_eval=6).total)
    avg = {k: float(np.mean(v)) for k, v in means.items()}
    ok = (avg["ssca"] >= avg["unfolding"] >= avg["random-irs"] >= avg["no-irs"]
          and avg["ssca"] > avg["hd"] and avg["unfolding"] > avg["hd"])
    _report(9, ok, "mean rates over 20 seeds: " +
            ", ".join(f"{k}={v:.2f}" for k, v in avg.items()) +
            " (need ssca >= unfolding >= random-irs >= no-irs, duplex > hd)")


def test_criterion_10_quantization_robustness(ssca_runs, trained_net):
    seeds = range(5)
    trained = (trained_net["lpbn"], trained_net["sabn"])

    def retention(fn):
        base = np.mean([fn(s, None) for s in seeds])
        return {bits: float(np.mean([fn(s, bits) for s in seeds]) / base)
                for bits in (1, 2, 3)}

    ssca_ret = retention(lambda s, b: scheme_ssca(
        DESK, s, Degrade(quant_bits=b), n_eval=4,
        theta_opt=ssca_runs[s]["theta"]).total)
    unf_ret = retention(lambda s, b: scheme_unfolding(
        DESK, s, trained, Degrade(quant_bits=b), n_eval=4).total)
    # the per-slot joint optimizer re-optimizes continuously, then its
    # phases are quantized after the fact: optimize once per seed, evaluate
    # all quantization depths on the same optimized state
    full = {b: [] for b in (None, 1, 2, 3)}
    for s in seeds:
        for b in (None, 1, 2, 3):
            full[b].append(scheme_full_csi(
                DESK, s, Degrade(quant_bits=b), n_eval=2, outer_iters=20).total)
    full_ret = {b: float(np.mean(full[b]) / np.mean(full[None])) for b in (1, 2, 3)}
    mixed_ok = ssca_ret[3] >= 0.95 and unf_ret[3] >= 0.95
    lower_ok = all(full_ret[b] < min(ssca_ret[b], unf_ret[b]) for b in (1, 2))
    _report(10, mixed_ok and lower_ok,
            f"3-bit retention: statistics-stage {ssca_ret[3]:.3f}, unrolled "
            f"{unf_ret[3]:.3f} (>= 0.95); full-CSI retention at 1/2 bits "
            f"{full_ret[1]:.3f}/{full_ret[2]:.3f} vs mixed "
            f"{min(ssca_ret[1], unf_ret[1]):.3f}/{min(ssca_ret[2], unf_ret[2]):.3f} "
            f"(strictly lower)")


def test_criterion_11_determinism(tmp_path):
    def run(sub):
        spec = ExperimentSpec(kind="quantization", schemes=["random-irs", "no-irs"],
                              seeds=[0, 1], out_dir=tmp_path / sub,
                              scenario=DESK, values=[1, 3], n_pool=4, n_eval=2,
                              ssca_cfg=SscaConfig(max_iters=6),
                              bcd_cfg=BcdConfig(max_iters=40))
        out = run_experiment(spec, log=lambda *_: None)
        rows = list(csv.DictReader(open(out["csv"])))
        return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]

    same = run("a") == run("b")
    _report(11, same, "re-running the experiment with identical spec and seeds "
                      "reproduces every CSV payload column byte-for-byte "
                      "(wall-time column excluded)")


# ---------------------------------------------------------------------------
# parameter-vector helpers for the full-network finite-difference sweep
# ---------------------------------------------------------------------------

def _get_net_vector(lpbn, sabn, scen):
    parts = [lpbn.theta.detach().numpy().copy()]
    for _, t in sabn.named_parameters():
        a = t.detach().numpy()
        if np.iscomplexobj(a):
            parts += [a.real.ravel().copy(), a.imag.ravel().copy()]
        else:
            parts.append(np.atleast_1d(a).ravel().astype(float).copy())
    return np.concatenate(parts)


def _set_net_vector(lpbn, sabn, scen, v):
    i = scen.T
    with torch.no_grad():
        lpbn.theta.copy_(torch.from_numpy(v[:i]))
        for _, t in sabn.named_parameters():
            a = t.detach().numpy()
            if np.iscomplexobj(a):
                sz = a.size
                re = v[i:i + sz].reshape(a.shape)
                im = v[i + sz:i + 2 * sz].reshape(a.shape)
                t.copy_(torch.from_numpy(re + 1j * im))
                i += 2 * sz
            else:
                sz = np.atleast_1d(a).size
                t.copy_(torch.from_numpy(v[i:i + sz].reshape(t.shape)).to(t.dtype))
                i += sz


def _grads_to_vector(theta_grad, grads, sabn):
    parts = [theta_grad]
    for name, _ in sabn.named_parameters():
        a = grads[name]
        if np.iscomplexobj(a):
            parts += [a.real.ravel(), a.imag.ravel()]
        else:
            parts.append(np.atleast_1d(a).ravel().astype(float))
    return np.concatenate(parts)
