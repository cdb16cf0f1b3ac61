"""Acceptance gate: one test per criterion, reported as PASS/FAIL at the end of the run."""

import json
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from hddpc.bezier import BezierCurve, bez
from hddpc.cli import main
from hddpc.control import OrbitReference, TrackingGains
from hddpc.ddpc import DdpcConfig, ddpc_assemble, ddpc_plan, random_lti, simulate_lti
from hddpc.hankel import PartitionSpec, build_sliding_matrix, partition
from hddpc.harness import (
    ArmSetup,
    GaitSchedule,
    collect_dataset,
    perturbation_experiment,
    run_closed_loop,
    tracking_experiment,
)
from hddpc.planner import (
    HankelBank,
    HddpcConfig,
    HddpcPlanner,
    ReferenceSet,
    build_ini_window,
    hddpc_assemble,
    hddpc_plan,
    shift_for,
    shrink_select,
)
from hddpc.plant import PlantConfig
from hddpc.qpsolver import QpProblem, SolverSettings, solve
from hddpc.rom import HlipState, LipParams, hlip_flow, hlip_periodic_orbit, hlip_reset, hlip_s2s

from oracles import active_set_qp, lti_rollout, random_qp, rk4

PLANT = PlantConfig()
EXACT = PlantConfig().exact()

# Perturbation comparison, calibrated by the sweep recorded in the decisions ledger.
PERTURB_MAGNITUDES = (0.12, 0.17)
PERTURB_SEEDS = range(5)
PERTURB_GAINS = TrackingGains(10.0, 3.0)
PERTURB_DATA = dict(n_steps=120, excitation=0.03, step_range=(0.0, 0.3), width_range=(0.05, 0.4))
PERTURB_PLANNER = dict(
    step_x_bounds=(-0.1, 0.4), step_y_bounds=(0.0, 0.5), duration_bounds=(0.8, 1.2), R=(0.01, 0.01),
)
PERTURB_REPLAN = tuple(np.round(np.arange(0.0, 0.95, 0.1), 10))


def rich_dataset(plant, n_steps=120, excitation=0.03, seed=0, **ranges):
    sched = GaitSchedule.random(n_steps, np.random.default_rng(seed), dt=plant.dt, **ranges)
    return collect_dataset(sched, plant, seed=seed, excitation=excitation)


def test_criterion_1_fundamental_lemma():
    worst = 0.0
    for seed in range(8):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1000 + seed)
        beta, k = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        sys = random_lti(rng, beta, k, k)
        T_ini, N = beta, 8
        L = T_ini + N
        # Long enough for the input to be persistently exciting of order L + beta.
        u = rng.standard_normal(((k + 1) * (L + beta) + 20, k))
        y = simulate_lti(sys, rng.standard_normal(beta), u)
        parts = partition(build_sliding_matrix(u, L), build_sliding_matrix(y, L), PartitionSpec(T_ini, N))
        x0 = rng.standard_normal(beta)
        u_ini = rng.standard_normal((T_ini, k))
        y_ini, X = lti_rollout(sys.A, sys.B, sys.M, sys.D, x0, u_ini)
        cfg = DdpcConfig(T_ini, N, Q=1.0, R=0.1, psi_gamma=0.0, psi_sigma=1e8)
        plan = ddpc_plan(ddpc_assemble(parts, (u_ini, y_ini), (None, 0.5 * rng.standard_normal(N * k)), cfg))
        x_T = sys.A @ X[-1] + sys.B @ u_ini[-1]
        expected, _ = lti_rollout(sys.A, sys.B, sys.M, sys.D, x_T, plan.mu.reshape(N, k))
        err = float(np.max(np.abs(plan.eta - expected.reshape(-1))))
        worst = max(worst, err)
        assert err <= 1e-6, f"seed {seed}: continuation error {err:.2e}"
        assert time.perf_counter() - t0 < 1.0
    print(f"criterion 1: worst continuation error {worst:.2e}")


def test_criterion_2_hlip_oracles():
    t0 = time.perf_counter()
    prm = LipParams(z0=0.9, g=9.81, T_ssp=0.9, T_dsp=0.1)
    w2 = prm.g / prm.z0
    for p, v, t in [(0.05, 0.0, 0.4), (-0.1, 0.3, 0.9), (0.02, -0.2, 0.25)]:
        x = rk4(lambda _, s: np.array([s[1], w2 * s[0]]), [p, v], t, 2e-4)
        s = hlip_flow(HlipState(p, v), t, prm)
        assert abs(s.p - x[0]) <= 1e-8 and abs(s.v - x[1]) <= 1e-8

    A, B = hlip_s2s(prm)

    def f(x, lam):
        s = hlip_reset(hlip_flow(HlipState(x[0], x[1]), prm.T_ssp, prm), lam, prm)
        return np.array([s.p, s.v])

    h, x0 = 1e-7, np.array([0.03, 0.2])
    J = np.column_stack([(f(x0 + h * e, 0.1) - f(x0 - h * e, 0.1)) / (2 * h) for e in np.eye(2)])
    Jl = (f(x0, 0.1 + h) - f(x0, 0.1 - h)) / (2 * h)
    assert np.max(np.abs(A - J)) <= 1e-6 and np.max(np.abs(B[:, 0] - Jl)) <= 1e-6

    # Reset keeps the velocity and re-bases the position; zero step and zero dsp leave it alone.
    s = hlip_reset(HlipState(0.1, 0.5), 0.2, prm)
    assert s.p == 0.1 + 0.5 * prm.T_dsp - 0.2 and s.v == 0.5
    s = hlip_reset(HlipState(0.1, 0.5), 0.0, LipParams(T_dsp=0.0))
    assert (s.p, s.v) == (0.1, 0.5)

    for v_des in (0.0, 0.1, 0.3, -0.2):
        p, v, lam = hlip_periodic_orbit(v_des, prm)
        s = hlip_reset(hlip_flow(HlipState(p, v), prm.T_ssp, prm), lam, prm)
        assert max(abs(s.p - p), abs(s.v - v)) <= 1e-10
    assert time.perf_counter() - t0 < 1.0


def test_criterion_3_qp_solver():
    t0 = time.perf_counter()
    settings = SolverSettings()
    for seed in range(200):
        rng = np.random.default_rng(5000 + seed)
        n = int(rng.integers(2, 21))
        m = int(rng.integers(1, 41))
        P, q, A, l, u = random_qp(rng, n, m, n_eq=int(rng.integers(0, 3)))
        _, f_ref = active_set_qp(P, q, A, l, u)
        sol = solve(QpProblem(P, q, A, l, u), settings)
        assert sol.solved, f"seed {seed}: {sol.status}"
        assert abs(sol.objective - f_ref) <= 1e-6 * max(1.0, abs(f_ref)), f"seed {seed}"
        Ax = A @ sol.x
        z = np.clip(Ax, l, u)
        eps_p = settings.eps_abs + settings.eps_rel * max(np.abs(Ax).max(), np.abs(z).max())
        eps_d = settings.eps_abs + settings.eps_rel * max(
            np.abs(P @ sol.x).max(), np.abs(A.T @ sol.y).max(), np.abs(q).max()
        )
        assert np.max(np.abs(Ax - z)) <= eps_p
        assert np.max(np.abs(P @ sol.x + q + A.T @ sol.y)) <= eps_d
    assert time.perf_counter() - t0 < 30.0


def default_dataset():
    sched = GaitSchedule.random(10, np.random.default_rng(0), dt=PLANT.dt)
    return collect_dataset(sched, PLANT, seed=0)


def orbit_references(v_des, lip, width=0.2):
    orbit = OrbitReference(v_des, width, lip)
    return ReferenceSet(orbit, orbit.step, lip.T_ssp)


def test_criterion_4_ddpc_equivalence():
    t0 = time.perf_counter()
    lip = PLANT.lip
    tight = SolverSettings(eps_abs=1e-9, eps_rel=1e-9, max_iter=50000)
    base = HddpcConfig(K=0, J=0, bezier_degree=None)
    bank = HankelBank.from_dataset(default_dataset(), base)
    refs = orbit_references(0.13, lip)
    cfg = base.pinned(refs.step, 0.2, lip.T_ssp)
    worst = 0.0
    for tau, dv in [(0.0, (0.0, 0.0)), (0.5, (0.05, -0.03)), (0.26, (-0.04, 0.06))]:
        planner = HddpcPlanner(bank, cfg, refs, "L")
        p, v, _ = refs.orbit.at("L", tau * lip.T_ssp)
        req = planner.request(p, v + np.asarray(dv), tau)
        r = hddpc_plan(hddpc_assemble(req, bank, refs, cfg), tight)

        # The same program posed as single-domain DDPC on the shrunk matrix.
        s = shift_for(tau, cfg.n_current)
        N = cfg.n_current - s
        H_u, H_y = bank.domain_matrix("L", cfg.n_current, cfg.n_current)
        H_u = shrink_select(H_u, tau, cfg.T_ini, cfg.n_current, 2)
        H_y = shrink_select(H_y, tau, cfg.T_ini, cfg.n_current, 2)
        parts = partition(H_u, H_y, PartitionSpec(cfg.T_ini, N))
        hist = build_ini_window(req.history(s), cfg.T_ini, req.step_last)
        hw = np.asarray(cfg.cop_halfwidth)
        dcfg = DdpcConfig(cfg.T_ini, N, np.diag(cfg.Q), np.diag(cfg.R), cfg.psi_gamma, cfg.psi_sigma, -hw, hw)
        d = ddpc_plan(ddpc_assemble(parts, hist, (None, refs.eta("L", cfg.n_current)[s:]), dcfg), tight)
        err = max(np.max(np.abs(r.mu[0].ravel() - d.mu)), np.max(np.abs(r.eta[0].ravel() - d.eta)))
        worst = max(worst, float(err))
        assert err <= 1e-6, f"tau={tau}: (mu, eta) differ by {err:.2e}"
    print(f"criterion 4: worst (mu, eta) difference {worst:.2e}")
    assert time.perf_counter() - t0 < 10.0


def test_criterion_5_tracking():
    t0 = time.perf_counter()
    # Top speed: the largest orbit whose step stays inside the planner's widest step bound.
    v_max = 0.3
    speeds = np.linspace(0.0, v_max, 5)
    rep, _ = tracking_experiment(speeds, 15.0, PLANT, HddpcConfig(), 10.0, seed=0, n_steps=40, excitation=0.03)
    rows = [r for _, r in rep.rows]
    assert all(r.completed for r in rows), [(lab, r.fall_time) for lab, r in rep.rows]
    errors = np.array([abs(r.mean_speed - v) for r, v in zip(rows, speeds)])
    rho = spearmanr(speeds, errors).statistic
    print(f"criterion 5: errors {np.round(errors, 4).tolist()}, spearman {rho:.2f}, "
          f"{time.perf_counter() - t0:.0f} s")
    assert rho >= 0
    assert errors[-1] >= errors[0]
    assert errors[0] <= 0.01
    assert time.perf_counter() - t0 < 120.0


def test_criterion_6_perturbation_ordering():
    t0 = time.perf_counter()
    data_ranges = {k: v for k, v in PERTURB_DATA.items() if k not in ("n_steps", "excitation")}
    data = rich_dataset(PLANT, PERTURB_DATA["n_steps"], PERTURB_DATA["excitation"], **data_ranges)
    cfg = HddpcConfig(**PERTURB_PLANNER)
    setup = ArmSetup(PLANT.lip, 0.13, 0.2, HankelBank.from_dataset(data, cfg), cfg, PERTURB_REPLAN,
                     gains=PERTURB_GAINS)
    ok, lines = 0, []
    for seed in PERTURB_SEEDS:
        rep, _ = perturbation_experiment(seed, PERTURB_MAGNITUDES, PLANT, setup, duration=8.0)
        reps = rep.by_label()
        fall = {arm: (r.fall_time if r.fall_time is not None else np.inf) for arm, r in reps.items()}
        good = fall["nominal"] <= fall["ddpc"] < 8.0 and reps["hddpc"].completed
        ok += good
        lines.append(f"seed {seed}: " + ", ".join(f"{a}={fall[a]:.2f}" for a in ("nominal", "ddpc", "hddpc")))
    elapsed = time.perf_counter() - t0
    print("criterion 6: " + "; ".join(lines) + f"; {ok}/{len(PERTURB_SEEDS)} ordered, {elapsed:.0f} s")
    assert ok >= 4, "; ".join(lines)
    assert elapsed < 300.0


def test_criterion_7_receding_horizon():
    data = rich_dataset(EXACT)
    cfg = HddpcConfig()
    setup = ArmSetup(EXACT.lip, 0.13, 0.2, HankelBank.from_dataset(data, cfg), cfg, (0.0, 0.5))
    log = run_closed_loop("hddpc", EXACT, setup, 6.0)
    assert log.completed
    taus = np.linspace(0.5, 1.0, 51)
    worst = 0.0
    plans = {}
    for p in log.plans:
        plans.setdefault(p["domain"], []).append(p)
    for domain, (first, second) in ((d, ps) for d, ps in plans.items() if len(ps) == 2):
        assert first["tau"] == 0.0 and second["tau"] == pytest.approx(0.5, abs=1e-3)
        a = np.array([bez(t, BezierCurve(np.array(first["alphas"][0]), 1.0)) for t in taus])
        b = np.array([bez(t, BezierCurve(np.array(second["alphas"][0]), 1.0)) for t in taus])
        worst = max(worst, float(np.abs(a - b).max()))
    assert len(plans) >= 5
    print(f"criterion 7: worst positional deviation {worst:.2e}")
    assert worst <= 1e-3


def test_criterion_8_solve_time():
    data = default_dataset()
    cfg = HddpcConfig()
    assert (cfg.K, cfg.T_ini, cfg.n_current, cfg.n_future) == (2, 4, 50, 12)
    setup = ArmSetup(PLANT.lip, 0.13, 0.2, HankelBank.from_dataset(data, cfg), cfg, (0.0, 0.25, 0.5, 0.75))
    run_closed_loop("hddpc", PLANT, setup, 1.0)  # warm caches
    log = run_closed_loop("hddpc", PLANT, setup, 8.0)
    med = float(np.median(log.solve_times))
    print(f"criterion 8: median assemble+solve {1e3 * med:.1f} ms over {len(log.solve_times)} replans")
    assert med <= 0.050


def test_criterion_9_cli_determinism(tmp_path):
    def run(tag):
        d = tmp_path / tag
        data = d / "data.json"
        assert main(["collect", "--out", str(data), "--seed", "3"]) == 0
        main(["simulate", "--dataset", str(data), "--arm", "hddpc", "--out", str(d / "run.json"),
              "--override", "experiment.duration=3", "--override", "experiment.perturb=true"])
        assert main(["compare", "--dataset", str(data), "--out", str(d / "cmp"),
                     "--override", "experiment.duration=2"]) == 0
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*.json"))}

    a, b = run("a"), run("b")
    assert set(a) == set(b) and len(a) == 6
    for name in a:
        assert a[name] == b[name], name
        json.loads(a[name])
