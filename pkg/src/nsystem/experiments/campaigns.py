"""Verification campaigns. Each returns a :class:`Report`."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.integrate import solve_ivp
from scipy import stats as sps

from .. import ctmc, dfl, diffusion, lyapunov
from ..model import (
    SystemParams,
    drift_scaled,
    nearest_lattice_state,
    scale_system,
)
from ..stats import derive_seed, kendall_trend, ks_critical_two_sample, ks_distance, ks_normal
from .config import ExperimentConfig, param_sets
from .report import Report, check, not_run, provenance


def pool_map(func, cells, workers: int = 1):
    """Ordered map over independent cells, in-process when ``workers <= 1``."""
    cells = list(cells)
    if workers <= 1 or len(cells) <= 1:
        return [func(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, cells))


def _new_report(name: str, cfg: ExperimentConfig) -> Report:
    return Report(campaign=name, provenance=provenance(cfg, cfg.root_seed))


def _finish(rep: Report, t0: float) -> Report:
    rep.timing["elapsed_s"] = time.perf_counter() - t0
    return rep


def l1_point(r: float, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([c, s]) * (r / (abs(c) + abs(s)))


def _clip(sys, x):
    return np.array([max(x[0], sys.x1_min), max(x[1], sys.x2_min)])


def sweep_grid(sys, radii, angles: int, random: int, radius_max: float, rng) -> list:
    """Log-radial grid clipped to the state space, plus uniform draws from the l1 ball."""
    pts = []
    for r in radii:
        for k in range(int(angles)):
            pts.append(_clip(sys, l1_point(float(r), 2 * math.pi * k / angles)))
    while len(pts) < len(radii) * angles + random:
        r = radius_max * math.sqrt(rng.uniform())
        x = l1_point(r, rng.uniform(0, 2 * math.pi))
        if sys.in_state_space(*x):
            pts.append(x)
    return pts


def random_starts(sys, k: int, r_min: float, r_max: float, rng) -> list:
    """``k`` starts with log-uniform l1 radius and uniform angle, inside the state space."""
    out = []
    while len(out) < k:
        r = math.exp(rng.uniform(math.log(r_min), math.log(r_max)))
        x = l1_point(r, rng.uniform(0, 2 * math.pi))
        if sys.in_state_space(*x):
            out.append(x)
    return out


def _stability(per_n: dict, frac: float):
    joint = max(per_n.values())
    worst = min(v / joint for v in per_n.values()) if joint > 0 else 1.0
    return joint, worst, worst >= 1.0 - frac


# ---------------------------------------------------------------------------
# simulate / tightness


def _sim_cell(args):
    pdict, n, section, seed = args
    sys = scale_system(SystemParams.from_dict(pdict), n)
    cfg = ctmc.SimConfig(seed=seed, horizon=section["horizon"], burn_in=section["burn_in"],
                         batches=section.get("batches", 20))
    return ctmc.simulate(sys, cfg)


def run_simulate(cfg: ExperimentConfig, workers: int = 1) -> Report:
    t0 = time.perf_counter()
    rep = _new_report("simulate", cfg)
    sec = cfg.section("simulate")
    cells = [(cfg.doc["params"], n, sec, derive_seed(cfg.root_seed, "simulate", n)) for n in cfg.n_list]
    for (_, n, _, seed), est in zip(cells, pool_map(_sim_cell, cells, workers)):
        d = est.to_dict()
        rep.records.append({"n": n, "seed": seed, **d})
        rep.per_n[str(n)] = {"mean_abs_scaled": d["mean_abs_scaled"], "occupancy": d["occupancy"]}
        rep.table.append({"n": n, "seed": seed, "mean_abs": est.mean_abs_scaled.estimate,
                          "half_width": est.mean_abs_scaled.half_width,
                          "var_x1": est.moments["var_x1"].estimate, "var_x2": est.moments["var_x2"].estimate})
        mass = est.marginal1.weights.sum()
        rep.verdicts.append(check(f"n={n}: finite interval, normalized marginals",
                                  {"half_width": est.mean_abs_scaled.half_width, "mass": mass},
                                  "finite, |mass-1|<=1e-12",
                                  math.isfinite(est.mean_abs_scaled.half_width) and abs(mass - 1) <= 1e-12))
    return _finish(rep, t0)


def tightness_verdict(est, hw, ratio_limit: float = 1.5, trend_level: float = 0.05, ns=None):
    """Bounded-family rule on per-n estimates with 95% half-widths.

    Each estimate may move anywhere inside its interval, so the smallest
    attainable max/min ratio is ``max(est - hw) / min(est + hw)``.
    """
    est = np.asarray(est, dtype=float)
    hw = np.asarray(hw, dtype=float)
    if est.size == 0:
        raise ValueError("empty family")
    ratio = float(max(np.max(est - hw), 0.0) / np.min(est + hw))
    ratio = max(ratio, 1.0)
    trend = kendall_trend(ns if ns is not None else np.arange(est.size), est)
    return {"ratio": ratio, "ratio_ok": ratio <= ratio_limit, "trend": trend,
            "trend_ok": not (trend["p_value"] < trend_level and trend["tau"] > 0)}


def run_tightness(cfg: ExperimentConfig, workers: int = 1) -> Report:
    t0 = time.perf_counter()
    rep = _new_report("tightness", cfg)
    sec = cfg.section("tightness")
    ns = cfg.n_list
    cells = [(cfg.doc["params"], n, sec, derive_seed(cfg.root_seed, "tightness", n)) for n in ns]
    ests = pool_map(_sim_cell, cells, workers)
    E, H = [], []
    for (_, n, _, seed), est in zip(cells, ests):
        iv = est.mean_abs_scaled
        E.append(iv.estimate)
        H.append(iv.half_width)
        rep.per_n[str(n)] = {"estimate": iv.estimate, "half_width": iv.half_width, "seed": seed,
                             "events": est.info["events"]}
        rep.records.append({"n": n, "seed": seed, **est.to_dict()})
        rep.table.append({"n": n, "estimate": iv.estimate, "half_width": iv.half_width})
    v = tightness_verdict(E, H, sec["ratio_limit"], sec["trend_level"], ns)
    rep.constants["bound_C"] = float(max(e + h for e, h in zip(E, H)))
    rep.constants["ratio"] = v["ratio"]
    rep.constants["kendall"] = v["trend"]
    if len(ns) == 1:
        rep.warnings.append("single n: a one-point family is trivially bounded")
    rep.verdicts.append(check("bounded family: max/min after CI widening", v["ratio"],
                              sec["ratio_limit"], v["ratio_ok"]))
    if len(ns) < 3:
        rep.verdicts.append(not_run("no significant positive trend (Kendall tau, one-sided)",
                                    "trend test needs at least three n"))
    else:
        rep.verdicts.append(check("no significant positive trend (Kendall tau, one-sided)",
                                  v["trend"], sec["trend_level"], v["trend_ok"]))
    return _finish(rep, t0)


# ---------------------------------------------------------------------------
# interchange


def _sde_cell(args):
    pdict, sec, seed = args
    field = diffusion.limit_field(SystemParams.from_dict(pdict))
    return diffusion.simulate_sde(field, diffusion.SdeConfig(seed=seed, **sec))


def _effective_size(est, key):
    iv = est.moments[f"mean_{key}"]
    k = len(est.batch_means)
    se = iv.half_width / sps.t.ppf(0.975, k - 1)
    var = est.moments[f"var_{key}"].estimate
    return max(var / (se * se), 1.0)


def run_interchange(cfg: ExperimentConfig, workers: int = 1) -> Report:
    t0 = time.perf_counter()
    rep = _new_report("interchange", cfg)
    sec = cfg.section("interchange")
    ns = cfg.n_list
    cells = [(cfg.doc["params"], n, sec["ctmc"], derive_seed(cfg.root_seed, "interchange", n)) for n in ns]
    sde_seed = derive_seed(cfg.root_seed, "interchange-sde", 0)
    results = pool_map(_dispatch, [("sim", c) for c in cells] + [("sde", (cfg.doc["params"], sec["sde"], sde_seed))],
                       workers)
    ests, sde = results[:-1], results[-1]
    field = diffusion.limit_field(cfg.params)
    ks_norm = ks_normal(sde.marginal2, 0.0, field.x2_stationary_sd)
    rows = []
    for n, est in zip(ns, ests):
        k1 = ks_distance(est.marginal1, sde.marginal1)
        k2 = ks_distance(est.marginal2, sde.marginal2)
        noise = [ks_critical_two_sample(_effective_size(est, c), _effective_size(sde, c))
                 for c in ("x1", "x2")]
        rows.append((n, k1, k2, noise))
        rep.per_n[str(n)] = {"ks_x1": k1, "ks_x2": k2, "noise_x1": noise[0], "noise_x2": noise[1]}
        rep.table.append({"n": n, "ks_x1": k1, "ks_x2": k2, "noise_x1": noise[0], "noise_x2": noise[1]})
        rep.records.append({"n": n, "ks_x1": k1, "ks_x2": k2, "ctmc": est.to_dict()})
    rep.records.append({"sde": sde.to_dict(), "ks_x2_normal": ks_norm, "field": field.to_dict()})
    n_top, k1, k2, _ = rows[-1]
    lim = sec["ks_limit"]
    rep.verdicts.append(check(f"KS(x1) at n={n_top} vs diffusion", k1, lim, k1 <= lim))
    rep.verdicts.append(check(f"KS(x2) at n={n_top} vs diffusion", k2, lim, k2 <= lim))
    rep.verdicts.append(check("KS(diffusion x2, normal law)", ks_norm, sec["ks_normal_limit"],
                              ks_norm <= sec["ks_normal_limit"]))
    ups = []
    for (na, a1, a2, _), (nb, b1, b2, nz) in zip(rows, rows[1:]):
        for c, ka, kb, tol in (("x1", a1, b1, nz[0]), ("x2", a2, b2, nz[1])):
            if kb > ka + tol:
                ups.append({"coord": c, "from": na, "to": nb, "increase": kb - ka, "noise": tol})
    if len(rows) < 2:
        rep.verdicts.append(not_run("KS non-increasing in n up to sampling noise",
                                    "trend needs at least two n"))
    else:
        rep.verdicts.append(check("KS non-increasing in n up to sampling noise", ups,
                                  "no increase beyond noise", not ups))
    rep.constants["ks_x2_normal"] = ks_norm
    return _finish(rep, t0)


def _dispatch(job):
    kind, args = job
    return _sim_cell(args) if kind == "sim" else _sde_cell(args)


# ---------------------------------------------------------------------------
# lyapunov


def _lyap_cell(args):
    pdict, n, ly, seed = args
    P = SystemParams.from_dict(pdict)
    sys = scale_system(P, n)
    dist = lyapunov.make_distance(ly["C"])
    atol, rtol = ly["atol"], ly["rtol"]
    rng = np.random.default_rng(seed)
    grid = ly["grid"]
    pts = sweep_grid(sys, grid["radii"], grid["angles"], grid["random"], grid["radius_max"], rng)
    records = [lyapunov.sweep_record(sys, dist, x, ly["delta"], atol=atol, rtol=rtol) for x in pts]

    fd = []
    h = ly["fd_delta"]
    m = 0
    while len(fd) < ly["fd_states"]:
        x = pts[len(pts) - 1 - m] if m < len(pts) else l1_point(rng.uniform(0, 50), rng.uniform(0, 7))
        m += 1
        if not (sys.in_state_space(x[0] - 2 * h, x[1] - 2 * h)):
            continue
        z = rng.normal(size=2)
        z /= np.abs(z).sum()
        gp = lyapunov.G_value(sys, dist, x + h * z, atol, rtol).G
        gm = lyapunov.G_value(sys, dist, x - h * z, atol, rtol).G
        gr = lyapunov.grad_G(sys, dist, x, z, atol, rtol)
        fdv = (gp - gm) / (2 * h)
        fd.append({"x": list(x), "z": list(z), "grad": gr, "fd": fdv,
                   "rel": abs(fdv - gr) / max(abs(gr), 1.0)})

    drift = []
    while len(drift) < ly["drift_states"]:
        x = l1_point(ly["drift_radius_max"] * math.sqrt(rng.uniform()), rng.uniform(0, 2 * math.pi))
        if not sys.in_state_space(*x):
            continue
        s = nearest_lattice_state(sys, x)
        xs = ((s.X1 - sys.center[0]) / sys.sqrt_n, (s.X2 - sys.center[1]) / sys.sqrt_n)
        if dist.g(*xs) < ly["drift_g_min"]:
            continue
        drift.append(lyapunov.generator_drift(sys, dist, s, atol, rtol))
    far = lyapunov.generator_drift(sys, dist, nearest_lattice_state(sys, (ly["drift_radius_max"], 0.0)), atol, rtol)
    origin = lyapunov.generator_drift(sys, dist, nearest_lattice_state(sys, (0.0, 0.0)), atol, rtol)
    return {"records": records, "fd": fd, "drift": drift, "far": far, "origin": origin}


def run_lyapunov_certificate(cfg: ExperimentConfig, workers: int = 1) -> Report:
    t0 = time.perf_counter()
    rep = _new_report("lyapunov", cfg)
    ly = cfg.section("lyapunov")
    ns = [int(n) for n in ly["n_list"]]
    sets = param_sets(cfg)
    cells = [(P.to_dict(), n, ly, derive_seed(cfg.root_seed, f"lyapunov-{k}", n))
             for k, P in enumerate(sets) for n in ns]
    out = pool_map(_lyap_cell, cells, workers)
    for k, P in enumerate(sets):
        label = f"set{k}"
        res = {n: out[k * len(ns) + i] for i, n in enumerate(ns)}
        sd_ratio, xi_sup, drift_res, fd_res = {}, {}, {}, {}
        G_all, x_all = [], []
        gs, ags = [], []
        for n, r in res.items():
            recs = r["records"]
            for rec in recs:
                rep.records.append({"set": label, **rec})
            sd_ratio[n] = max(rec["D_absmax"] / (rec["g"] + 1.0) for rec in recs)
            xi_sup[n] = max(rec["diagnostics"]["xi_sup"] for rec in recs)
            drift_res[n] = max(abs(rec["drift_residual"]) / max(rec["g"], 1.0) for rec in recs)
            fd_res[n] = max(f["rel"] for f in r["fd"])
            G_all += [rec["G"] for rec in recs]
            x_all += [abs(rec["x"][0]) + abs(rec["x"][1]) for rec in recs]
            gs += [d["g"] for d in r["drift"]]
            ags += [d["AG"] for d in r["drift"]]
            rep.table.append({"set": label, "n": n, "second_diff_ratio": sd_ratio[n], "xi_sup": xi_sup[n],
                              "drift_identity": drift_res[n], "fd_residual": fd_res[n],
                              "one_sided_points": sum(rec["diagnostics"]["one_sided"] for rec in recs)})
        eps, kappa = lyapunov.fit_drift_inequality(gs, ags)
        per_n_fit = {}
        for n, r in res.items():
            e_n, k_n = lyapunov.fit_drift_inequality([d["g"] for d in r["drift"]], [d["AG"] for d in r["drift"]])
            per_n_fit[str(n)] = {"eps": e_n, "kappa": k_n}
        viol = int(sum(a > -eps * g + kappa + 1e-9 * (1 + abs(a)) for g, a in zip(gs, ags)))
        c0 = 2.0 * lyapunov.make_distance(ly["C"]).gap_bound()
        G_arr, x_arr = np.array(G_all), np.array(x_all)
        far = x_arr > 2 * c0
        c1 = float(np.min(G_arr[far] / (x_arr[far] - c0) ** 2)) if far.any() else float("nan")
        joint_sd = max(sd_ratio.values())
        growth = joint_sd / max(min(sd_ratio.values()), 1e-300)
        xi_joint, xi_worst, xi_ok = _stability(xi_sup, 0.2)
        rep.per_n[label] = {"params": P.to_dict(),
                            **{str(n): {"second_diff_ratio": sd_ratio[n], "xi_sup": xi_sup[n],
                                        "drift_identity": drift_res[n], "fd_residual": fd_res[n],
                                        "fit": per_n_fit[str(n)],
                                        "AG_far_e1": res[n]["far"]["AG"], "AG_origin": res[n]["origin"]["AG"]}
                               for n in ns}}
        rep.constants[label] = {"eps_hat": eps, "kappa_hat": kappa, "second_diff_C": joint_sd,
                                "C6_hat": xi_joint, "G_growth_c0": c0, "G_growth_c1": c1}
        tol = ly["drift_identity_tol"]
        rep.verdicts += [
            check(f"{label}: drift identity grad_v G = -g (relative, unit floor)", max(drift_res.values()), tol,
                  max(drift_res.values()) <= tol),
            check(f"{label}: gradient vs central differences (relative, unit floor)", max(fd_res.values()),
                  ly["fd_tol"], max(fd_res.values()) <= ly["fd_tol"]),
            check(f"{label}: second-difference ratio bounded uniformly in n (max/min over n)", growth,
                  ly["second_diff_growth_limit"], growth <= ly["second_diff_growth_limit"]),
            check(f"{label}: generator drift eps_hat > 0 with all states below the line",
                  {"eps": eps, "kappa": kappa, "violations": viol}, "eps>0, kappa finite, 0 violations",
                  eps > 0 and math.isfinite(kappa) and viol == 0),
            check(f"{label}: AG < 0 far out along +e1", {str(n): res[n]["far"]["AG"] for n in ns}, 0.0,
                  all(res[n]["far"]["AG"] < 0 for n in ns)),
            check(f"{label}: |AG(origin)| <= kappa_hat", {str(n): res[n]["origin"]["AG"] for n in ns}, kappa,
                  all(abs(res[n]["origin"]["AG"]) <= kappa for n in ns)),
            check(f"{label}: xi sup-norm constant stable across n (within 20%)", xi_sup, xi_joint, xi_ok),
        ]
        if far.any():
            rep.verdicts.append(check(f"{label}: quadratic growth envelope of G", c1, "> 0", c1 > 0))
        else:
            rep.verdicts.append(not_run(f"{label}: quadratic growth envelope of G",
                                        f"no sweep point with |x|_1 > {2 * c0:g}"))
    return _finish(rep, t0)


# ---------------------------------------------------------------------------
# dfl diagnostics


def _generic_max_error(sys, x, horizon):
    traj = dfl.integrate(sys, x, stop=dfl.STOP_HORIZON, horizon=horizon)
    sol = solve_ivp(lambda t, y: drift_scaled(sys, (max(y[0], sys.x1_min), max(y[1], sys.x2_min))),
                    (0.0, horizon), np.asarray(x, float), method="DOP853", rtol=1e-13, atol=1e-13,
                    dense_output=True, max_step=0.05)
    ts = np.linspace(0.0, horizon, 2001)
    ys = sol.sol(ts)
    y1, y2 = traj.state(ts)
    return float(max(np.max(np.abs(ys[0] - y1)), np.max(np.abs(ys[1] - y2))))


def _dfl_cell(args):
    pdict, n, sec, seed = args
    sys = scale_system(SystemParams.from_dict(pdict), n)
    rng = np.random.default_rng(seed)
    region = dfl.AlphaRegion.for_system(sys)
    C3, C4 = sec["band"]
    rows = []
    for x in random_starts(sys, sec["starts"], sec["radius_min"], sec["radius_max"], rng):
        traj = dfl.integrate(sys, x)
        nx = float(np.abs(x).sum())
        sw = traj.switching_points
        t_prime = max((s.t_end for s in traj.segments if s.domain.value >= 2), default=0.0)
        rows.append({"x": list(x), "norm": nx, "tau": traj.tau_alpha, "sup": traj.sup_norm,
                     "K": len(sw), "t_K": max(sw, default=0.0), "t_prime": t_prime,
                     "band": dfl.band_occupation(sys, x, C3, C4),
                     "grazing": sum(sp.grazing for sp in traj.switching)})
    # closed form inside the alpha-ball
    P = sys.params
    cf = 0.0
    ts = np.linspace(0.0, 10.0, 501)
    for _ in range(50):
        x = l1_point(region.alpha * rng.uniform(), rng.uniform(0, 2 * math.pi))
        traj = dfl.integrate(sys, x, stop=dfl.STOP_HORIZON, horizon=10.0)
        y1, y2 = traj.state(ts)
        cf = max(cf, float(np.max(np.abs(y1 - x[0] * np.exp(-P.mu12 * ts)))),
                 float(np.max(np.abs(y2 - x[1] * np.exp(-P.mu22 * ts)))))
    gen = 0.0
    for x in random_starts(sys, sec["generic_starts"], sec["radius_min"], sec["radius_max"], rng):
        tau = dfl.hitting_time_alpha(sys, x)
        gen = max(gen, _generic_max_error(sys, x, max(tau, 1e-3)))
    return {"rows": rows, "closed_form_err": cf, "generic_err": gen}


def run_dfl_diagnostics(cfg: ExperimentConfig, workers: int = 1) -> Report:
    t0 = time.perf_counter()
    rep = _new_report("dfl", cfg)
    sec = cfg.section("dfl")
    ns = [int(n) for n in sec["n_list"]]
    cells = [(cfg.doc["params"], n, sec, derive_seed(cfg.root_seed, "dfl", n)) for n in ns]
    out = dict(zip(ns, pool_map(_dfl_cell, cells, workers)))
    T, Cp, Kmax, T3, p99, kap, T3_small, T3_large = {}, {}, {}, {}, {}, {}, {}, {}
    hist = np.zeros(17, dtype=int)
    for n in ns:
        rows = out[n]["rows"]
        norm = np.array([r["norm"] for r in rows])
        tau = np.array([r["tau"] for r in rows])
        T[n] = float(np.max(tau / norm))
        p99[n] = float(np.percentile(tau / norm, 99))
        Cp[n] = float(np.max([r["sup"] / r["norm"] for r in rows]))
        kap[n] = float(np.max([r["t_prime"] / r["norm"] for r in rows]))
        Kmax[n] = int(max(r["K"] for r in rows))
        band = np.array([r["band"] for r in rows])
        T3[n] = float(band.max())
        T3_small[n] = float(band[norm < 10].max()) if (norm < 10).any() else 0.0
        T3_large[n] = float(band[norm >= 10].max()) if (norm >= 10).any() else 0.0
        for r in rows:
            hist[r["K"]] += 1
            rep.records.append({"n": n, **r})
        rep.table.append({"n": n, "T_hat": T[n], "tau_ratio_p99": p99[n], "Cprime_hat": Cp[n],
                          "K_max": Kmax[n], "T3_hat": T3[n], "kappa_tprime": kap[n],
                          "closed_form_err": out[n]["closed_form_err"], "generic_err": out[n]["generic_err"]})
    frac = sec["stability"]
    Tj, Tw, Tok = _stability(T, frac)
    Cj, Cw, Cok = _stability(Cp, frac)
    Bj, Bw, Bok = _stability(T3, frac)
    Pj, Pw, Pok = _stability(p99, frac)
    bins = {"small": max(T3_small.values()), "large": max(T3_large.values())}
    Rj, Rw, Rok = _stability(bins, frac)
    tK_ratio = max(max(r["t_K"] / r["norm"] for r in out[n]["rows"]) for n in ns)
    rep.constants.update({"T_hat": Tj, "Cprime_hat": Cj, "T3_hat": Bj, "K_max": max(Kmax.values()),
                          "kappa_tprime": max(kap.values()),
                          "per_n": {"T_hat": T, "Cprime_hat": Cp, "T3_hat": T3, "tau_ratio_p99": p99,
                                    "kappa_tprime": kap}})
    rep.per_n = {str(n): rep.table[i] for i, n in enumerate(ns)}
    rep.constants["switch_count_histogram"] = hist[: max(Kmax.values()) + 1].tolist()
    cf = max(out[n]["closed_form_err"] for n in ns)
    ge = max(out[n]["generic_err"] for n in ns)
    rep.verdicts += [
        check("switching count <= 4", max(Kmax.values()), 4, max(Kmax.values()) <= 4),
        check("tau <= T_hat |x|: per-n fits within 20% of joint", {"per_n": T, "worst_ratio": Tw}, Tj, Tok),
        check("sup|y| <= C'_hat |x|: per-n fits within 20% of joint", {"per_n": Cp, "worst_ratio": Cw}, Cj, Cok),
        check("last switching time <= T_hat |x|", tK_ratio, Tj, tK_ratio <= Tj * (1 + 1e-12)),
        check("band occupation T3_hat: per-n within 20% of joint", {"per_n": T3, "worst_ratio": Bw}, Bj, Bok),
        check("band occupation T3_hat: |x|<10 vs |x|>=10 within 20%", {"bins": bins, "worst_ratio": Rw}, Rj, Rok),
        check("99th percentile of tau/|x| stable across n (20%)", {"per_n": p99, "worst_ratio": Pw}, Pj, Pok),
        check("closed form in alpha-ball (sup error)", cf, sec["closed_form_tol"], cf <= sec["closed_form_tol"]),
        check("closed form vs DOP853 on global drift (sup error)", ge, sec["generic_tol"], ge <= sec["generic_tol"]),
    ]
    return _finish(rep, t0)


# ---------------------------------------------------------------------------
# renewal


def _renewal_cell(args):
    pdict, n, sec, seed = args
    sys = scale_system(SystemParams.from_dict(pdict), n)
    level = sec["level"]
    level = int(round(sys.params.psi22 * n)) if level == "center" else int(level)
    cfg = ctmc.SimConfig(seed=seed, horizon=sec["horizon"], burn_in=sec["burn_in"])
    try:
        st = ctmc.renewal_cycles(sys, cfg, level=level)
        return st, ctmc.renewal_residuals(sys, st)
    except ctmc.InsufficientDataError as exc:
        return None, str(exc)


def run_renewal(cfg: ExperimentConfig, workers: int = 1) -> Report:
    t0 = time.perf_counter()
    rep = _new_report("renewal", cfg)
    sec = cfg.section("renewal")
    ns = [int(n) for n in sec["n_list"]]
    cells = [(cfg.doc["params"], n, sec, derive_seed(cfg.root_seed, "renewal", n)) for n in ns]
    for n, (st, res) in zip(ns, pool_map(_renewal_cell, cells, workers)):
        if st is None:
            rep.per_n[str(n)] = {"error": res}
            for rule in ("E A = lambda1 n T", "E A - E S = -b mu12 sqrt(n) T", "cycle statistics"):
                rep.verdicts.append(not_run(f"n={n}: {rule}", res))
            continue
        row = {"n": n, "level": st.level, "cycles": st.cycle_count, "T": st.mean_cycle_T,
               "A": st.mean_arrivals_A, "S": st.mean_potential_services_S,
               "resid_A": res["arrivals"].estimate, "hw_A": res["arrivals"].half_width,
               "resid_S": res["services"].estimate, "hw_S": res["services"].half_width}
        rep.table.append(row)
        rep.per_n[str(n)] = row
        rep.records.append(row)
        rep.verdicts.append(check(f"n={n}: E A = lambda1 n T (95% CI of residual contains 0)",
                                  res["arrivals"].to_dict(), 0.0, res["arrivals_ok"]))
        rep.verdicts.append(check(f"n={n}: E A - E S = -b mu12 sqrt(n) T (95% CI of residual contains 0)",
                                  res["services"].to_dict(), 0.0, res["services_ok"]))
        rep.verdicts.append(check(f"n={n}: cycle statistics positive and finite",
                                  [st.mean_cycle_T, st.mean_arrivals_A, st.mean_potential_services_S], "> 0",
                                  all(v > 0 and math.isfinite(v) for v in
                                      (st.mean_cycle_T, st.mean_arrivals_A, st.mean_potential_services_S))))
    return _finish(rep, t0)


CAMPAIGNS = {
    "simulate": run_simulate,
    "tightness": run_tightness,
    "interchange": run_interchange,
    "lyapunov": run_lyapunov_certificate,
    "dfl": run_dfl_diagnostics,
    "renewal": run_renewal,
}
