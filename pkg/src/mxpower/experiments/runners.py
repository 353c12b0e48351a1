"""Simulation runners. Each returns a ResultTable of replicate-level rows.

Every random draw comes from a stream keyed by (seed, experiment, setting,
replicate, role), so results do not depend on the thread count or on the
order in which replicates finish.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import __version__
from ..crt import crt_run, gaussian_linear_density, likelihood_statistic, marginal_correlation_statistic
from ..knockoffs import (
    GaussianKnockoffDesign,
    fit_symmetric_fbar,
    gaussian_linear_fbar,
    knockoff_filter,
    likelihood_contrast,
    marginal_correlation_contrast,
    one_bit_pvalue,
    sample_knockoffs,
)
from ..models import Dataset, GaussianDesign, MarkovChainModel, calibrate_random_effects
from ..mx2 import gcm_statistic, gcm_u_batch, mx2_statistics, mx2_test
from ..numkit import chi2_quantile, chi2_sf, derive_stream, gauss_hermite, norm_cdf, norm_ppf, norm_sf, stable_key
from ..power_theory import (
    AmpInputs,
    GammaPrior,
    LocalAlternative,
    amp_lambda_to_lasso,
    amp_solve,
    lasso_crt_power,
    local_power,
)
from ..regression import lasso, ridge_cv
from .table import ResultTable

CALIBRATION_GRID = {"n_test": (10, 25, 100), "snr": (0.0, 1.0, 5.0), "p": (20, 100, 500)}


def _rng(cfg, *keys):
    return derive_stream(cfg.seed, cfg.kind, *keys).generator()


def _map(fn, ids, threads):
    """Apply ``fn`` to each id; results come back in id order."""
    ids = list(ids)
    if threads <= 1:
        return [fn(i) for i in ids]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ids))


def _table(cfg, columns, rows, summary):
    return ResultTable(cfg.kind, columns, rows, cfg.to_dict(), __version__, summary)


def ks_distance_normal(samples):
    """Kolmogorov-Smirnov distance between the sample and N(0, 1)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    F = np.array([norm_cdf(v) for v in x])
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_critical(n, level=0.01):
    """Large-sample KS critical value sqrt(-log(level / 2) / 2) / sqrt(n)."""
    return math.sqrt(-0.5 * math.log(level / 2.0)) / math.sqrt(n)


def binomial_band(rate, n, z=3.0):
    """rate +/- z binomial standard errors for n trials."""
    half = z * math.sqrt(rate * (1.0 - rate) / n)
    return rate - half, rate + half


def _covariates(cfg, p):
    if cfg.design == "markov":
        return MarkovChainModel(cfg.pi_init, cfg.pi_flip, p)
    return GaussianDesign(cfg.d, p)


def _fit_nuisance(cfg, model, resp, gamma, key):
    rng = _rng(cfg, *key, "train")
    _, Z = model.sample(cfg.n_train, rng)
    Y = resp.sample(Z, rng, gamma=gamma)
    fold_seed = stable_key(cfg.seed, cfg.kind, *key, "folds") % 2**32
    return ridge_cv(Z, Y, K=cfg.ridge_folds, seed=fold_seed)


# ---------------------------------------------------------------------------
# Calibration of U under the null
# ---------------------------------------------------------------------------

CALIBRATION_COLUMNS = [
    "setting", "n_test", "snr", "p", "mode", "replicate", "u", "t",
    "p_f", "reject_f", "p_t", "reject_t", "u_sorted", "normal_quantile",
]


def calibration_settings(cfg):
    base = {"n_test": cfg.n_test, "snr": cfg.snr, "p": cfg.p}
    if not cfg.sweep:
        return [base]
    out = []
    for name, values in CALIBRATION_GRID.items():
        for v in values:
            s = dict(base)
            s[name] = v
            out.append(s)
    return out


def run_calibration(cfg):
    """Null distribution of U: unconditional draws and draws given one (Y, Z)."""
    rows, summary = [], {}
    c_f = chi2_quantile(cfg.d, 1.0 - cfg.alpha)
    z_t = norm_ppf(1.0 - cfg.alpha)
    R = cfg.replicates
    for setting in calibration_settings(cfg):
        n_test, snr, p = int(setting["n_test"]), float(setting["snr"]), int(setting["p"])
        label = f"n_test={n_test},snr={snr:g},p={p}"
        key = ("setting", n_test, snr, p)
        model = _covariates(cfg, p)
        resp = calibrate_random_effects(model, snr, cfg.sigma_eps2)
        gamma = resp.draw_gamma(p, _rng(cfg, *key, "gamma"))
        ghat = _fit_nuisance(cfg, model, resp, gamma, key)
        moments = model.moment_oracle()

        def one(r):
            rng = _rng(cfg, *key, "unconditional", r)
            X, Z = model.sample(n_test, rng)
            Y = resp.sample(Z, rng, gamma=gamma)
            return mx2_statistics(Dataset(X, Y, Z), ghat, moments)[2]

        u_unc = np.array(_map(one, range(R), cfg.threads))

        rng = _rng(cfg, *key, "conditional")
        X, Z = model.sample(n_test, rng)
        Y = resp.sample(Z, rng, gamma=gamma)
        u_cond = gcm_u_batch(model.resample(Z, rng, size=R), Y, Z, ghat, moments)

        for mode, U in (("unconditional", u_unc), ("conditional", u_cond)):
            u1 = U[:, 0]
            t = np.sum(U * U, axis=1)
            order = np.sort(u1)
            nq = [norm_ppf((i + 0.5) / R) for i in range(R)]
            for r in range(R):
                rows.append({
                    "setting": label, "n_test": n_test, "snr": snr, "p": p, "mode": mode,
                    "replicate": r, "u": float(u1[r]), "t": float(t[r]),
                    "p_f": chi2_sf(cfg.d, float(t[r])), "reject_f": bool(t[r] > c_f),
                    "p_t": norm_sf(float(u1[r])), "reject_t": bool(u1[r] > z_t),
                    "u_sorted": float(order[r]), "normal_quantile": nq[r],
                })
            ks = ks_distance_normal(u1)
            crit = ks_critical(R)
            summary[f"{label}/{mode}"] = {
                "training_stream": derive_stream(cfg.seed, cfg.kind, *key, "train").stream_id,
                "fold_seed": ghat.fold_seed,
                "nuisance_fit": "ridge_cv, unpenalized intercept, unstandardized columns",
                "ridge_lambda": ghat.lambda_chosen,
                "conditional_stream": derive_stream(cfg.seed, cfg.kind, *key, "conditional").stream_id,
                "ks": ks,
                "ks_critical_1pct": crit,
                "ks_pass": ks <= crit,
                "size_t": float(np.mean(u1 > z_t)),
                "size_f": float(np.mean(t > c_f)),
                "mean_u": float(np.mean(u1)),
                "var_u": float(np.var(u1)),
            }
    return _table(cfg, CALIBRATION_COLUMNS, rows, summary)


# ---------------------------------------------------------------------------
# MX(2) F-test against the CRT with the same statistic
# ---------------------------------------------------------------------------

EQUIVALENCE_COLUMNS = [
    "replicate", "n_test", "t", "p_f", "reject_f", "crt_threshold", "crt_p_value",
    "crt_gamma", "reject_crt", "disagree", "threshold_gap",
]


def run_equivalence(cfg):
    key = ("setting", cfg.n_test, cfg.snr, cfg.p)
    model = _covariates(cfg, cfg.p)
    resp = calibrate_random_effects(model, cfg.snr, cfg.sigma_eps2)
    gamma = resp.draw_gamma(cfg.p, _rng(cfg, *key, "gamma"))
    ghat = _fit_nuisance(cfg, model, resp, gamma, key)
    moments = model.moment_oracle()
    stat = gcm_statistic(ghat, moments)
    c = chi2_quantile(cfg.d, 1.0 - cfg.alpha)

    def one(r):
        rng = _rng(cfg, *key, "data", r)
        X, Z = model.sample(cfg.n_test, rng)
        Y = resp.sample(Z, rng, gamma=gamma)
        data = Dataset(X, Y, Z)
        f = mx2_test(data, ghat, moments, cfg.alpha)
        crt = crt_run(stat, data, model, cfg.B, cfg.alpha,
                      _rng(cfg, *key, "resample", r), coin_rng=_rng(cfg, *key, "coin", r))
        return {
            "replicate": r, "n_test": cfg.n_test, "t": f.t, "p_f": f.p_value, "reject_f": f.reject,
            "crt_threshold": crt.threshold, "crt_p_value": crt.p_value, "crt_gamma": crt.gamma,
            "reject_crt": crt.reject, "disagree": f.reject != crt.reject,
            "threshold_gap": abs(crt.threshold - c),
        }

    rows = _map(one, range(cfg.replicates), cfg.threads)
    summary = {
        "chi2_critical": c,
        "disagreement_rate": float(np.mean([r["disagree"] for r in rows])),
        "median_threshold_gap": float(np.median([r["threshold_gap"] for r in rows])),
        "size_f": float(np.mean([r["reject_f"] for r in rows])),
        "size_crt": float(np.mean([r["reject_crt"] for r in rows])),
    }
    return _table(cfg, EQUIVALENCE_COLUMNS, rows, summary)


# ---------------------------------------------------------------------------
# Power under local alternatives
# ---------------------------------------------------------------------------

POWER_COLUMNS = [
    "mode", "h", "replicate", "n", "beta", "t", "reject_f", "reject_crt",
    "realized_err2", "theory",
]


def _exact_proportion_gamma(prior, p, rng):
    """Coefficients whose empirical law matches the prior's atoms exactly (up to rounding)."""
    counts = np.floor(prior.probs * p).astype(int)
    short = p - counts.sum()
    extra = np.argsort(-(prior.probs * p - counts), kind="stable")[:short]
    counts[extra] += 1
    vals = np.repeat(prior.values, counts)
    return rng.permutation(vals)


def _crt_reject(cfg, stat, data, design, key, r):
    if cfg.B <= 0:
        return ""
    out = crt_run(stat, data, design, cfg.B, cfg.alpha,
                  _rng(cfg, *key, "resample", r), coin_rng=_rng(cfg, *key, "coin", r))
    return out.reject


def _power_synthetic(cfg):
    n, p = cfg.n_test, cfg.p
    design = GaussianDesign(1, p)
    moments = design.moment_oracle()
    g_coef = _rng(cfg, "g").standard_normal(p) / math.sqrt(p)
    rows, summary = [], {}
    for h in cfg.h_grid:
        beta = h / math.sqrt(n)
        theory = local_power(LocalAlternative([h], cfg.sigma2, [[cfg.err2]], [[1.0]]), 1, cfg.alpha)
        key = ("h", h)

        def one(r):
            rng = _rng(cfg, *key, "data", r)
            X, Z = design.sample(n, rng)
            Y = X[:, 0] * beta + Z @ g_coef + math.sqrt(cfg.sigma2) * rng.standard_normal(n)
            # a nuisance estimate off by independent N(0, err2) noise at each row
            xi = math.sqrt(cfg.err2) * _rng(cfg, *key, "nuisance", r).standard_normal(n)

            def ghat(Zq):
                return Zq @ g_coef + xi

            data = Dataset(X, Y, Z)
            f = mx2_test(data, ghat, moments, cfg.alpha)
            crt = _crt_reject(cfg, gcm_statistic(ghat, moments), data, design, key, r)
            return {"mode": "synthetic", "h": h, "replicate": r, "n": n, "beta": beta, "t": f.t,
                    "reject_f": f.reject, "reject_crt": crt, "realized_err2": cfg.err2,
                    "theory": theory}

        block = _map(one, range(cfg.replicates), cfg.threads)
        rows.extend(block)
        summary[f"h={h:g}"] = _power_summary(block, theory)
    return rows, summary


def _power_summary(block, theory):
    R = len(block)
    f = float(np.mean([r["reject_f"] for r in block]))
    out = {"theory": theory, "power_f": f, "se_f": math.sqrt(max(f * (1 - f), 1e-12) / R),
           "mean_realized_err2": float(np.mean([r["realized_err2"] for r in block]))}
    crt = [r["reject_crt"] for r in block if r["reject_crt"] != ""]
    if crt:
        out["power_crt"] = float(np.mean(crt))
    return out


def lasso_setting(cfg):
    """(n, n_train, p, gamma, AMP solution, lasso penalty) for the lasso power mode."""
    n = cfg.n_total
    p = int(round(n / cfg.delta))
    n_train = int(round(cfg.pi_split * n))
    prior = GammaPrior(cfg.gamma_values, cfg.gamma_probs)
    gamma = _exact_proportion_gamma(prior, p, _rng(cfg, "gamma")) / math.sqrt(n)
    sol = amp_solve(AmpInputs(cfg.lasso_lambda, cfg.delta, cfg.pi_split, cfg.sigma2, prior),
                    gauss_hermite(cfg.quad_order))
    return n, n_train, p, gamma, sol, amp_lambda_to_lasso(cfg.lasso_lambda, n_train)


def _power_lasso(cfg):
    n, n_train, p, gamma, sol, lam = lasso_setting(cfg)
    n_test = n - n_train
    if n_test < 2:
        raise ValueError("lasso power mode needs pi_split < 1 so that test data remain")
    design = GaussianDesign(1, p)
    moments = design.moment_oracle()
    rows, summary = [], {"alpha_star": sol.alpha_star, "tau_star": sol.tau_star, "lasso_penalty": lam}
    for h in cfg.h_grid:
        beta = h / math.sqrt(n)
        theory = lasso_crt_power(h, cfg.pi_split, sol.tau_star, cfg.alpha)
        key = ("h", h)

        def one(r):
            rng = _rng(cfg, *key, "data", r)
            X, Z = design.sample(n, rng)
            Y = X[:, 0] * beta + Z @ gamma + math.sqrt(cfg.sigma2) * rng.standard_normal(n)
            tr, te = slice(0, n_train), slice(n_train, n)
            fit = lasso(Z[tr], Y[tr], lam)
            data = Dataset(X[te], Y[te], Z[te])
            f = mx2_test(data, fit, moments, cfg.alpha)
            crt = _crt_reject(cfg, gcm_statistic(fit, moments), data, design, key, r)
            err = fit.coefficients - gamma
            return {"mode": "lasso", "h": h, "replicate": r, "n": n, "beta": beta, "t": f.t,
                    "reject_f": f.reject, "reject_crt": crt,
                    "realized_err2": float(err @ err + fit.intercept ** 2), "theory": theory}

        block = _map(one, range(cfg.replicates), cfg.threads)
        rows.extend(block)
        summary[f"h={h:g}"] = _power_summary(block, theory)
    return rows, summary


def run_power(cfg):
    if cfg.power_mode == "synthetic":
        rows, summary = _power_synthetic(cfg)
    else:
        rows, summary = _power_lasso(cfg)
    return _table(cfg, POWER_COLUMNS, rows, summary)


# ---------------------------------------------------------------------------
# Knockoff FDR
# ---------------------------------------------------------------------------

KNOCKOFF_COLUMNS = [
    "replicate", "n_selected", "n_false", "fdp", "power", "k_stop", "selected", "order", "pvalues",
]


def ar1_covariance(m, rho):
    idx = np.arange(m)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _join(values):
    return ";".join(f"{v:g}" if isinstance(v, float) else str(v) for v in values)


def run_knockoff_fdr(cfg):
    m, n = cfg.m, cfg.n_test
    design = GaussianKnockoffDesign(ar1_covariance(m, cfg.rho))
    srng = _rng(cfg, "signals")
    support = np.sort(srng.choice(m, size=cfg.n_signals, replace=False))
    beta = np.zeros(m)
    beta[support] = cfg.amplitude / math.sqrt(n) * srng.choice([-1.0, 1.0], size=cfg.n_signals)
    is_signal = beta != 0
    oracle = likelihood_contrast(gaussian_linear_fbar(beta, cfg.sigma2))

    def one(r):
        rng = _rng(cfg, "data", r)
        X = design.sample(n, rng)
        Y = X @ beta + math.sqrt(cfg.sigma2) * rng.standard_normal(n)
        a = sample_knockoffs(design, X, _rng(cfg, "knockoffs", r))
        T = fit_symmetric_fbar(a, Y) if cfg.contrast == "fitted" else oracle
        sel = knockoff_filter(T, a, Y, cfg.q)
        chosen = np.array(sel.selected, dtype=int)
        n_false = int(np.sum(~is_signal[chosen])) if chosen.size else 0
        n_true = chosen.size - n_false
        return {
            "replicate": r, "n_selected": int(chosen.size), "n_false": n_false,
            "fdp": n_false / max(1, chosen.size),
            "power": n_true / cfg.n_signals if cfg.n_signals else 0.0,
            "k_stop": sel.seqstep.k_stop, "selected": _join(sel.selected),
            "order": _join(int(j) for j in sel.order), "pvalues": _join(float(v) for v in sel.pvalues),
        }

    rows = _map(one, range(cfg.replicates), cfg.threads)
    fdp = np.array([r["fdp"] for r in rows])
    summary = {
        "support": support.tolist(),
        "fdr": float(fdp.mean()),
        "fdr_se": float(fdp.std(ddof=1) / math.sqrt(len(rows))) if len(rows) > 1 else 0.0,
        "power": float(np.mean([r["power"] for r in rows])),
        "target_q": cfg.q,
    }
    return _table(cfg, KNOCKOFF_COLUMNS, rows, summary)


# ---------------------------------------------------------------------------
# Lasso fixed point
# ---------------------------------------------------------------------------

AMP_COLUMNS = [
    "lambda", "delta", "pi", "sigma2", "alpha_star", "tau_star", "residual_lambda",
    "residual_tau2", "iterations", "predicted_err2", "large_lambda_tau2",
    "check_n", "check_p", "realized_err2",
]


def run_amp(cfg):
    prior = GammaPrior(cfg.gamma_values, cfg.gamma_probs)
    rule = gauss_hermite(cfg.quad_order)
    lams = cfg.lambda_grid or [cfg.lasso_lambda]
    rows = []
    for lam in lams:
        sol = amp_solve(AmpInputs(lam, cfg.delta, cfg.pi_split, cfg.sigma2, prior), rule)
        row = {
            "lambda": lam, "delta": cfg.delta, "pi": cfg.pi_split, "sigma2": cfg.sigma2,
            "alpha_star": sol.alpha_star, "tau_star": sol.tau_star,
            "residual_lambda": sol.residuals[0], "residual_tau2": sol.residuals[1],
            "iterations": sol.iterations, "predicted_err2": sol.err2,
            "large_lambda_tau2": cfg.sigma2 + prior.second_moment / cfg.delta,
            "check_n": "", "check_p": "", "realized_err2": "",
        }
        if cfg.amp_check_n:
            n = cfg.amp_check_n
            n_train, p = int(round(cfg.pi_split * n)), int(round(n / cfg.delta))
            rng = _rng(cfg, "check", lam)
            gamma = _exact_proportion_gamma(prior, p, rng) / math.sqrt(n)
            Z = rng.standard_normal((n_train, p))
            Y = Z @ gamma + math.sqrt(cfg.sigma2) * rng.standard_normal(n_train)
            fit = lasso(Z, Y, amp_lambda_to_lasso(lam, n_train))
            err = fit.coefficients - gamma
            row.update(check_n=n_train, check_p=p, realized_err2=float(err @ err + fit.intercept ** 2))
        rows.append(row)
    summary = {"max_abs_residual": float(max(max(abs(r["residual_lambda"]), abs(r["residual_tau2"])) for r in rows))}
    return _table(cfg, AMP_COLUMNS, rows, summary)


# ---------------------------------------------------------------------------
# Likelihood statistics against alternatives
# ---------------------------------------------------------------------------

OPTIMALITY_COLUMNS = ["part", "replicate", "statistic", "coordinate", "is_signal", "reject", "p_value"]


def run_optimality(cfg):
    """CRT rejection rates and knockoff P[p = 1/2] for likelihood and rival statistics.

    All CRT statistics in one replicate share the data, the resamples and the
    tie-breaking coin, so differences in power are paired.
    """
    rows = []
    # CRT part: Markov-chain covariates, known Gaussian-linear response
    model = MarkovChainModel(cfg.pi_init, cfg.pi_flip, cfg.p)
    resp = calibrate_random_effects(model, cfg.snr, cfg.sigma_eps2)
    gamma = resp.draw_gamma(cfg.p, _rng(cfg, "gamma"))
    lik = likelihood_statistic(gaussian_linear_density([cfg.beta], gamma, cfg.sigma_eps2), log=True)
    stats = {"likelihood": lik, "likelihood_repeat": lik,
             "marginal_correlation": marginal_correlation_statistic(), "negated_likelihood": -lik}

    def one_crt(r):
        rng = _rng(cfg, "crt", r)
        X, Z = model.sample(cfg.n_test, rng)
        Y = X[:, 0] * cfg.beta + resp.sample(Z, rng, gamma=gamma)
        data = Dataset(X, Y, Z)
        out = []
        for name, stat in stats.items():
            res = crt_run(stat, data, model, cfg.B, cfg.alpha,
                          _rng(cfg, "crt", "resample", r), coin_rng=_rng(cfg, "crt", "coin", r))
            out.append({"part": "crt", "replicate": r, "statistic": name, "coordinate": "",
                        "is_signal": "", "reject": res.reject, "p_value": res.p_value})
        return out

    # knockoff part: independent standard normal covariates
    m, k = cfg.opt_m, cfg.opt_signals
    design = GaussianKnockoffDesign(np.eye(m))
    beta_k = np.zeros(m)
    beta_k[:k] = cfg.beta
    contrasts = {"likelihood": likelihood_contrast(gaussian_linear_fbar(beta_k, cfg.sigma_eps2)),
                 "marginal_correlation": marginal_correlation_contrast()}

    def one_ko(r):
        rng = _rng(cfg, "knockoff", r)
        X = design.sample(cfg.n_test, rng)
        Y = X @ beta_k + math.sqrt(cfg.sigma_eps2) * rng.standard_normal(cfg.n_test)
        a = sample_knockoffs(design, X, rng)
        out = []
        for name, T in contrasts.items():
            for j in range(m):
                pv = one_bit_pvalue(T, a, Y, j)
                out.append({"part": "knockoff", "replicate": r, "statistic": name, "coordinate": j,
                            "is_signal": j < k, "reject": pv == 0.5, "p_value": pv})
        return out

    for block in _map(one_crt, range(cfg.replicates), cfg.threads):
        rows.extend(block)
    for block in _map(one_ko, range(cfg.replicates), cfg.threads):
        rows.extend(block)

    R = cfg.replicates
    summary = {"crt": {}, "knockoff": {}}
    for name in stats:
        rate = float(np.mean([r["reject"] for r in rows if r["part"] == "crt" and r["statistic"] == name]))
        summary["crt"][name] = {"power": rate, "se": math.sqrt(max(rate * (1 - rate), 1e-12) / R)}
    for name in contrasts:
        per = []
        for j in range(m):
            hits = [r["reject"] for r in rows
                    if r["part"] == "knockoff" and r["statistic"] == name and r["coordinate"] == j]
            per.append(float(np.mean(hits)))
        summary["knockoff"][name] = per
    return _table(cfg, OPTIMALITY_COLUMNS, rows, summary)


RUNNERS = {
    "calibration": run_calibration,
    "equivalence": run_equivalence,
    "power": run_power,
    "knockoffs": run_knockoff_fdr,
    "amp": run_amp,
    "optimality": run_optimality,
}


def run_experiment(cfg):
    return RUNNERS[cfg.kind](cfg)
