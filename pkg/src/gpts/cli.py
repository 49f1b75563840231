"""Command-line front end: run campaigns, run verifier suites, emit plot data.

Config files are flat ``key=value`` text with section prefixes
(``objective.``, ``ts.``, ``output.``); command-line flags override file
values.  Exit codes: 0 success, 2 usage/config, 3 I/O, 4 oracle failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import bench, hyperfit
from .bench import (
    CampaignResult,
    Objective,
    average_regret,
    chi_square_tail_bound,
    eigen_diagnostics,
    error_metric,
    f1_objective,
    f2_objective,
    f_beta_objective,
    run_replica,
)
from .engine import TsConfig
from .kernel import Domain, HyperParams, nystrom_feature_map
from .posterior import Dataset, Origin, build_posterior

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ORACLE = 4


class ConfigError(Exception):
    """Invalid configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    objective: str = "f1"
    beta: float = 1.0
    noise_sigma: float = 0.1
    ts: TsConfig = TsConfig()
    replicas: int = 1
    seed: int = 0
    out_dir: str = "out"
    emit_plots: bool = False


_TS_FIELDS = {
    "xi": float,
    "batch_size": int,
    "m_star": int,
    "stop_window": int,
    "stop_tolerance": float,
    "max_stages": int,
    "seed": int,
}

_OBJECTIVES = ("f1", "f2", "f_beta")


def make_objective(cfg: ExperimentConfig) -> Objective:
    if cfg.objective == "f1":
        return f1_objective(cfg.noise_sigma)
    if cfg.objective == "f2":
        return f2_objective(cfg.noise_sigma)
    if cfg.objective == "f_beta":
        try:
            return f_beta_objective(cfg.beta, cfg.noise_sigma)
        except ValueError as exc:
            raise ConfigError(f"objective.beta: {exc}") from exc
    raise ConfigError(
        f"objective.name: unknown objective {cfg.objective!r} "
        f"(known: {', '.join(_OBJECTIVES)})"
    )


def _parse_value(field: str, raw: str, typ):
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError("expected a boolean")
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{field}: cannot parse {raw!r} ({exc})") from exc


def read_config_file(path: str) -> dict:
    """Flat key=value pairs; '#' starts a comment; blank lines ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def parse_config(path: str | None = None, overrides: dict | None = None):
    """Build a validated ExperimentConfig from file values plus overrides."""
    raw = read_config_file(path) if path else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    exp_kwargs = {}
    ts_kwargs = {}
    for key, val in raw.items():
        if key in ("objective.name", "objective"):
            exp_kwargs["objective"] = str(val)
        elif key in ("objective.beta", "beta"):
            exp_kwargs["beta"] = _parse_value(key, str(val), float)
        elif key in ("objective.noise_sigma", "sigma"):
            exp_kwargs["noise_sigma"] = _parse_value(key, str(val), float)
        elif key in ("output.dir", "out"):
            exp_kwargs["out_dir"] = str(val)
        elif key in ("output.emit_plots", "emit_plots"):
            exp_kwargs["emit_plots"] = _parse_value(key, str(val), bool)
        elif key == "replicas":
            exp_kwargs["replicas"] = _parse_value(key, str(val), int)
        elif key == "seed":
            exp_kwargs["seed"] = _parse_value(key, str(val), int)
        else:
            short = key.removeprefix("ts.")
            if short not in _TS_FIELDS:
                raise ConfigError(f"{key}: unknown configuration key")
            ts_kwargs[short] = _parse_value(key, str(val), _TS_FIELDS[short])

    try:
        ts = TsConfig(**ts_kwargs)
    except ValueError as exc:
        raise ConfigError(f"ts: {exc}") from exc
    cfg = ExperimentConfig(ts=ts, **exp_kwargs)
    if cfg.objective not in _OBJECTIVES:
        raise ConfigError(
            f"objective.name: unknown objective {cfg.objective!r} "
            f"(known: {', '.join(_OBJECTIVES)})"
        )
    if cfg.replicas < 1:
        raise ConfigError("replicas: must be >= 1")
    if cfg.noise_sigma < 0:
        raise ConfigError("objective.noise_sigma: must be non-negative")
    if cfg.objective == "f_beta" and cfg.beta <= 0:
        raise ConfigError("objective.beta: must be positive")
    return cfg


def _fmt(x) -> str:
    """Shortest round-trip decimal for floats."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def atomic_write(path: str, text: str) -> None:
    """Write via a temp file and atomic rename; no partial files remain."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_csv(trace, obj: Objective) -> str:
    """One row per observation, with per-stage diagnostics repeated."""
    d = obj.dim
    cols = (
        ["stage"]
        + [f"x{i}" for i in range(d)]
        + ["y", "branch", "error_metric", "regret_prefix"]
        + ["lambda_min_over_t", "lambda_max_over_t", "zeta_hat"]
        + [f"ell_hat_{i}" for i in range(d)]
        + ["sigma_hat"]
    )
    regret = average_regret(trace, obj)
    lines = [",".join(cols)]
    obs = 0
    for rec in trace.stages:
        err = error_metric(rec.mode_estimate, obj.true_argmax)
        hp = rec.hyperparams
        for x, y, origin in zip(rec.points, rec.values, rec.origins):
            branch = (
                "uniform" if origin is Origin.UNIFORM_EXPLORE else "posterior"
            )
            row = (
                [str(rec.stage)]
                + [_fmt(v) for v in x]
                + [_fmt(y), branch, _fmt(err), _fmt(regret[obs])]
                + [_fmt(rec.lambda_min_over_t), _fmt(rec.lambda_max_over_t)]
                + [_fmt(hp.zeta)]
                + [_fmt(v) for v in hp.length_scales]
                + [_fmt(hp.noise_sigma)]
            )
            lines.append(",".join(row))
            obs += 1
    return "\n".join(lines) + "\n"


def summary_text(campaign: CampaignResult) -> str:
    lines = []
    obj = campaign.objective
    final = campaign.traces[0].final_estimate
    lines.append(f"objective={obj.name}")
    lines.append(f"replicas={len(campaign.traces)}")
    for i, v in enumerate(np.atleast_1d(final)):
        lines.append(f"final_estimate.x{i}={_fmt(v)}")
    lines.append(f"stages_to_stop={len(campaign.traces[0].stages)}")
    lines.append(f"decay_slope={_fmt(campaign.slope)}")
    lines.append(f"decay_intercept={_fmt(campaign.intercept)}")
    lines.append(f"decay_r_squared={_fmt(campaign.r_squared)}")
    for stage, med in zip(campaign.stage_grid, campaign.q50):
        lines.append(f"median_error.{stage}={_fmt(med)}")
    return "\n".join(lines) + "\n"


def emit_plot_data(campaign: CampaignResult, out_dir: str) -> list[str]:
    """Write error-decay, regret, and 1-d surface snapshot column files."""
    written = []

    decay = ["# stage q25 q50 q75"]
    for s, a, b, c in zip(
        campaign.stage_grid, campaign.q25, campaign.q50, campaign.q75
    ):
        decay.append(f"{s} {_fmt(a)} {_fmt(b)} {_fmt(c)}")
    path = os.path.join(out_dir, "error_decay.dat")
    atomic_write(path, "\n".join(decay) + "\n")
    written.append(path)

    n_obs = max(r.size for r in campaign.regret_curves)
    rows = ["# observation median_avg_regret"]
    padded = np.full((len(campaign.regret_curves), n_obs), np.nan)
    for i, r in enumerate(campaign.regret_curves):
        padded[i, : r.size] = r
        padded[i, r.size :] = r[-1]
    med = np.median(padded, axis=0)
    for i, v in enumerate(med, 1):
        rows.append(f"{i} {_fmt(v)}")
    path = os.path.join(out_dir, "regret_curve.dat")
    atomic_write(path, "\n".join(rows) + "\n")
    written.append(path)

    if campaign.objective.dim == 1:
        snaps = [
            (rec.stage, rec.surface)
            for rec in campaign.traces[0].stages
            if rec.surface is not None
        ]
        if snaps:
            header = "# x " + " ".join(f"stage_{s}" for s, _ in snaps)
            gx = snaps[0][1][0]
            body = [header]
            for j, xv in enumerate(gx):
                vals = " ".join(_fmt(surf[1][j]) for _, surf in snaps)
                body.append(f"{_fmt(xv)} {vals}")
            path = os.path.join(out_dir, "posterior_mean_surfaces.dat")
            atomic_write(path, "\n".join(body) + "\n")
            written.append(path)
    return written


def _replica_task(args):
    exp_dict, index = args
    cfg = ExperimentConfig(**exp_dict["exp"], ts=TsConfig(**exp_dict["ts"]))
    obj = make_objective(cfg)
    return run_replica(cfg.ts, obj, cfg.seed, index)


def run_experiment_campaign(cfg: ExperimentConfig) -> CampaignResult:
    """Campaign as run_campaign, with optional process-parallel replicas.

    GPTS_THREADS caps worker count; results are identical to sequential
    execution because each replica owns a seed derived only from
    (seed, index).
    """
    obj = make_objective(cfg)
    threads = os.environ.get("GPTS_THREADS")
    workers = int(threads) if threads else os.cpu_count() or 1
    ts = replace(cfg.ts, record_surfaces=cfg.emit_plots)
    if workers > 1 and cfg.replicas > 1:
        from dataclasses import asdict

        exp_dict = {
            "exp": {
                "objective": cfg.objective,
                "beta": cfg.beta,
                "noise_sigma": cfg.noise_sigma,
                "replicas": cfg.replicas,
                "seed": cfg.seed,
            },
            "ts": asdict(ts),
        }
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(
                pool.map(_replica_task, [(exp_dict, i) for i in range(cfg.replicas)])
            )
    else:
        traces = [run_replica(ts, obj, cfg.seed, i) for i in range(cfg.replicas)]
    return _aggregate(ts, obj, traces)


def _aggregate(ts: TsConfig, obj: Objective, traces) -> CampaignResult:
    # mirror bench.run_campaign aggregation over precomputed traces
    n_stages = max(len(tr.stages) for tr in traces)
    errors = np.empty((len(traces), n_stages))
    for i, tr in enumerate(traces):
        row = [error_metric(rec.mode_estimate, obj.true_argmax) for rec in tr.stages]
        row += [row[-1]] * (n_stages - len(row))
        errors[i] = row
    q25, q50, q75 = np.percentile(errors, [25, 50, 75], axis=0)
    try:
        slope, intercept, r2 = bench.decay_rate_fit(q50)
    except bench.InsufficientDataError:
        slope, intercept, r2 = np.nan, np.nan, np.nan
    regrets = [average_regret(tr, obj) for tr in traces]
    return CampaignResult(
        objective=obj,
        config=ts,
        traces=traces,
        stage_grid=np.arange(1, n_stages + 1),
        error_series=errors,
        q25=q25,
        q50=q50,
        q75=q75,
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        regret_curves=regrets,
    )


def cmd_run(cfg: ExperimentConfig, emit_only: bool = False) -> int:
    try:
        obj = make_objective(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        campaign = run_experiment_campaign(cfg)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # oracle or numeric failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
        if not emit_only:
            for i, tr in enumerate(campaign.traces):
                atomic_write(
                    os.path.join(cfg.out_dir, f"trace_{i:03d}.csv"),
                    trace_csv(tr, obj),
                )
            atomic_write(
                os.path.join(cfg.out_dir, "summary.txt"), summary_text(campaign)
            )
        if cfg.emit_plots or emit_only:
            emit_plot_data(campaign, cfg.out_dir)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    final = campaign.traces[0].final_estimate
    print(
        f"final estimate: {np.array2string(np.atleast_1d(final), precision=6)} "
        f"after {len(campaign.traces[0].stages)} stages"
    )
    return EXIT_OK


def verify_chisq(n_draws: int = 1_000_000, seed: int = 0) -> bool:
    """Closed-form tail bound must dominate Monte Carlo estimates."""
    rng = np.random.default_rng(seed)
    ok = True
    print(f"{'m':>4} {'delta':>8} {'bound':>12} {'mc_est':>12} {'margin':>12}")
    for m in (1, 5, 20):
        z = rng.chisquare(m, size=n_draws)
        for delta in (0.0, 1.0, 10.0):
            bound = chi_square_tail_bound(m, delta)
            p_hat = float(np.mean(z > m + delta))
            se = np.sqrt(max(p_hat * (1 - p_hat), 1e-12) / n_draws)
            margin = bound - (p_hat - 3 * se)
            ok &= margin >= 0
            print(f"{m:>4} {delta:>8.1f} {bound:>12.6f} {p_hat:>12.6f} {margin:>12.6f}")
    print("chisq:", "PASS" if ok else "FAIL")
    return ok


def verify_eigen(target_obs: int = 1600, seed: int = 7) -> bool:
    """Spectral floor/ceiling check on an f1 campaign trace."""
    obj = f1_objective(noise_sigma=0.1)
    stages = int(np.ceil(target_obs / 30))
    ts = TsConfig(
        xi=0.1, batch_size=30, max_stages=stages, stop_tolerance=1e-12, seed=seed
    )
    trace = run_replica(ts, obj, seed, 0)
    diag = eigen_diagnostics(trace)
    for t, lo, hi, ceil in zip(
        diag["t"],
        diag["lambda_min_over_t"],
        diag["lambda_max_over_t"],
        diag["ceiling"],
    ):
        print(f"t={t:>5} lambda_min/t={lo:.6e} lambda_max/t={hi:.6e} ceil={ceil:.4f}")
    ok = diag["min_floor_ok"] and diag["half_ref_ok"] and diag["max_bound_ok"]
    print(
        f"floor>0: {diag['min_floor_ok']}  half-of-t200: {diag['half_ref_ok']}  "
        f"ceiling: {diag['max_bound_ok']}"
    )
    print("eigen:", "PASS" if ok else "FAIL")
    return ok


def verify_posterior(n_instances: int = 50, seed: int = 0) -> bool:
    """Posterior mean must match a dense normal-equations ridge solve."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        d = int(rng.integers(1, 3))
        t = int(rng.integers(1, 101))
        domain = Domain(np.zeros(d), np.ones(d))
        hp = HyperParams(
            zeta=float(rng.uniform(0.5, 2.0)),
            length_scales=rng.uniform(0.2, 1.0, size=d),
            noise_sigma=float(rng.uniform(0.05, 0.5)),
        )
        anchors = domain.sample_uniform(rng, int(rng.integers(5, 33)))
        fmap = nystrom_feature_map(anchors, hp, m_star=32)
        data = Dataset(domain)
        for x in domain.sample_uniform(rng, t):
            data.append(x, float(rng.normal()), Origin.UNIFORM_EXPLORE)
        sigma = float(rng.uniform(0.05, 1.0))
        state = build_posterior(data, fmap, sigma)
        phi = fmap(data.points)
        ref = np.linalg.solve(
            phi.T @ phi + sigma**2 * np.eye(fmap.m_t), phi.T @ data.values
        )
        denom = max(np.linalg.norm(ref), 1e-30)
        worst = max(worst, float(np.linalg.norm(state.mean - ref)) / denom)
    ok = worst <= 1e-8
    print(f"max relative mean error over {n_instances} instances: {worst:.3e}")
    print("posterior:", "PASS" if ok else "FAIL")
    return ok


def verify_gradient(n_instances: int = 20, seed: int = 0) -> bool:
    """Analytic lml gradient vs central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-5
    for _ in range(n_instances):
        d = int(rng.integers(1, 3))
        n = int(rng.integers(3, 31))
        domain = Domain(np.zeros(d), np.ones(d))
        hp = HyperParams(
            zeta=float(rng.uniform(0.5, 2.0)),
            length_scales=rng.uniform(0.2, 1.0, size=d),
            noise_sigma=float(rng.uniform(0.1, 0.6)),
        )
        data = Dataset(domain)
        for x in domain.sample_uniform(rng, n):
            data.append(x, float(rng.normal()), Origin.UNIFORM_EXPLORE)
        grad = hyperfit.lml_gradient(data, hp)
        psi = np.log(
            np.concatenate(([hp.zeta], hp.length_scales, [hp.noise_sigma]))
        )
        fd = np.empty_like(grad)
        for j in range(psi.size):
            up, dn = psi.copy(), psi.copy()
            up[j] += h
            dn[j] -= h
            f_up = hyperfit.log_marginal_likelihood(data, hyperfit._unpack(up))
            f_dn = hyperfit.log_marginal_likelihood(data, hyperfit._unpack(dn))
            fd[j] = (f_up - f_dn) / (2 * h)
        scale = max(float(np.linalg.norm(fd)), 1e-10)
        worst = max(worst, float(np.linalg.norm(grad - fd)) / scale)
    ok = worst <= 1e-4
    print(f"max relative gradient error over {n_instances} instances: {worst:.3e}")
    print("gradient:", "PASS" if ok else "FAIL")
    return ok


_SUITES = {
    "chisq": verify_chisq,
    "eigen": verify_eigen,
    "posterior": verify_posterior,
    "gradient": verify_gradient,
}


def cmd_verify(suite: str) -> int:
    fn = _SUITES.get(suite)
    if fn is None:
        print(
            f"error: unknown suite {suite!r} (known: {', '.join(sorted(_SUITES))})",
            file=sys.stderr,
        )
        return EXIT_USAGE
    return EXIT_OK if fn() else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpts", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--objective", choices=_OBJECTIVES)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--sigma", type=float, help="observation noise sd")
        sp.add_argument("--xi", type=float)
        sp.add_argument("--batch-size", type=int, dest="batch_size")
        sp.add_argument("--m-star", type=int, dest="m_star")
        sp.add_argument("--stop-window", type=int, dest="stop_window")
        sp.add_argument("--stop-tolerance", type=float, dest="stop_tolerance")
        sp.add_argument("--max-stages", type=int, dest="max_stages")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--emit-plots", action="store_true", default=None)

    add_common(sub.add_parser("run", help="run a campaign and persist results"))
    add_common(sub.add_parser("emit-plots", help="run a campaign, write plot data"))
    v = sub.add_parser("verify", help="run an empirical verifier suite")
    v.add_argument("suite", help="one of: " + ", ".join(sorted(_SUITES)))
    return p


def _overrides_from_args(args) -> dict:
    mapping = {
        "objective": "objective.name",
        "beta": "objective.beta",
        "sigma": "objective.noise_sigma",
        "out": "output.dir",
        "emit_plots": "output.emit_plots",
        "replicas": "replicas",
        "seed": "seed",
    }
    out = {}
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = str(val)
    for attr in _TS_FIELDS:
        if attr == "seed":
            continue
        val = getattr(args, attr, None)
        if val is not None:
            out[f"ts.{attr}"] = str(val)
    return out


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args.suite)
    try:
        cfg = parse_config(args.config, _overrides_from_args(args))
        cfg = replace(cfg, ts=replace(cfg.ts, seed=cfg.seed))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return cmd_run(cfg, emit_only=(args.command == "emit-plots"))


if __name__ == "__main__":
    sys.exit(main())
