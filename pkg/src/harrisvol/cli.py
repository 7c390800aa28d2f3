"""Batch command-line interface.

Subcommands: simulate, estimate, predict, sv-fit, sv-forecast, study.
Every run writes a JSON manifest (resolved config, seed, paths, version)
into a fresh output directory; outputs are plot-ready CSV files.
Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import HarrisvolError, NumericalError, QuadratureError, StageError, ValidationError
from .gig import GigParams
from .harris import (
    DiscreteUniformMarginal,
    ExponentialHolding,
    GammaRate,
    GigMarginal,
    MixtureSpec,
    ParetoHolding,
    DegenerateRate,
    SemiMarkovSpec,
    SfHarrisParams,
    simulate,
    simulate_mixture,
    simulate_semi_markov,
    trajectory_to_csv,
    trajectory_to_json,
)
from .inference import (
    DiscreteUniformFamily,
    GigFamily,
    ObservationSeries,
    PosteriorChains,
    Priors,
    estimate_em,
    estimate_mle,
    estimate_ndnj,
    gibbs_a,
    gibbs_b,
    hpd_interval,
    posterior_mode,
    predict_trajectories,
)
from .svpipeline import (
    SvFitConfig,
    fit_sv,
    forecast_coverage,
    holdout_window_returns,
    save_coverage,
)
from .bars import TradingSession, load_bars_csv
from .simstudy import StudyConfig, SvStudyConfig, run_process_study, run_sv_study


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _out_dir(path_str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, args: argparse.Namespace,
                    inputs: dict, outputs: dict):
    manifest = {
        "command": command,
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "created": datetime.datetime.now().isoformat(timespec="seconds"),
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _marginal_from_args(args):
    if args.marginal == "gig":
        return GigMarginal(GigParams(args.lam, args.kappa, args.eta))
    if args.marginal == "uniform5":
        return DiscreteUniformMarginal(values=(1.0, 2.0, 3.0, 4.0, 5.0))
    raise ValidationError(f"unknown marginal {args.marginal!r}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    marginal = _marginal_from_args(args)
    if args.model == "sf":
        par = SfHarrisParams(alpha=args.alpha, marginal=marginal)
        traj = simulate(par, args.horizon, rng)
    elif args.model == "semi-markov":
        if args.holding == "exp":
            law = ExponentialHolding(rate=args.alpha)
        elif args.holding == "pareto":
            law = ParetoHolding(shape=args.holding_shape, scale=args.holding_scale)
        else:
            raise ValidationError(f"unknown holding law {args.holding!r}")
        traj = simulate_semi_markov(SemiMarkovSpec(law, marginal), args.horizon, rng)
    elif args.model == "mixture":
        if args.mixing == "degenerate":
            rate = DegenerateRate(args.alpha)
        elif args.mixing == "gamma":
            rate = GammaRate(hurst=args.hurst)
        else:
            raise ValidationError(f"unknown mixing law {args.mixing!r}")
        traj = simulate_mixture(MixtureSpec(rate, marginal), args.horizon, rng)
    else:
        raise ValidationError(f"unknown model {args.model!r}")
    out = _out_dir(args.out)
    trajectory_to_csv(traj, out / "skeleton.csv")
    trajectory_to_json(traj, out / "skeleton.json")
    _write_manifest(out, "simulate", args, {}, {"skeleton": str(out / "skeleton.csv")})
    print(f"wrote {out / 'skeleton.csv'} ({traj.n_jumps} jumps)")
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _family_from_args(args):
    if args.marginal == "gig":
        return GigFamily()
    return DiscreteUniformFamily()


def _cmd_estimate(args) -> int:
    rng = np.random.default_rng(args.seed)
    obs = ObservationSeries.from_csv(args.input)
    fam = _family_from_args(args)
    out = _out_dir(args.out)
    estimates = {}
    outputs = {}
    for method in args.method:
        if method == "ndnj":
            res = estimate_ndnj(obs, fam)
            a_hat, q_hat = res.alpha, res.q_params
        elif method in ("mle", "em"):
            start_q = fam.default_start(obs.values) if args.marginal == "gig" else None
            runner = estimate_mle if method == "mle" else estimate_em
            res = runner(obs, fam, start=(max(args.start_alpha, 1e-6), start_q))
            a_hat, q_hat = res.alpha, res.q_params
        else:
            sampler = gibbs_a if method == "gibbs-a" else gibbs_b
            chains = sampler(obs, Priors(c=args.prior_c), fam, args.iters, rng,
                             burn_in=args.burn_in)
            chains_path = out / f"chains_{method}.csv"
            chains.to_csv(chains_path)
            outputs[f"chains_{method}"] = str(chains_path)
            point = posterior_mode(chains)
            a_hat, q_hat = point.alpha, point.q_params
        entry = {"alpha": a_hat}
        if isinstance(q_hat, GigParams):
            entry.update({"lambda": q_hat.lam, "kappa": q_hat.kappa, "eta": q_hat.eta})
        elif q_hat is not None:
            entry["support"] = list(q_hat)
        estimates[method] = entry
    with open(out / "estimates.json", "w") as fh:
        json.dump(estimates, fh, indent=2)
    outputs["estimates"] = str(out / "estimates.json")
    _write_manifest(out, "estimate", args, {"input": args.input}, outputs)
    print(json.dumps(estimates, indent=2))
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def _cmd_predict(args) -> int:
    rng = np.random.default_rng(args.seed)
    obs = ObservationSeries.from_csv(args.input)
    chains = PosteriorChains.from_csv(args.chains)
    out = _out_dir(args.out)
    horizon = obs.times[-1] + args.ahead
    trajs = predict_trajectories(obs, chains, horizon, args.paths, rng)
    grid = np.linspace(obs.times[-1], horizon, args.grid_points)
    values = np.empty((len(trajs), grid.size))
    from .harris import sample_at_times
    for i, tr in enumerate(trajs):
        values[i] = sample_at_times(tr, np.minimum(grid, tr.horizon))
    with open(out / "hpd.csv", "w") as fh:
        fh.write("time,hpd_lo,hpd_hi,median\n")
        for j, t in enumerate(grid):
            lo, hi = hpd_interval(values[:, j], args.prob)
            fh.write(f"{float(t)!r},{lo!r},{hi!r},{float(np.median(values[:, j]))!r}\n")
    first_jump = np.array([tr.jump_times[0] - obs.times[-1] if tr.n_jumps else np.nan
                           for tr in trajs])
    seen = first_jump[~np.isnan(first_jump)]
    summary = {
        "mean_first_jump_time": float(np.mean(seen)) if seen.size else None,
        "prob_jump_within_1": float(np.mean(first_jump <= 1.0)) if trajs else None,
        "paths": len(trajs),
    }
    with open(out / "first_jump.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    _write_manifest(out, "predict", args,
                    {"input": args.input, "chains": args.chains},
                    {"hpd": str(out / "hpd.csv"),
                     "first_jump": str(out / "first_jump.json")})
    print(json.dumps(summary, indent=2))
    return 0


# ---------------------------------------------------------------------------
# sv-fit / sv-forecast
# ---------------------------------------------------------------------------

def _fit_config_from_args(args) -> SvFitConfig:
    return SvFitConfig(
        sampling_minutes=args.sampling_minutes,
        window_minutes=args.window_minutes,
        day_length=args.day_length,
        cycle_days=args.cycle_days,
        top_frac=args.top_frac,
        passes=args.passes,
        collapse_eps=args.collapse_eps,
        collapse_relative=args.collapse_relative,
        gibbs_iters=args.iters,
        gibbs_burn_in=args.burn_in,
        session=TradingSession(args.session_open, args.session_close),
    )


def _cmd_sv_fit(args) -> int:
    rng = np.random.default_rng(args.seed)
    bars = load_bars_csv(args.bars)
    config = _fit_config_from_args(args)
    fit = fit_sv(bars, config, rng)
    out = _out_dir(args.out)
    fit.chains.to_csv(out / "chains.csv")
    fit.periodicity.to_csv(out / "periodicity.csv")
    with open(out / "spot.csv", "w") as fh:
        fh.write("time,integrated,spot_raw,spot_adjusted\n")
        for i in range(fit.vol.n):
            fh.write(f"{float(fit.vol.times[i])!r},{float(fit.vol.integrated[i])!r},"
                     f"{float(fit.vol.spot[i])!r},{float(fit.adjusted.spot[i])!r}\n")
    point = {
        "alpha": fit.alpha_hat,
        "lambda": fit.gig_hat.lam,
        "kappa": fit.gig_hat.kappa,
        "eta": fit.gig_hat.eta,
        "mu_mean": fit.mu_beta.mu_mean,
        "mu_sd": fit.mu_beta.mu_var ** 0.5,
        "beta_mean": fit.mu_beta.beta_mean,
        "beta_sd": fit.mu_beta.beta_var ** 0.5,
    }
    with open(out / "estimates.json", "w") as fh:
        json.dump({"estimates": point, "audit": fit.audit}, fh, indent=2, default=str)
    state = {
        "last_log_price": fit.last_log_price,
        "config": {k: v for k, v in asdict(config).items()
                   if not isinstance(v, (Priors,))},
    }
    with open(out / "fit_state.json", "w") as fh:
        json.dump(state, fh, indent=2, default=str)
    _write_manifest(out, "sv-fit", args, {"bars": args.bars},
                    {"chains": str(out / "chains.csv"),
                     "estimates": str(out / "estimates.json")})
    print(json.dumps(point, indent=2))
    return 0


def _cmd_sv_forecast(args) -> int:
    rng = np.random.default_rng(args.seed)
    bars_est = load_bars_csv(args.bars)
    bars_hold = load_bars_csv(args.holdout)
    config = _fit_config_from_args(args)
    fit = fit_sv(bars_est, config, rng)
    hr = holdout_window_returns(bars_hold, config)
    result = forecast_coverage(fit, hr, probs=tuple(args.probs),
                               m_paths=args.paths, rng=rng)
    out = _out_dir(args.out)
    save_coverage(result, out / "coverage.csv", out / "coverage.json")
    _write_manifest(out, "sv-forecast", args,
                    {"bars": args.bars, "holdout": args.holdout},
                    {"coverage": str(out / "coverage.csv")})
    print(json.dumps(result["coverage"], indent=2))
    return 0


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------

def _cmd_study(args) -> int:
    with open(args.config) as fh:
        spec = json.load(fh)
    kind = spec.pop("kind", "process")
    out = _out_dir(args.out)
    if kind == "process":
        marginal = spec.pop("marginal", "gig")
        allowed = {f.name for f in StudyConfig.__dataclass_fields__.values()}
        cfg = StudyConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                             for k, v in spec.items() if k in allowed})
        if args.threads:
            cfg = StudyConfig(**{**{k: getattr(cfg, k) for k in allowed},
                                 "threads": args.threads})
        report = run_process_study(cfg, marginal)
    elif kind == "sv":
        allowed = {f.name for f in SvStudyConfig.__dataclass_fields__.values()}
        cfg = SvStudyConfig(**{k: v for k, v in spec.items() if k in allowed})
        report = run_sv_study(cfg)
    else:
        raise ValidationError(f"unknown study kind {kind!r}")
    report.to_csv(out / "report.csv")
    md = report.to_markdown()
    with open(out / "report.md", "w") as fh:
        fh.write(md)
    if report.failures:
        with open(out / "failures.json", "w") as fh:
            json.dump({str(k): v for k, v in report.failures.items()}, fh, indent=2)
    _write_manifest(out, "study", args, {"config": args.config},
                    {"report": str(out / "report.csv")})
    print(md)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="harrisvol", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", help="simulate a jump-process path")
    sim.add_argument("--model", choices=("sf", "semi-markov", "mixture"), default="sf")
    sim.add_argument("--marginal", choices=("gig", "uniform5"), default="gig")
    sim.add_argument("--alpha", type=float, default=1.0)
    sim.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sim.add_argument("--kappa", type=float, default=1.0)
    sim.add_argument("--eta", type=float, default=1.0)
    sim.add_argument("--holding", choices=("exp", "pareto"), default="exp")
    sim.add_argument("--holding-shape", type=float, default=1.5)
    sim.add_argument("--holding-scale", type=float, default=1.0)
    sim.add_argument("--mixing", choices=("degenerate", "gamma"), default="degenerate")
    sim.add_argument("--hurst", type=float, default=0.75)
    sim.add_argument("--horizon", type=float, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default="run_simulate")
    sim.set_defaults(func=_cmd_simulate)

    est = sub.add_parser("estimate", help="estimate from an observation CSV")
    est.add_argument("--input", required=True)
    est.add_argument("--method", action="append", required=True,
                     choices=("ndnj", "mle", "em", "gibbs-a", "gibbs-b"))
    est.add_argument("--marginal", choices=("gig", "uniform5"), default="gig")
    est.add_argument("--iters", type=int, default=5000)
    est.add_argument("--burn-in", type=int, default=1000)
    est.add_argument("--prior-c", type=float, default=1.0)
    est.add_argument("--start-alpha", type=float, default=1.0)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", default="run_estimate")
    est.set_defaults(func=_cmd_estimate)

    pre = sub.add_parser("predict", help="forward paths and HPD intervals")
    pre.add_argument("--input", required=True)
    pre.add_argument("--chains", required=True)
    pre.add_argument("--ahead", type=float, default=10.0)
    pre.add_argument("--paths", type=int, default=1000)
    pre.add_argument("--grid-points", type=int, default=100)
    pre.add_argument("--prob", type=float, default=0.9)
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--out", default="run_predict")
    pre.set_defaults(func=_cmd_predict)

    def add_fit_flags(sp):
        sp.add_argument("--sampling-minutes", type=int, default=1)
        sp.add_argument("--window-minutes", type=int, default=15)
        sp.add_argument("--day-length", type=float, default=1.0)
        sp.add_argument("--cycle-days", type=int, default=5)
        sp.add_argument("--top-frac", type=float, default=0.001)
        sp.add_argument("--passes", type=int, default=2)
        sp.add_argument("--collapse-eps", type=float, default=1e-5)
        sp.add_argument("--collapse-relative", action="store_true")
        sp.add_argument("--iters", type=int, default=4000)
        sp.add_argument("--burn-in", type=int, default=1000)
        sp.add_argument("--session-open", type=int, default=9 * 60 + 30)
        sp.add_argument("--session-close", type=int, default=16 * 60)
        sp.add_argument("--seed", type=int, default=0)

    svf = sub.add_parser("sv-fit", help="full pipeline fit on a bar CSV")
    svf.add_argument("--bars", required=True)
    add_fit_flags(svf)
    svf.add_argument("--out", default="run_svfit")
    svf.set_defaults(func=_cmd_sv_fit)

    svo = sub.add_parser("sv-forecast", help="fit bars, forecast against holdout bars")
    svo.add_argument("--bars", required=True)
    svo.add_argument("--holdout", required=True)
    add_fit_flags(svo)
    svo.add_argument("--paths", type=int, default=1000)
    svo.add_argument("--probs", type=float, nargs="+",
                     default=[0.25, 0.50, 0.75, 0.85, 0.90, 0.95])
    svo.add_argument("--out", default="run_svforecast")
    svo.set_defaults(func=_cmd_sv_forecast)

    stu = sub.add_parser("study", help="run an error study from a JSON config")
    stu.add_argument("--config", required=True)
    stu.add_argument("--threads", type=int, default=0)
    stu.add_argument("--out", default="run_study")
    stu.set_defaults(func=_cmd_study)
    return p


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValidationError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, QuadratureError, StageError, HarrisvolError,
            FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
