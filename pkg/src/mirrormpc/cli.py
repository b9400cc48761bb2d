"""Command-line experiment runner: `episode` and `sweep` subcommands."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import backend
from .configio import load_config, load_sweep, parse_divergence, parse_gamma, parse_loss
from .errors import DegenerateEstimateError, InfeasibleStepError, ValidationError
from .harness import (
    ExperimentConfig,
    config_lines,
    render_episode_csv,
    render_sweep_csv,
    run_episode,
    run_sweep,
)


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags below override it")
    p.add_argument("--env", help="cartpole-continuous | cartpole-discrete | lti-lqr | lti-leqr")
    p.add_argument("--loss", help="expected_cost | prob_low_cost | exp_utility")
    p.add_argument("--loss-param", type=float, help="lambda (exp_utility) or elite fraction (prob_low_cost)")
    p.add_argument("--divergence", help="kl_natural | kl_natural_mean_only | kl_expectation | quadratic_identity | quadratic_fisher")
    p.add_argument("--samples", type=int, help="control-sequence samples per gradient estimate")
    p.add_argument("--dyn-samples", type=int, help="dynamics-noise samples per sequence (CRN streams)")
    p.add_argument("--horizon", type=int, help="planning horizon H")
    p.add_argument("--steps", type=int, help="episode length T")
    p.add_argument("--out", help="output CSV path (stdout when omitted)")
    p.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend override")


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config)
    kwargs = {}
    if args.env:
        kwargs["env"] = args.env
    if args.loss:
        kwargs["loss"] = parse_loss(
            args.loss,
            elite_fraction=args.loss_param,
            lam=args.loss_param,
        )
    elif args.loss_param is not None:
        from .harness import with_loss_param

        kwargs["loss"] = with_loss_param(config.loss, args.loss_param)
    if args.divergence:
        kwargs["divergence"] = parse_divergence(args.divergence)
    if args.samples:
        kwargs["n_samples"] = args.samples
    if args.dyn_samples:
        kwargs["n_dynamics_samples"] = args.dyn_samples
    if args.horizon:
        kwargs["horizon"] = args.horizon
    if args.steps:
        kwargs["episode_length"] = args.steps
    if getattr(args, "gamma", None) is not None:
        kwargs["gamma"] = parse_gamma(args.gamma)
    return replace(config, **kwargs)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mirrormpc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ep = sub.add_parser("episode", help="run one seeded episode and emit a per-step CSV")
    _add_shared(ep)
    ep.add_argument("--gamma", help="step size (or comma list for a per-round schedule)")
    ep.add_argument("--seed", type=int, default=0, help="episode seed")

    sw = sub.add_parser("sweep", help="run a parameter-grid sweep and emit one CSV row per episode")
    _add_shared(sw)
    sw.add_argument("--gammas", help="comma-separated step sizes")
    sw.add_argument("--samples-list", help="comma-separated sample counts")
    sw.add_argument("--loss-params", help="comma-separated loss parameter values")
    sw.add_argument("--episodes", type=int, help="episodes per grid cell")
    sw.add_argument("--master-seed", type=int, help="master seed for cell/episode derivation")
    sw.add_argument("--workers", type=int, default=1, help="parallel episode workers")

    args = parser.parse_args(argv)
    if args.backend:
        backend.use(args.backend)

    try:
        config = _resolve_config(args)
        if args.command == "episode":
            record = run_episode(config, args.seed)
            lines = config_lines(config) + [f"experiment.seed = {args.seed}"]
            _emit(render_episode_csv(record, lines), args.out)
            return 0

        spec = load_sweep(args.config)
        kwargs = {}
        if args.gammas:
            kwargs["gammas"] = tuple(float(v) for v in args.gammas.split(","))
        if args.samples_list:
            kwargs["n_samples"] = tuple(int(v) for v in args.samples_list.split(","))
        if args.loss_params:
            kwargs["loss_params"] = tuple(float(v) for v in args.loss_params.split(","))
        if args.episodes:
            kwargs["episodes"] = args.episodes
        if args.master_seed is not None:
            kwargs["master_seed"] = args.master_seed
        spec = replace(spec, **kwargs)
        rows = run_sweep(config, spec, workers=args.workers)
        _emit(render_sweep_csv(rows, config_lines(config, spec)), args.out)
        return 0
    except (DegenerateEstimateError, InfeasibleStepError) as exc:
        print(f"mirrormpc: degenerate estimate: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"mirrormpc: invalid configuration: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
