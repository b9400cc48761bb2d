"""Human-readable experiment config files (INI sections per module)."""

from __future__ import annotations

import configparser
from dataclasses import replace

from .cartpole import CartpoleConfig
from .errors import ValidationError
from .harness import ExperimentConfig, LtiSpec, SweepSpec
from .losses import ExpectedCost, ExpUtility, LossSpec, ProbLowCost
from .updates import (
    ConstantStep,
    DivergenceSpec,
    IndexedStep,
    KLExpectation,
    KLNatural,
    QuadraticFisher,
    QuadraticIdentity,
)

_DIVERGENCES = {
    "env_default": None,
    "kl_natural": KLNatural(update_covariance=True),
    "kl_natural_mean_only": KLNatural(update_covariance=False),
    "kl_expectation": KLExpectation(),
    "quadratic_identity": QuadraticIdentity(),
    "quadratic_fisher": QuadraticFisher(),
}


def parse_divergence(name: str) -> DivergenceSpec | None:
    key = name.strip().lower()
    if key not in _DIVERGENCES:
        raise ValidationError(f"unknown divergence {name!r}; choose from {sorted(_DIVERGENCES)}")
    return _DIVERGENCES[key]


def parse_loss(kind: str, *, use_baseline=True, elite_fraction=None, threshold=None, lam=None) -> LossSpec:
    key = kind.strip().lower()
    if key == "expected_cost":
        return ExpectedCost(use_baseline=use_baseline)
    if key == "prob_low_cost":
        if threshold is not None:
            return ProbLowCost(threshold=float(threshold))
        return ProbLowCost(elite_fraction=float(elite_fraction if elite_fraction is not None else 1e-3))
    if key == "exp_utility":
        return ExpUtility(lam=float(lam if lam is not None else 1.0))
    raise ValidationError(f"unknown loss {kind!r}")


def parse_gamma(text: str):
    values = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if len(values) == 1:
        return ConstantStep(values[0])
    return IndexedStep(tuple(values))


def _parse_matrix(text: str) -> tuple:
    rows = [r for r in text.split(";") if r.strip()]
    return tuple(tuple(float(v) for v in row.split(",") if v.strip()) for row in rows)


def _parse_vector(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def load_config(path: str | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from an INI file (defaults when path is None)."""
    config = ExperimentConfig()
    if path is None:
        return config
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)

    if parser.has_section("experiment"):
        sec = parser["experiment"]
        kwargs = {}
        if "env" in sec:
            kwargs["env"] = sec["env"].strip()
        if "gamma" in sec:
            kwargs["gamma"] = parse_gamma(sec["gamma"])
        for key in ("n_samples", "n_dynamics_samples", "horizon", "episode_length"):
            if key in sec:
                kwargs[key] = sec.getint(key)
        if "init_control_std" in sec:
            kwargs["init_control_std"] = sec.getfloat("init_control_std")
        if "ec_step_scale" in sec:
            kwargs["ec_step_scale"] = sec.getfloat("ec_step_scale")
        if "shift" in sec and sec["shift"].strip() != "repeat_last":
            raise ValidationError("only the repeat_last shift policy is configurable from files")
        config = replace(config, **kwargs)

    if parser.has_section("loss"):
        sec = parser["loss"]
        config = replace(
            config,
            loss=parse_loss(
                sec.get("kind", "expected_cost"),
                use_baseline=sec.getboolean("use_baseline", fallback=True),
                elite_fraction=sec.getfloat("elite_fraction", fallback=None),
                threshold=sec.getfloat("threshold", fallback=None),
                lam=sec.getfloat("lambda", fallback=None),
            ),
        )

    if parser.has_section("divergence"):
        config = replace(config, divergence=parse_divergence(parser["divergence"].get("kind", "env_default")))

    if parser.has_section("cartpole"):
        sec = parser["cartpole"]
        cp = {}
        for key in (
            "cart_mass",
            "tip_mass",
            "pole_length_true",
            "pole_length_model",
            "dt",
            "control_noise_std",
            "angle_threshold",
            "gravity",
        ):
            if key in sec:
                cp[key] = sec.getfloat(key)
        if "control_clamp" in sec:
            cp["control_clamp"] = _parse_vector(sec["control_clamp"])
        if "discrete_forces" in sec:
            cp["discrete_forces"] = _parse_vector(sec["discrete_forces"])
        config = replace(config, cartpole=replace(CartpoleConfig(), **cp))

    if parser.has_section("lti"):
        sec = parser["lti"]
        lt = {}
        for key in ("A", "B", "W", "Q", "R", "Q_end"):
            if key in sec:
                lt[key] = _parse_matrix(sec[key])
        if "x0" in sec:
            lt["x0"] = _parse_vector(sec["x0"])
        if "leqr_lambda" in sec:
            lt["leqr_lambda"] = sec.getfloat("leqr_lambda")
        config = replace(config, lti=replace(LtiSpec(), **lt))

    return config


def load_sweep(path: str | None = None) -> SweepSpec:
    spec = SweepSpec()
    if path is None:
        return spec
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section("sweep"):
        return spec
    sec = parser["sweep"]
    kwargs = {}
    if "gammas" in sec:
        kwargs["gammas"] = _parse_vector(sec["gammas"])
    if "n_samples" in sec:
        kwargs["n_samples"] = tuple(int(v) for v in _parse_vector(sec["n_samples"]))
    if "loss_params" in sec:
        values = _parse_vector(sec["loss_params"])
        kwargs["loss_params"] = tuple(values) if values else None
    if "episodes" in sec:
        kwargs["episodes"] = sec.getint("episodes")
    if "master_seed" in sec:
        kwargs["master_seed"] = sec.getint("master_seed")
    return replace(spec, **kwargs)
