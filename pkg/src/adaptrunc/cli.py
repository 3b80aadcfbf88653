"""Command-line front end.

Three subcommands share one JSON configuration format::

    adaptrunc run --config galaxy.json --out results/
    adaptrunc gold-standard --config galaxy.json --out gold/
    adaptrunc geweke --config galaxy.json --out geweke/

Unknown keys and invalid model/truncation combinations are rejected with
exit code 2.  A run whose stopping rule did not fire (or whose particles
collapsed) exits with code 3, I/O problems with code 4.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, smc
from .datasets import load_column, load_galaxy, load_nile, load_panel, standardize
from .diagnostics import geweke_model, gold_standard_run, mixture_stats

__all__ = ["ConfigError", "DataError", "DEFAULTS", "parse_config", "validate_config", "build_model", "main"]

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_IO = 0, 2, 3, 4

MODELS = ("dpm", "pym", "nrmii", "lmm", "ts")
TRUNCATIONS = {
    "dpm": ("rsb", "sb", "fk"),
    "pym": ("rsb", "sb"),
    "nrmii": ("cpp",),
    "lmm": ("rsb",),
    "ts": ("rsb",),
}

DEFAULTS = {
    "model": "dpm",
    "truncation": None,  # first entry of TRUNCATIONS[model]
    "data": None,  # bundled galaxy (mixtures) or Nile (ts); required for lmm
    "data_column": None,
    "data_scale": None,  # divisor; 1e4 for the bundled galaxy data
    "standardize": None,  # ts only, default true
    "out": "out",
    "seed": 0,
    "particles": 1000,
    "epsilon": 1e-3,
    "m_stop": 3,
    "n_rejuv": 3,
    "b": 0.7,
    "n_init": 10,
    "L1": None,
    "scheme": "one_atom",
    "xi": None,
    "max_iters": 5000,
    "burn_in": 5000,
    "thin": 5,
    "n_chains": 32,
    "discrepancy": "ess",
    "y_star": None,
    "collapse_ess": 2.0,
    "M": None,
    "a": None,
    "known_var": None,
    "mu0": None,
    "sigma2": 10.0,
    "alpha": 3.0,
    "beta": None,
    "priors": None,
    "grid": None,  # [lo, hi, n]
    "save_particles": False,
    "gold_n_fixed": 50,
    "gold_iters": 25000,
    "gold_burn_in": 2000,
    "gold_chains": 8,
    "geweke_iters": 100000,
    "geweke_thin": 100,
    "geweke_burn_in": 100,
    "geweke_n": 10,
    "geweke_alpha": 0.01,
}

_MIXTURE_KEYS = ("known_var", "mu0", "beta")
_NRMI_KEYS = ("L1", "xi")
_PRIOR_FIELDS = {
    "lmm": ("a_eps", "a_gam", "s2_eps", "s2_gam", "M_eps", "M_gam", "beta_prec"),
    "ts": ("a_alpha", "s2_alpha", "M_alpha", "a_eps", "s2_eps", "M_eps", "alpha1_var"),
}


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class DataError(OSError):
    """Unreadable or unusable data file (exit code 4)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def validate_config(cfg):
    """Fill defaults and check a configuration mapping.

    Returns a new dict with every key of :data:`DEFAULTS`.  Raises
    :class:`ConfigError` on unknown keys, wrong types or combinations the
    models do not support.
    """
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    c = {**DEFAULTS, **cfg}
    model = c["model"]
    if model not in MODELS:
        raise ConfigError(f"model must be one of {', '.join(MODELS)}; got {model!r}")
    if c["truncation"] is None:
        c["truncation"] = TRUNCATIONS[model][0]
    if c["truncation"] not in TRUNCATIONS[model]:
        raise ConfigError(
            f"truncation {c['truncation']!r} is not available for model {model!r} "
            f"(allowed: {', '.join(TRUNCATIONS[model])})"
        )

    ints = {"particles": 2, "m_stop": 1, "n_rejuv": 0, "n_init": 1, "max_iters": 1, "burn_in": 0, "thin": 1,
            "n_chains": 1, "gold_n_fixed": 1, "gold_iters": 100, "gold_burn_in": 0, "gold_chains": 1,
            "geweke_iters": 1, "geweke_thin": 1, "geweke_burn_in": 0, "geweke_n": 1}  # fmt: skip
    for k, lo in ints.items():
        if not _is_int(c[k]) or c[k] < lo:
            raise ConfigError(f"{k} must be an integer >= {lo}")
    if not (_is_int(c["seed"]) and c["seed"] >= 0):
        raise ConfigError("seed must be a non-negative integer")
    for k in ("epsilon", "collapse_ess", "sigma2", "alpha"):
        if not (_is_num(c[k]) and c[k] > 0):
            raise ConfigError(f"{k} must be a positive number")
    if not (_is_num(c["b"]) and 0 < c["b"] <= 1):
        raise ConfigError("b must lie in (0, 1]")
    if not (_is_num(c["geweke_alpha"]) and 0 < c["geweke_alpha"] < 1):
        raise ConfigError("geweke_alpha must lie in (0, 1)")
    for k in ("M", "known_var", "beta", "L1", "xi", "data_scale"):
        if c[k] is not None and not (_is_num(c[k]) and c[k] > 0):
            raise ConfigError(f"{k} must be a positive number or null")
    for k in ("mu0", "y_star"):
        if c[k] is not None and not _is_num(c[k]):
            raise ConfigError(f"{k} must be a number or null")
    if c["a"] is not None and not (_is_num(c["a"]) and 0 <= c["a"] < 1):
        raise ConfigError("a must lie in [0, 1) or be null")
    for k in ("save_particles",):
        if not isinstance(c[k], bool):
            raise ConfigError(f"{k} must be true or false")
    if c["standardize"] is not None and not isinstance(c["standardize"], bool):
        raise ConfigError("standardize must be true, false or null")
    for k in ("data", "data_column", "out"):
        if c[k] is not None and not isinstance(c[k], str):
            raise ConfigError(f"{k} must be a string")
    if c["discrepancy"] not in ("ess", "predictive"):
        raise ConfigError("discrepancy must be 'ess' or 'predictive'")
    if c["scheme"] not in ("one_atom", "geometric"):
        raise ConfigError("scheme must be 'one_atom' or 'geometric'")
    if c["grid"] is not None:
        g = c["grid"]
        if not (isinstance(g, list) and len(g) == 3 and _is_num(g[0]) and _is_num(g[1]) and g[0] < g[1]
                and _is_int(g[2]) and g[2] >= 2):  # fmt: skip
            raise ConfigError("grid must be [lo, hi, n] with lo < hi and integer n >= 2")

    mixture = model in ("dpm", "pym", "nrmii")
    if not mixture:
        bad = [k for k in _MIXTURE_KEYS + ("M", "a") if c[k] is not None]
        if c["discrepancy"] != "ess":
            bad.append("discrepancy")
        if bad:
            raise ConfigError(f"{', '.join(bad)} only apply to the mixture models")
    if model != "pym" and c["a"] is not None:
        raise ConfigError("the discount a only applies to model 'pym'")
    if model != "nrmii":
        bad = [k for k in _NRMI_KEYS if c[k] is not None]
        if c["scheme"] != "one_atom":
            bad.append("scheme")
        if bad:
            raise ConfigError(f"{', '.join(bad)} only apply to model 'nrmii'")
    if c["scheme"] == "geometric" and c["xi"] is None:
        raise ConfigError("the geometric level schedule needs xi")
    if c["discrepancy"] == "predictive" and c["y_star"] is None:
        raise ConfigError("the predictive discrepancy needs y_star")
    if c["standardize"] is not None and model != "ts":
        raise ConfigError("standardize only applies to model 'ts'")
    if model == "lmm" and c["data"] is None:
        raise ConfigError("model 'lmm' needs a grouped CSV file in 'data'")
    if c["priors"] is not None:
        if model not in _PRIOR_FIELDS or not isinstance(c["priors"], dict):
            raise ConfigError("priors is a mapping and only applies to models 'lmm' and 'ts'")
        extra = sorted(set(c["priors"]) - set(_PRIOR_FIELDS[model]))
        if extra:
            raise ConfigError(f"unknown prior fields for {model}: {', '.join(extra)}")
        for k, v in c["priors"].items():
            ok = _is_num(v) and v > 0 if k in ("beta_prec", "alpha1_var") else (
                isinstance(v, list) and len(v) == 2 and all(_is_num(x) and x > 0 for x in v))
            if not ok:
                raise ConfigError(f"prior {k} must be {'a positive number' if k in ('beta_prec', 'alpha1_var') else 'a pair of positive numbers'}")
    return c


def parse_config(path=None, overrides=None):
    """Read a JSON configuration file and apply command-line overrides.

    ``path=None`` starts from the defaults.  Returns the validated dict.
    """
    cfg = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from exc
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: top level must be an object")
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(x, csv=False):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return str(x) if csv else "null"
    return format(x, ".17g")


def dumps(obj, indent=0):
    """JSON text with every float written to 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in seq) + "\n" + pad + "]"
    return _fmt(obj)


def write_json(path, obj):
    Path(path).write_text(dumps(obj) + "\n")


def write_csv(path, header, columns):
    """Columns of equal length under a fixed header."""
    cols = [np.asarray(c).ravel() for c in columns]
    lines = [",".join(header)]
    lines += [",".join(str(c[i]) if isinstance(c[i], str) else _fmt(c[i], csv=True) for c in cols) for i in range(cols[0].size)]
    Path(path).write_text("\n".join(lines) + "\n")


def _moments(x, w):
    x = np.asarray(x, dtype=float)
    m = float(w @ x)
    return {"mean": m, "sd": float(np.sqrt(max(w @ (x - m) ** 2, 0.0)))}


def _grid(cfg, lo, hi, n=200):
    if cfg["grid"] is not None:
        lo, hi, n = cfg["grid"]
    return np.linspace(lo, hi, n)


# ---------------------------------------------------------------------------
# data and models
# ---------------------------------------------------------------------------


def load_data(cfg):
    """Data array (or panel) and a dict describing its provenance and scaling."""
    model, path = cfg["model"], cfg["data"]
    info = {"source": path or ("bundled:nile" if model == "ts" else "bundled:galaxy")}
    if model == "lmm":
        return load_panel(path), info
    if path is None:
        y = load_nile() if model == "ts" else load_galaxy(scale=cfg["data_scale"] or 1e4)
    else:
        y = load_column(path, cfg["data_column"]) / (cfg["data_scale"] or 1.0)
    if model == "ts" and cfg["standardize"] is not False:
        info["mean"], info["sd"] = float(y.mean()), float(y.std(ddof=1))
        y = standardize(y)
    return y, info


def _prior_kwargs(priors, proper=False):
    """Config ``priors`` mapping to keyword arguments; ``proper`` swaps improper folded-t priors for ``nu = 3``."""
    from .lmm import FoldedTPrior

    kw = {}
    for k, v in (priors or {}).items():
        if k.startswith("s2_"):
            nu, A = v
            kw[k] = FoldedTPrior(nu if nu > 1 or not proper else 3.0, A)
        else:
            kw[k] = tuple(v) if isinstance(v, list) else v
    return kw


def load_model(cfg):
    """Data and model for a validated configuration; data problems raise :class:`DataError`."""
    try:
        data, info = load_data(cfg)
        return build_model(cfg, data), info
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def build_model(cfg, data):
    """Model object for a validated configuration."""
    model = cfg["model"]
    if model in ("dpm", "pym", "nrmii"):
        from .mixtures import NormalMixtureHyper

        y = np.asarray(data)
        base = NormalMixtureHyper.from_data(y, sigma2=cfg["sigma2"], alpha=cfg["alpha"])
        hyper = NormalMixtureHyper(
            base.mu0 if cfg["mu0"] is None else cfg["mu0"],
            cfg["sigma2"],
            cfg["alpha"],
            base.beta if cfg["beta"] is None else cfg["beta"],
        )
        if model == "nrmii":
            from .nrmi import NrmiMixtureModel

            return NrmiMixtureModel(y, hyper, M=cfg["M"], n_init=cfg["n_init"], L1=cfg["L1"],
                                    scheme=cfg["scheme"], xi=cfg["xi"], known_var=cfg["known_var"])  # fmt: skip
        from .mixtures import NormalMixtureModel

        return NormalMixtureModel(y, hyper, prior="dp" if model == "dpm" else "py", truncation=cfg["truncation"],
                                  n_init=cfg["n_init"], M=cfg["M"], a=cfg["a"], known_var=cfg["known_var"])  # fmt: skip
    if model == "lmm":
        from .lmm import LmmModel, LmmPriors

        return LmmModel(data, LmmPriors(**_prior_kwargs(cfg["priors"])), n_init=cfg["n_init"])
    from .timeseries import TsModel, TsPriors

    return TsModel(data, TsPriors(**_prior_kwargs(cfg["priors"])), n_init=cfg["n_init"])


def smc_config(cfg):
    return smc.SmcConfig(
        n_particles=cfg["particles"], epsilon=cfg["epsilon"], m_stop=cfg["m_stop"], n_rejuv=cfg["n_rejuv"],
        resample_threshold=cfg["b"], max_iters=cfg["max_iters"], burn_in=cfg["burn_in"], thin=cfg["thin"],
        n_chains=cfg["n_chains"], discrepancy=cfg["discrepancy"], y_star=cfg["y_star"],
        collapse_ess=cfg["collapse_ess"], seed=cfg["seed"],
    )  # fmt: skip


def particle_stats(model, state):
    """Scalar per-particle quantities reported in the summaries."""
    name = type(model).__name__
    if name == "NormalMixtureModel":
        out = mixture_stats(model, state)
        if model.fixed_M is not None:
            out.pop("M")
        if model.prior == "py" and model.fixed_a is not None:
            out.pop("a", None)
        return out
    if name == "NrmiMixtureModel":
        from .mixtures import _counts

        J = np.where(state.active, state.J, 0.0)
        out = {} if model.fixed_M is not None else {"M": state.M}
        out["K"] = (_counts(state.s, J.shape[1]) > 0).sum(axis=1).astype(float)
        out["n_jumps"] = state.n_jumps.astype(float)
        return out
    if name == "LmmModel":
        out = {k: getattr(state, k) for k in ("a_e", "s2_e", "M_e", "a_g", "s2_g", "M_g")}
        for j in range(state.beta.shape[1]):
            out[f"beta_{j}"] = state.beta[:, j]
        return out
    out = {k: getattr(state, k) for k in ("a_e", "s2_e", "M_e", "a_a", "s2_a", "M_a")}
    out["K_a"] = state.K_a.astype(float)
    return out


def write_densities(out, cfg, model, state, weights, info):
    """``density_*.csv`` files for the fitted model; returns their names."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    name = type(model).__name__
    written = []
    if name in ("NormalMixtureModel", "NrmiMixtureModel"):
        y = model.y
        span = y.max() - y.min()
        grid = _grid(cfg, y.min() - 0.4 * span, y.max() + 0.4 * span)
        dens = w @ model.predictive_density(state, grid)
        write_csv(out / "density_y.csv", ["x", "density"], [grid, dens])
        return ["density_y.csv"]
    if name == "LmmModel":
        se = 4.0 * float(np.sqrt(w @ state.s2_e))
        sg = 4.0 * float(np.sqrt(w @ state.s2_g))
        g_e, g_g = _grid(cfg, -se, se), _grid(cfg, -sg, sg)
        res = model.summaries(state, w, g_e, g_g)
        write_csv(out / "density_eps.csv", ["x", "density"], [g_e, res["f_eps"]])
        write_csv(out / "density_gamma.csv", ["x", "density"], [g_g, res["f_gam"]])
        q = res["beta_quantiles"]
        write_csv(out / "beta.csv", ["coefficient", "mean", "q025", "q50", "q975"],
                  [np.arange(model.p), res["beta_mean"], q[0], q[1], q[2]])  # fmt: skip
        return ["density_eps.csv", "density_gamma.csv", "beta.csv"]
    se = 4.0 * float(np.sqrt(w @ state.s2_e))
    sa = 4.0 * float(np.sqrt(w @ state.s2_a))
    g_e, g_a = _grid(cfg, -se, se, 81), _grid(cfg, -sa, sa)
    res = model.summaries(state, w, g_a, g_e)
    write_csv(out / "density_nu.csv", ["x", "density"], [g_a, res["nu_density"]])
    write_csv(out / "density_eps.csv", ["x", "density"], [g_e, res["eps_density"]])
    G = g_e.size
    write_csv(out / "density_transition.csv", ["eps_prev", "eps_next", "density"],
              [np.repeat(g_e, G), np.tile(g_e, G), res["transition"]])  # fmt: skip
    q = res["trend_quantiles"]
    t = np.arange(1, model.T + 1)
    if info["source"] == "bundled:nile":
        t = load_nile(with_years=True)[0]
    write_csv(out / "trend.csv", ["t", "q025", "q50", "q975"], [t, q[0], q[1], q[2]])
    written += ["density_nu.csv", "density_eps.csv", "density_transition.csv", "trend.csv"]
    return written


def save_particles(path, state, log_weights):
    arrays = {"log_weights": np.asarray(log_weights)}
    for f in dataclasses.fields(state):
        v = getattr(state, f.name)
        if isinstance(v, np.ndarray):
            arrays[f.name] = v
    np.savez_compressed(path, **arrays)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _prepare_out(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "effective_config.json", cfg)
    return out


def run_command(cfg):
    """Adaptive-truncation SMC run; writes the artifacts and returns the exit code."""
    model, info = load_model(cfg)
    out = _prepare_out(cfg)
    rng = np.random.default_rng(cfg["seed"])
    t0 = time.perf_counter()
    collapsed = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", smc.TruncationWarning)
        try:
            res = smc.run(model, smc_config(cfg), rng)
        except smc.ParticleCollapseError as exc:
            collapsed = str(exc)
    wall = time.perf_counter() - t0
    write_json(out / "timing.json", {"wall_time_seconds": wall})
    if collapsed is not None:
        write_json(out / "summary.json", {"model": cfg["model"], "converged": False, "error": collapsed})
        print(f"particle collapse: {collapsed}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    system = res.system
    # row 0 is the initial particle system
    n = len(system.ess_trace)
    write_csv(out / "ess_trace.csv", ["iteration", "ess", "discrepancy", "resampled"],
              [np.arange(n), system.ess_trace, [np.nan] + list(system.discrepancy_trace),
               [0] + [int(r) for r in system.resampled]])  # fmt: skip
    w = system.weights
    summary = {
        "model": cfg["model"],
        "truncation": cfg["truncation"],
        "stop_index": res.stop_index,
        "converged": res.converged,
        "n_iterations": res.n_iterations,
        "truncation_size": res.truncation_size,
        "final_ess": system.ess,
        "n_resampling_steps": int(np.sum(system.resampled)),
        "posterior": {k: _moments(v, w) for k, v in particle_stats(model, system.state).items()},
        "data": info,
    }
    summary["files"] = write_densities(out, cfg, model, system.state, w, info)
    write_json(out / "summary.json", summary)
    if cfg["save_particles"]:
        save_particles(out / "particles.npz", system.state, system.log_weights)
    post = ", ".join(f"E[{k}|y]={v['mean']:.4g}" for k, v in summary["posterior"].items() if k in ("M", "a"))
    print(f"R={res.stop_index} converged={res.converged} truncation={res.truncation_size:.4g} "
          f"time={wall:.1f}s {post}".rstrip())  # fmt: skip
    if not res.converged:
        print("stopping rule not met within max_iters", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def gold_standard_command(cfg):
    """Long fixed-truncation Gibbs reference run."""
    if cfg["model"] == "nrmii" or cfg["truncation"] == "fk":
        raise ConfigError("gold-standard runs use stick-breaking truncations (rsb or sb)")
    model, info = load_model(cfg)
    out = _prepare_out(cfg)
    rng = np.random.default_rng(cfg["seed"])
    mixture = cfg["model"] in ("dpm", "pym")
    grid = None
    if mixture:
        span = model.y.max() - model.y.min()
        grid = _grid(cfg, model.y.min() - 0.4 * span, model.y.max() + 0.4 * span)
    t0 = time.perf_counter()
    gs = gold_standard_run(model, cfg["gold_n_fixed"], cfg["gold_iters"], rng, burn_in=cfg["gold_burn_in"],
                           n_chains=cfg["gold_chains"], grid=grid, stats=particle_stats)  # fmt: skip
    write_json(out / "timing.json", {"wall_time_seconds": time.perf_counter() - t0})
    write_json(out / "gold_summary.json", {
        "model": cfg["model"], "truncation": cfg["truncation"], "n_fixed": cfg["gold_n_fixed"],
        "iterations_per_chain": gs.n_iter, "n_chains": gs.n_chains,
        "posterior": {k: {"mean": gs.means[k], "se": gs.se[k]} for k in gs.means}, "data": info,
    })  # fmt: skip
    if grid is not None:
        write_csv(out / "density_y.csv", ["x", "density", "se"], [gs.grid, gs.density, gs.density_se])
    print(", ".join(f"E[{k}|y]={gs.means[k]:.4g} (se {gs.se[k]:.2g})" for k in gs.means))
    return EXIT_OK


def geweke_setup(cfg, rng):
    """Model on synthetic data with proper priors, and the statistics to compare."""
    model_name, n = cfg["model"], cfg["geweke_n"]
    if model_name == "nrmii" or cfg["truncation"] == "fk":
        raise ConfigError("geweke tests use stick-breaking truncations (rsb or sb)")
    if model_name in ("dpm", "pym"):
        from .mixtures import NormalMixtureHyper, NormalMixtureModel

        hyper = NormalMixtureHyper(0.0 if cfg["mu0"] is None else cfg["mu0"], cfg["sigma2"], cfg["alpha"],
                                   2.0 if cfg["beta"] is None else cfg["beta"])  # fmt: skip
        model = NormalMixtureModel(rng.standard_normal(n), hyper, prior="dp" if model_name == "dpm" else "py",
                                   truncation=cfg["truncation"], n_init=cfg["n_init"], M=cfg["M"], a=cfg["a"],
                                   known_var=cfg["known_var"])  # fmt: skip

        def stats(st):
            out = {"V1": st.V[:, 0], "mu1": st.mu[:, 0], "tau1": st.tau[:, 0]}
            out.update(particle_stats(model, st))
            out.pop("K", None)
            return out

        return model, stats
    from .lmm import FoldedTPrior

    pr = _prior_kwargs(cfg["priors"], proper=True)
    if model_name == "lmm":
        from .lmm import LmmModel, LmmPriors, make_synthetic_panel

        pr.setdefault("beta_prec", 1.0)
        pr.setdefault("s2_eps", FoldedTPrior(3.0, 1.0))
        pr.setdefault("s2_gam", FoldedTPrior(3.0, 1.0))
        model = LmmModel(make_synthetic_panel(rng, n=max(n, 2), T=2, groups=1), LmmPriors(**pr), n_init=cfg["n_init"])

        def stats(st):
            out = {k: getattr(st, k) for k in ("a_e", "s2_e", "M_e", "a_g", "s2_g", "M_g")}
            out["beta_0"] = st.beta[:, 0]
            return out

        return model, stats
    from .timeseries import TsModel, TsPriors

    pr.setdefault("s2_eps", FoldedTPrior(3.0, 1.0))
    pr.setdefault("s2_alpha", FoldedTPrior(3.0, 1.0))
    model = TsModel(rng.standard_normal(max(n, 3)), TsPriors(**pr), n_init=cfg["n_init"])

    def stats(st):
        out = {k: getattr(st, k) for k in ("a_e", "s2_e", "M_e", "a_a", "s2_a", "M_a")}
        out["alpha_1"] = st.alpha[:, 0]
        out["rho_1"] = st.rho[:, 0]
        return out

    return model, stats


def geweke_command(cfg):
    """Joint-distribution test of the model's MCMC kernel on synthetic data."""
    rng = np.random.default_rng(cfg["seed"])
    model, stats = geweke_setup(cfg, rng)
    out = _prepare_out(cfg)
    t0 = time.perf_counter()
    res = geweke_model(model, stats, cfg["geweke_iters"], rng, thin=cfg["geweke_thin"], burn_in=cfg["geweke_burn_in"])
    write_json(out / "timing.json", {"wall_time_seconds": time.perf_counter() - t0})
    names = list(res)
    write_csv(out / "geweke.csv", ["parameter", "ks_statistic", "p_value", "n_joint", "n_prior"],
              [np.array(names, dtype=object), [res[k].statistic for k in names], [res[k].pvalue for k in names],
               [res[k].n_joint for k in names], [res[k].n_prior for k in names]])  # fmt: skip
    threshold = cfg["geweke_alpha"] / len(names)
    failed = [k for k in names if res[k].pvalue < threshold]
    for k in names:
        print(f"{k:>8s}  KS={res[k].statistic:.4f}  p={res[k].pvalue:.4f}")
    if failed:
        print(f"rejected at level {cfg['geweke_alpha']} (Bonferroni): {', '.join(failed)}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


COMMANDS = {"run": run_command, "gold-standard": gold_standard_command, "geweke": geweke_command}


def build_parser():
    p = argparse.ArgumentParser(prog="adaptrunc", description="Adaptive-truncation SMC for nonparametric mixtures.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "run": "adaptive-truncation SMC run",
        "gold-standard": "long fixed-truncation Gibbs reference run",
        "geweke": "joint-distribution test of the MCMC kernel",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="JSON configuration file (defaults apply without one)")
        sp.add_argument("--out", help="output directory (overrides 'out')")
        sp.add_argument("--seed", type=int, help="random seed (overrides 'seed')")
        sp.add_argument("--particles", type=int, help="number of particles S (overrides 'particles')")
        sp.add_argument("--epsilon", type=float, help="stopping tolerance (overrides 'epsilon')")
        sp.add_argument("--threads", type=int, help="limit for BLAS/OpenMP threads")
        sp.add_argument("-v", "--verbose", action="store_true", help="log every SMC iteration")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {"out": args.out, "seed": args.seed, "particles": args.particles, "epsilon": args.epsilon}
    try:
        cfg = parse_config(args.config, overrides)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        limiter = None
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=args.threads)
        try:
            return COMMANDS[args.command](cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
