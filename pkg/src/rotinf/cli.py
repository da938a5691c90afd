"""Command line entry point: solve, variance, ci, bootstrap, mc, rcol.

Every subcommand resolves its configuration, computes, writes data artifacts
atomically (temp file plus rename, so failures leave no partial outputs),
records a run manifest, and prints a machine-readable JSON result on stdout.
All randomness flows from --seed; rerunning a seeded command is bit-identical
at any --threads value.

Exit codes: 0 ok, 2 usage or configuration error, 3 I/O error,
4 convergence failure, 5 numerical failure.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
import tempfile
import time

import click
import numpy as np

from . import __version__
from . import coloc
from . import inference as inf
from . import regularizers as rg
from . import sensitivity as sens
from . import solver as sv
from .exceptions import ConvergenceError, DomainError, NumericalError, ReductionRequiredError
from .space import (CostVector, Prob, build_grid_space, cost_from_metric,
                    cost_quantile, empirical_distribution)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONVERGENCE = 4
EXIT_NUMERICAL = 5


def _die(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _map_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except ConvergenceError as err:
            _die(EXIT_CONVERGENCE, err)
        except (DomainError, NumericalError, ReductionRequiredError,
                np.linalg.LinAlgError) as err:
            _die(EXIT_NUMERICAL, err)
        except (FileNotFoundError, IsADirectoryError, NotADirectoryError,
                PermissionError) as err:
            _die(EXIT_IO, err)
        except OSError as err:
            _die(EXIT_IO, err)
        except (ValueError, TypeError, json.JSONDecodeError) as err:
            _die(EXIT_USAGE, err)
    return wrapper


def _with_config(fn):
    """Let --config JSON override the parsed flags (manifest files work too)."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        config_path = kwargs.pop("config", None)
        if config_path:
            with open(config_path) as fh:
                data = json.load(fh)
            if isinstance(data, dict) and "config" in data and "subcommand" in data:
                data = data["config"]
            if not isinstance(data, dict):
                raise click.UsageError("--config must hold a JSON object")
            for key, value in data.items():
                key = key.replace("-", "_")
                if key in kwargs:
                    kwargs[key] = tuple(value) if isinstance(value, list) else value
        return fn(*args, **kwargs)
    return wrapper


def _read_vector(path):
    return np.loadtxt(path, delimiter=",", dtype=float).ravel()


def _read_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def _atomic_write(path, data):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rot-tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path, array):
    array = np.atleast_2d(np.asarray(array, dtype=float))
    lines = "\n".join(",".join(repr(float(x)) for x in row) for row in array)
    _atomic_write(path, lines + "\n")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _json_dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def _write_manifest(out_dir, subcommand, config, seed, inputs, outputs, t0):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "version": __version__,
        "inputs": {str(p): _digest(p) for p in inputs if p},
        "outputs": sorted(outputs),
        "wall_time_s": round(time.monotonic() - t0, 6),
    }
    path = os.path.join(out_dir, f"{subcommand}_manifest.json")
    _atomic_write(path, _json_dumps(manifest) + "\n")
    return path


def _resolve_threads(threads):
    if threads is not None:
        return int(threads)
    env = os.environ.get("ROT_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _load_cost(cost, grid, extent, metric, p):
    """Cost from a CSV file or from grid flags; returns (CostVector, input paths)."""
    if (cost is None) == (grid is None):
        raise click.UsageError("give exactly one of --cost FILE and --grid L")
    if cost is not None:
        M = _read_matrix(cost)
        entries = M.ravel()
        if M.shape[0] != M.shape[1]:
            raise click.UsageError("cost CSV must be a square matrix")
        c_max = float(entries.max()) ** (1.0 / p) if entries.size else 0.0
        return CostVector(entries=entries, p=p, c_max=c_max), [cost]
    space = build_grid_space(grid, extent)
    return cost_from_metric(space, p=p, metric=metric), []


def _resolve_lambda(lam, lam0, c):
    if (lam is None) == (lam0 is None):
        raise click.UsageError("give exactly one of --lambda and --lambda0")
    if lam is not None:
        return float(lam), {"lam": float(lam), "lam0": None, "lambda_resolved": float(lam)}
    value = float(lam0) * cost_quantile(c, 0.5)
    return value, {"lam": None, "lam0": float(lam0), "lambda_resolved": value}


def _load_prob(path, normalize):
    return Prob.from_weights(_read_vector(path), normalize=normalize)


def _require(value, flag):
    if value is None:
        raise click.UsageError(f"{flag} is required (flag or --config entry)")
    return value


_cost_options = [
    click.option("--cost", type=click.Path(dir_okay=False), default=None,
                 help="Cost matrix CSV (N x N, row-major)."),
    click.option("--grid", type=int, default=None, help="Build an L x L grid instead."),
    click.option("--extent", type=float, default=1.0, show_default=True),
    click.option("--metric", type=click.Choice(["euclidean", "sqeuclidean"]),
                 default="euclidean", show_default=True),
    click.option("--p", type=float, default=1.0, show_default=True,
                 help="Cost power; the distance reported is the p-th root."),
]

_lambda_options = [
    click.option("--lambda", "lam", type=float, default=None,
                 help="Absolute regularization strength."),
    click.option("--lambda0", "lam0", type=float, default=None,
                 help="Regularization as a multiple of the median cost."),
]


def _add(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return deco


@click.group()
@click.version_option(version=__version__, prog_name="rot")
def main():
    """Regularized transport solvers with statistical inference."""


@main.command()
@_add(_cost_options)
@click.option("--r", "r_path", type=click.Path(dir_okay=False), default=None)
@click.option("--s", "s_path", type=click.Path(dir_okay=False), default=None)
@_add(_lambda_options)
@click.option("--reg", default="entropy", show_default=True,
              help="entropy | burg | fermi | beta:<b> | lpq:<p>")
@click.option("--tol", type=float, default=sv.DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=int, default=sv.DEFAULT_MAX_ITER, show_default=True)
@click.option("--normalize", is_flag=True, help="Renormalize input weight vectors.")
@click.option("--plan-out", default="plan.csv", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--config", type=click.Path(dir_okay=False), default=None,
              help="JSON file whose entries override the flags.")
@_with_config
@_map_errors
def solve(cost, grid, extent, metric, p, r_path, s_path, lam, lam0, reg, tol,
          max_iter, normalize, plan_out, out_dir):
    """Solve one regularized transport problem and write the plan."""
    t0 = time.monotonic()
    os.makedirs(out_dir, exist_ok=True)
    _require(r_path, "--r")
    _require(s_path, "--s")
    c, inputs = _load_cost(cost, grid, extent, metric, p)
    inputs += [r_path, s_path]
    r = _load_prob(r_path, normalize)
    s = _load_prob(s_path, normalize)
    lam_value, lam_info = _resolve_lambda(lam, lam0, c)
    regularizer = rg.from_spec(reg)
    sol = sv.solve_reduced(c, r.weights, s.weights, lam_value, reg=regularizer,
                           tol=tol, max_iter=max_iter)
    plan_path = os.path.join(out_dir, plan_out)
    _write_csv(plan_path, sol.full_entries().reshape(r.dim, s.dim))
    result = {
        "plan_file": plan_path,
        "divergence": sol.divergence(),
        "iterations": sol.plan.iterations,
        "residual": sol.plan.residual,
    }
    config = {"cost": cost, "grid": grid, "extent": extent, "metric": metric,
              "p": p, "r_path": r_path, "s_path": s_path, "reg": reg, "tol": tol,
              "max_iter": max_iter, "normalize": normalize, "plan_out": plan_out,
              **lam_info}
    _write_manifest(out_dir, "solve", config, None, inputs, [plan_path], t0)
    click.echo(_json_dumps(result))


def _variance_core(c, r, s, lam_value, regularizer, mode, delta, tol, max_iter):
    sol = sv.solve_reduced(c, r.weights, s.weights, lam_value, reg=regularizer,
                           tol=tol, max_iter=max_iter)
    action = sens.plan_covariance_action(sol.plan.reg, sol.plan, mode=mode, delta=delta)
    gamma = sens.divergence_gradient(sol.cost.ravel(), sol.plan, p=sol.plan.p)
    return sol, action.quad_form(gamma)


@main.command()
@_add(_cost_options)
@click.option("--r", "r_path", type=click.Path(dir_okay=False), default=None)
@click.option("--s", "s_path", type=click.Path(dir_okay=False), default=None)
@_add(_lambda_options)
@click.option("--reg", default="entropy", show_default=True)
@click.option("--mode", type=click.Choice(["one", "two"]), default="one", show_default=True)
@click.option("--delta", type=float, default=None,
              help="Two-sample weight; inferred from --n/--m when omitted.")
@click.option("--n", "n_size", type=int, default=None)
@click.option("--m", "m_size", type=int, default=None)
@click.option("--tol", type=float, default=sv.DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=int, default=sv.DEFAULT_MAX_ITER, show_default=True)
@click.option("--normalize", is_flag=True)
@click.option("--gradient-out", default=None,
              help="Write the plan gradient matrix as CSV.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--config", type=click.Path(dir_okay=False), default=None)
@_with_config
@_map_errors
def variance(cost, grid, extent, metric, p, r_path, s_path, lam, lam0, reg, mode,
             delta, n_size, m_size, tol, max_iter, normalize, gradient_out, out_dir):
    """Limit variance of the empirical transport distance."""
    t0 = time.monotonic()
    os.makedirs(out_dir, exist_ok=True)
    _require(r_path, "--r")
    _require(s_path, "--s")
    c, inputs = _load_cost(cost, grid, extent, metric, p)
    inputs += [r_path, s_path]
    r = _load_prob(r_path, normalize)
    s = _load_prob(s_path, normalize)
    lam_value, lam_info = _resolve_lambda(lam, lam0, c)
    regularizer = rg.from_spec(reg)
    mode_name = "one_sample" if mode == "one" else "two_sample"
    if mode_name == "two_sample" and delta is None:
        if n_size is None or m_size is None:
            raise click.UsageError("two-sample variance needs --delta or both --n and --m")
        delta = m_size / (n_size + m_size)
    sol, sigma2 = _variance_core(c, r, s, lam_value, regularizer, mode_name, delta,
                                 tol, max_iter)
    outputs = []
    result = {
        "sigma_divergence": sigma2,
        "mode": mode_name,
        "delta": delta,
        "divergence": sol.divergence(),
        "orientation": "first marginal sampled; last column constraint dropped",
    }
    if gradient_out:
        grad = sens.plan_gradient(sol.plan.reg, sol.plan).grad_phi
        grad_path = os.path.join(out_dir, gradient_out)
        _write_csv(grad_path, grad)
        outputs.append(grad_path)
        result["plan_gradient_file"] = grad_path
    config = {"cost": cost, "grid": grid, "extent": extent, "metric": metric, "p": p,
              "r_path": r_path, "s_path": s_path, "reg": reg, "mode": mode,
              "delta": delta, "n_size": n_size, "m_size": m_size, "tol": tol,
              "max_iter": max_iter, "normalize": normalize,
              "gradient_out": gradient_out, **lam_info}
    _write_manifest(out_dir, "variance", config, None, inputs, outputs, t0)
    click.echo(_json_dumps(result))


@main.command()
@_add(_cost_options)
@click.option("--r", "r_path", type=click.Path(dir_okay=False), default=None)
@click.option("--s", "s_path", type=click.Path(dir_okay=False), default=None)
@_add(_lambda_options)
@click.option("--reg", default="entropy", show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--n", "n_size", type=int, required=True, help="Sample size behind r.")
@click.option("--m", "m_size", type=int, default=None,
              help="Second sample size; switches to the two-sample variance.")
@click.option("--tol", type=float, default=sv.DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=int, default=sv.DEFAULT_MAX_ITER, show_default=True)
@click.option("--normalize", is_flag=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--config", type=click.Path(dir_okay=False), default=None)
@_with_config
@_map_errors
def ci(cost, grid, extent, metric, p, r_path, s_path, lam, lam0, reg, alpha,
       n_size, m_size, tol, max_iter, normalize, out_dir):
    """Normal confidence interval for the transport distance."""
    t0 = time.monotonic()
    os.makedirs(out_dir, exist_ok=True)
    _require(r_path, "--r")
    _require(s_path, "--s")
    c, inputs = _load_cost(cost, grid, extent, metric, p)
    inputs += [r_path, s_path]
    r = _load_prob(r_path, normalize)
    s = _load_prob(s_path, normalize)
    lam_value, lam_info = _resolve_lambda(lam, lam0, c)
    regularizer = rg.from_spec(reg)
    if m_size is None:
        mode_name, delta = "one_sample", None
    else:
        mode_name, delta = "two_sample", m_size / (n_size + m_size)
    sol, sigma2 = _variance_core(c, r, s, lam_value, regularizer, mode_name, delta,
                                 tol, max_iter)
    w = sol.divergence()
    lower, upper = inf.confidence_interval(w, sigma2, n_size, alpha=alpha, m=m_size)
    result = {"w": w, "sigma_divergence": sigma2, "lower": lower, "upper": upper,
              "alpha": alpha, "n": n_size, "m": m_size}
    config = {"cost": cost, "grid": grid, "extent": extent, "metric": metric, "p": p,
              "r_path": r_path, "s_path": s_path, "reg": reg, "alpha": alpha,
              "n_size": n_size, "m_size": m_size, "tol": tol,
              "max_iter": max_iter, "normalize": normalize, **lam_info}
    _write_manifest(out_dir, "ci", config, None, inputs, [], t0)
    click.echo(_json_dumps(result))


@main.command()
@click.option("--data", type=click.Path(dir_okay=False), default=None,
              help="CSV of observed point indices (0-based).")
@_add(_cost_options)
@click.option("--s", "s_path", type=click.Path(exists=True, dir_okay=False), required=True)
@_add(_lambda_options)
@click.option("--B", "n_boot", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--tol", type=float, default=sv.DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=int, default=sv.DEFAULT_MAX_ITER, show_default=True)
@click.option("--normalize", is_flag=True)
@click.option("--samples-out", default="bootstrap_samples.csv", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--config", type=click.Path(dir_okay=False), default=None)
@_with_config
@_map_errors
def bootstrap(data, cost, grid, extent, metric, p, s_path, lam, lam0, n_boot,
              seed, threads, tol, max_iter, normalize, samples_out, out_dir):
    """Naive n-out-of-n bootstrap sample of the transport distance."""
    t0 = time.monotonic()
    if seed is None:
        raise click.UsageError("--seed is required for bootstrap runs")
    os.makedirs(out_dir, exist_ok=True)
    _require(data, "--data")
    _require(s_path, "--s")
    c, inputs = _load_cost(cost, grid, extent, metric, p)
    inputs += [data, s_path]
    sample = np.loadtxt(data, delimiter=",", dtype=int).ravel()
    r_hat = empirical_distribution(sample, c.n_points)
    s = _load_prob(s_path, normalize)
    lam_value, lam_info = _resolve_lambda(lam, lam0, c)
    dist = inf.bootstrap_statistic(r_hat, s, c, lam_value, B=n_boot, seed=seed,
                                   threads=_resolve_threads(threads), tol=tol,
                                   max_iter=max_iter)
    samples_path = os.path.join(out_dir, samples_out)
    _write_csv(samples_path, dist.values[:, None])
    result = {"samples_file": samples_path, "B": n_boot, "n": dist.n,
              "mean": float(dist.values.mean()), "sd": float(dist.values.std(ddof=1))}
    config = {"data": data, "cost": cost, "grid": grid, "extent": extent,
              "metric": metric, "p": p, "s_path": s_path, "n_boot": n_boot,
              "seed": seed, "tol": tol, "max_iter": max_iter,
              "normalize": normalize, "samples_out": samples_out, **lam_info}
    _write_manifest(out_dir, "bootstrap", config, seed, inputs, [samples_path], t0)
    click.echo(_json_dumps(result))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="JSON MCConfig.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--threads", type=int, default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@_map_errors
def mc(config_path, seed, threads, out_dir):
    """Monte Carlo sweep of the limit-law approximation quality."""
    t0 = time.monotonic()
    os.makedirs(out_dir, exist_ok=True)
    with open(config_path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict) and "config" in raw and "subcommand" in raw:
        raw = raw["config"]
    if seed is not None:
        raw["seed"] = seed
    if raw.get("seed") is None:
        raise click.UsageError("a seed is required (config key 'seed' or --seed)")
    config = inf.MCConfig.from_dict(raw)
    report = inf.mc_experiment(config, threads=_resolve_threads(threads))
    outputs = []
    cells = []
    for cell in report.cells:
        name = f"mc_samples_l{cell.lambda0:g}_n{cell.n}.csv"
        path = os.path.join(out_dir, name)
        _write_csv(path, cell.sample.values[:, None])
        outputs.append(path)
        cells.append({"lambda0": cell.lambda0, "lambda": cell.lam, "n": cell.n,
                      "ks_normal": cell.ks_normal, "ks_ot_limit": cell.ks_ot_limit,
                      "failures": cell.failures, "samples_file": path})
    result = {"cells": cells, "config": config.to_dict()}
    report_path = os.path.join(out_dir, "mc_report.json")
    _atomic_write(report_path, _json_dumps(result) + "\n")
    outputs.append(report_path)
    _write_manifest(out_dir, "mc", config.to_dict(), config.seed,
                    [config_path], outputs, t0)
    click.echo(_json_dumps(result))


@main.command()
@click.option("--imgA", "img_a", type=click.Path(dir_okay=False), default=None)
@click.option("--imgB", "img_b", type=click.Path(dir_okay=False), default=None)
@click.option("--pixel-size", type=float, default=1.0, show_default=True)
@click.option("--resample", "n_resample", type=int, default=None,
              help="Draws from each intensity distribution; defaults to "
                   "50 * sqrt(pixel count).")
@_add(_lambda_options)
@click.option("--p", type=float, default=1.0, show_default=True)
@click.option("--metric", type=click.Choice(["euclidean", "sqeuclidean"]),
              default="sqeuclidean", show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--band", type=click.Choice(["bootstrap", "gaussian", "none"]),
              default="bootstrap", show_default=True)
@click.option("--B", "n_boot", type=int, default=100, show_default=True)
@click.option("--M", "n_draws", type=int, default=coloc.DEFAULT_BAND_DRAWS, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--tol", type=float, default=sv.DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=int, default=sv.DEFAULT_MAX_ITER, show_default=True)
@click.option("--curve-out", default="rcol_curve.csv", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--config", type=click.Path(dir_okay=False), default=None)
@_with_config
@_map_errors
def rcol(img_a, img_b, pixel_size, n_resample, lam, lam0, p, metric, alpha, band,
         n_boot, n_draws, seed, threads, tol, max_iter, curve_out, out_dir):
    """Colocalization curve between two images with a uniform confidence band."""
    t0 = time.monotonic()
    if seed is None:
        raise click.UsageError("--seed is required for rcol runs")
    _require(img_a, "--imgA")
    _require(img_b, "--imgB")
    if (lam is None) == (lam0 is None):
        raise click.UsageError("give exactly one of --lambda and --lambda0")
    os.makedirs(out_dir, exist_ok=True)
    image_a = coloc.read_image(img_a, pixel_size)
    image_b = coloc.read_image(img_b, pixel_size)
    if n_resample is None:
        n_resample = int(round(50.0 * np.sqrt(image_a.height * image_a.width)))
    analysis = coloc.rcol_pipeline(image_a, image_b, n=n_resample, seed=seed,
                                   lam=lam, lam0=lam0, p=p, metric=metric,
                                   band=band, B=n_boot, draws=n_draws, alpha=alpha,
                                   tol=tol, max_iter=max_iter,
                                   threads=_resolve_threads(threads))
    curve = analysis.curve
    if curve.lower is None:
        table = np.column_stack([curve.thresholds, curve.values])
    else:
        table = np.column_stack([curve.thresholds, curve.values, curve.lower, curve.upper])
    curve_path = os.path.join(out_dir, curve_out)
    _write_csv(curve_path, table)
    result = {"curve_file": curve_path, "u_quantile": analysis.u_quantile,
              "n": analysis.n, "lambda": analysis.lam, "failures": analysis.failures,
              "band": band, "alpha": alpha,
              "support_sizes": list(analysis.support_sizes)}
    config = {"img_a": img_a, "img_b": img_b, "pixel_size": pixel_size,
              "n_resample": n_resample, "p": p, "metric": metric, "alpha": alpha,
              "band": band, "n_boot": n_boot, "n_draws": n_draws, "seed": seed,
              "tol": tol, "max_iter": max_iter, "curve_out": curve_out,
              "lam": lam, "lam0": lam0, "lambda_resolved": analysis.lam}
    _write_manifest(out_dir, "rcol", config, seed, [img_a, img_b], [curve_path], t0)
    click.echo(_json_dumps(result))


if __name__ == "__main__":
    main()
