"""Config-driven experiment execution and run-directory layout.

A run directory contains::

    config.json          echo of the resolved config
    records.json         one TrainRecord per finished iteration
    registry.json        converged snapshots, rewritten after every iteration
    iterations/iter_NNN/ trajectory.csv, metrics.csv, params.json (+ extras)
    summary.json         champion and plain-model metrics

records.json and registry.json are enough to resume an interrupted run.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import landscape2d, metrics, nn, persistent
from ..nn import ModelSpec, ParamSet
from ..persistent import SolutionRegistry, TrainRecord
from . import data as datasets
from .config import ConfigError, ExperimentConfig, derive_seed
from .kink import detect_kink, kink_ratio, two_piece_fit

log = logging.getLogger(__name__)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dump_json(obj))
    tmp.replace(path)


def iteration_dir(run_dir: Path, n: int) -> Path:
    d = run_dir / "iterations" / f"iter_{n:03d}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _metric_block(rec: TrainRecord) -> dict:
    return {
        "iteration_index": rec.iteration_index,
        "final_train_loss": rec.final_train_loss,
        "final_val_metric": rec.final_val_metric,
        "final_test_metric": rec.final_test_metric,
    }


def _prepare_dir(cfg: ExperimentConfig, resume: bool) -> Path:
    run_dir = cfg.resolved_output_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = run_dir / "config.json"
    if resume and cfg_path.exists() and cfg_path.read_text() != cfg.dumps():
        raise ConfigError(f"{run_dir} was started with a different config; cannot resume")
    cfg_path.write_text(cfg.dumps())
    return run_dir


def run_experiment(cfg: ExperimentConfig, resume: bool = False) -> Path:
    run_dir = _prepare_dir(cfg, resume)
    if cfg.experiment == "toy2d":
        summary = _run_toy2d(cfg, run_dir)
    else:
        summary = _run_network(cfg, run_dir, resume)
    write_json(run_dir / "summary.json", summary)
    return run_dir


# -- toy surface ------------------------------------------------------------


def _run_toy2d(cfg: ExperimentConfig, run_dir: Path) -> dict:
    p = cfg.persistent
    start = tuple(cfg.options.get("start", landscape2d.W_INI))
    stride = int(cfg.options.get("csv_stride", 1))
    runs = landscape2d.run_toy_persistent(
        start, cfg.optimizer.learning_rate, p.inner_steps, p.lam, p.iterations
    )
    records = []
    for n, tr in enumerate(runs):
        tr.write_csv(iteration_dir(run_dir, n) / "trajectory.csv", stride)
        records.append({
            "iteration_index": n,
            "final_point": [tr.converged_to.x, tr.converged_to.y],
            "final_loss": tr.final_loss,
            "registry_size": len(tr.registry),
        })
    write_json(run_dir / "records.json", records)
    write_json(
        run_dir / "registry.json",
        {"snapshots": [{"layers": [[t.converged_to.x, t.converged_to.y]]} for t in runs]},
    )
    finals = [t.final_loss for t in runs]
    champ = persistent.select_champion(finals)
    return {
        "experiment": "toy2d",
        "iterations": len(runs),
        "champion_index": champ,
        "champion": records[champ],
        "plain": records[0],
        "lambda": p.lam,
    }


# -- network experiments ----------------------------------------------------


def _load_resume(run_dir: Path):
    rec_path, reg_path = run_dir / "records.json", run_dir / "registry.json"
    if not (rec_path.exists() and reg_path.exists()):
        return None
    registry = SolutionRegistry.from_json(json.loads(reg_path.read_text()))
    docs = json.loads(rec_path.read_text())
    records = [TrainRecord.from_json(d, registry.snapshots[i]) for i, d in enumerate(docs)]
    log.info("resuming %s after %d iterations", run_dir, len(records))
    return records, registry


def _write_iteration(run_dir: Path, rec: TrainRecord) -> None:
    d = iteration_dir(run_dir, rec.iteration_index)
    (d / "params.json").write_text(json.dumps(rec.params.to_json()) + "\n")
    rec.params_path = str((d / "params.json").relative_to(run_dir))
    with open(d / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for t, v in enumerate(rec.loss_curve):
            w.writerow([t, repr(v)])
    with open(d / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "train_loss", "val_metric"])
        for e in rec.evaluations:
            w.writerow([e["step"], repr(e["train_loss"]), repr(e["val_metric"])])
        w.writerow([len(rec.loss_curve), repr(rec.final_train_loss), repr(rec.final_val_metric)])


def _kink_report(spec: ModelSpec, params: ParamSet, grid: np.ndarray) -> dict:
    preds = nn.predict(spec, params, grid[:, None]).ravel()
    flag, knot = detect_kink(grid, preds)
    return {"piecewise_affine": flag, "knot": knot, "ratio": kink_ratio(grid, preds)}


def _run_network(cfg: ExperimentConfig, run_dir: Path, resume: bool) -> dict:
    spec = cfg.model
    splits = datasets.generate(cfg.data)
    pconf = cfg.persistent
    state = _load_resume(run_dir) if resume else None

    # trajectory samples for the bias/noise decomposition, per persistent iteration
    decomp_every = int(cfg.options.get("decomposition_every", max(1, pconf.inner_steps // 50)))
    samples: dict[int, list[ParamSet]] = {}
    saturation: dict[int, metrics.SaturationReport] = {}
    sat_every = int(cfg.options.get("every", 100)) if cfg.experiment == "saturation" else 0
    threshold = float(cfg.options.get("threshold", 0.98))

    def monitor(it, t, params):
        if it > 0 and t % decomp_every == 0:
            samples.setdefault(it, []).append(params.copy())
        if sat_every and t % sat_every == 0:
            rep = saturation.setdefault(it, metrics.SaturationReport())
            rep.add(t, metrics.saturation_snapshot(spec, params, splits[0], threshold))

    def on_iteration(rec: TrainRecord, registry: SolutionRegistry):
        _write_iteration(run_dir, rec)
        it = rec.iteration_index
        if it in samples:
            rep = persistent.decompose_gradient(
                SolutionRegistry(registry.snapshots[:it]), samples.pop(it),
                pconf.lam, pconf.mode, rec.selected_layer,
            )
            write_json(iteration_dir(run_dir, it) / "decomposition.json", {
                "residual_mean_norm": rep.residual_mean_norm,
                "max_sample_norm": rep.max_sample_norm,
                "n_samples": len(rep.residual_samples),
            })
        if rec.iteration_index in saturation:
            d = iteration_dir(run_dir, rec.iteration_index)
            saturation[rec.iteration_index].write_csv(d / "saturation.csv")
            write_json(d / "saturation.json", saturation[rec.iteration_index].to_json())
        write_json(run_dir / "registry.json", registry.to_json())
        write_json(run_dir / "records.json", [r.to_json() for r in all_records + [rec]])
        all_records.append(rec)

    all_records: list[TrainRecord] = list(state[0]) if state else []
    records, registry, champ = persistent.run_persistent(
        spec, splits, cfg.optimizer, pconf, spec.initializer.seed,
        resume=state, on_iteration=on_iteration,
        monitor=monitor, monitor_every=int(np.gcd(decomp_every, sat_every)),
    )

    summary = {
        "experiment": cfg.experiment,
        "iterations": len(records),
        "champion_index": champ,
        "champion": _metric_block(records[champ]),
        "plain": _metric_block(records[0]),
        "selected_layers": [r.selected_layer for r in records],
        "val_metrics": [r.final_val_metric for r in records],
        "train_losses": [r.final_train_loss for r in records],
        "metric": "error_rate" if spec.loss_kind == "cross_entropy" else "mse",
    }

    # stored per iteration so a resumed run reports the earlier ones too
    decomp = {}
    for r in records[1:]:
        path = iteration_dir(run_dir, r.iteration_index) / "decomposition.json"
        if path.exists():
            decomp[str(r.iteration_index)] = json.loads(path.read_text())
    if decomp:
        summary["decomposition"] = decomp

    if cfg.experiment == "regress1d":
        grid = np.linspace(*datasets.REGRESS_RANGE, int(cfg.options.get("grid_points", 301)))
        summary["kink"] = [_kink_report(spec, r.params, grid) for r in records]
        x, y = splits[0].inputs, splits[0].targets
        summary["affine_floor"] = datasets.affine_fit_mse(x, y)
        summary["two_piece_floor"] = two_piece_fit(x.ravel(), y.ravel())[0]

    if cfg.experiment == "saturation":
        summary["saturation_final_p98"] = {
            str(it): [s.p98_abs_activation for s in rep.entries[-1][1]]
            for it, rep in sorted(saturation.items())
        }

    if cfg.experiment == "spectrum":
        pct = float(cfg.options.get("bulk_percentile", 90.0))
        summary["spectrum"] = {}
        for name, idx in (("plain", 0), ("champion", champ)):
            H = metrics.hessian_dense(spec, records[idx].params, splits[0])
            rep = metrics.spectrum(H, pct)
            rep.write_csv(run_dir / f"spectrum_{name}.csv")
            write_json(run_dir / f"spectrum_{name}.json", rep.to_json())
            summary["spectrum"][name] = {
                "iteration_index": idx,
                "lambda_max": rep.lambda_max,
                "bulk_edge": rep.bulk_edge,
                "outlier_count": rep.outlier_count,
                "edge_gap": rep.lambda_max - rep.bulk_edge,
            }
    return summary


# -- re-initialization baseline ---------------------------------------------


def compare_reinit(cfg: ExperimentConfig, n_seeds: int, seeds=None, write: bool = True) -> dict:
    """Plain re-initializations versus one persistent run of equal step budget."""
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    if cfg.experiment == "toy2d":
        raise ConfigError("compare-reinit needs a network experiment")
    if seeds is None:
        seeds = [derive_seed(cfg.master_seed, "reinit", i) for i in range(n_seeds)]
    seeds = [int(s) for s in seeds]
    if len(seeds) != n_seeds:
        raise ConfigError("number of seeds does not match n_seeds")

    spec = cfg.model
    train, val, test = datasets.generate(cfg.data)
    steps = cfg.persistent.inner_steps
    one_d = spec.layer_widths[0] == 1 and spec.layer_widths[-1] == 1
    grid = np.linspace(*datasets.REGRESS_RANGE, int(cfg.options.get("grid_points", 301)))

    reinit = []
    for s in seeds:
        s_spec = replace(spec, initializer=replace(spec.initializer, seed=s))
        params, _ = persistent.train_iteration(
            s_spec, nn.init_params(s_spec), train, cfg.optimizer, steps
        )
        entry = {
            "seed": s,
            "final_train_loss": nn.data_loss(spec, params, train),
            "final_val_metric": persistent.eval_metric(spec, params, val),
            "final_test_metric": persistent.eval_metric(spec, params, test),
            "steps": steps,
        }
        if one_d:
            entry["piecewise_affine"] = _kink_report(spec, params, grid)["piecewise_affine"]
        reinit.append(entry)

    pconf = replace(cfg.persistent, iterations=n_seeds)
    records, _, champ = persistent.run_persistent(
        spec, (train, val, test), cfg.optimizer, pconf, spec.initializer.seed
    )
    pers = []
    for r in records:
        entry = _metric_block(r)
        entry["steps"] = len(r.loss_curve)
        if one_d:
            entry["piecewise_affine"] = _kink_report(spec, r.params, grid)["piecewise_affine"]
        pers.append(entry)

    def kink_freq(entries):
        if not one_d:
            return None
        return sum(e["piecewise_affine"] for e in entries) / len(entries)

    report = {
        "n_seeds": n_seeds,
        "reinit": reinit,
        "persistent": pers,
        "best_reinit_train_loss": min(e["final_train_loss"] for e in reinit),
        "best_persistent_train_loss": min(e["final_train_loss"] for e in pers),
        "persistent_champion_index": champ,
        "reinit_total_steps": sum(e["steps"] for e in reinit),
        "persistent_total_steps": sum(e["steps"] for e in pers),
        "reinit_kink_frequency": kink_freq(reinit),
        "persistent_kink_frequency": kink_freq(pers),
    }
    if write:
        out = cfg.resolved_output_dir()
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "compare_reinit.json", report)
    return report


# -- post-hoc diagnostics on a finished run ---------------------------------


def _load_run(run_dir: Path):
    from .config import load_config

    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.json")
    if cfg.experiment == "toy2d":
        raise ConfigError("diagnostics need a network run")
    reg_path = run_dir / "registry.json"
    if not reg_path.exists():
        raise ConfigError(f"{run_dir} has no registry.json")
    registry = SolutionRegistry.from_json(json.loads(reg_path.read_text()))
    return cfg, registry


def spectrum_for_run(run_dir, iteration: int, bulk_percentile: float = 90.0):
    cfg, registry = _load_run(run_dir)
    if not 0 <= iteration < len(registry):
        raise ConfigError(f"iteration {iteration} not in run (have {len(registry)})")
    train = datasets.generate(cfg.data)[0]
    H = metrics.hessian_dense(cfg.model, registry.snapshots[iteration], train)
    rep = metrics.spectrum(H, bulk_percentile)
    run_dir = Path(run_dir)
    rep.write_csv(run_dir / f"spectrum_iter_{iteration:03d}.csv")
    write_json(run_dir / f"spectrum_iter_{iteration:03d}.json", rep.to_json())
    return rep


def saturation_for_run(run_dir, threshold: float = 0.98) -> metrics.SaturationReport:
    """Saturation of every registered snapshot on the training split.

    The report's ``epoch`` column holds the persistent iteration index.
    """
    cfg, registry = _load_run(run_dir)
    train = datasets.generate(cfg.data)[0]
    report = metrics.SaturationReport()
    for n, snap in enumerate(registry.snapshots):
        report.add(n, metrics.saturation_snapshot(cfg.model, snap, train, threshold))
    run_dir = Path(run_dir)
    report.write_csv(run_dir / "saturation_by_iteration.csv")
    write_json(run_dir / "saturation_by_iteration.json", report.to_json())
    return report
