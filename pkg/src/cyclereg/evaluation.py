"""Test-split metrics, multi-seed orchestration and report emission.

Metric semantics for a trained pair (phi: X->Y, psi: Y->X), all in
normalized units on the held-out test split:

  forward_error     paired strategies: mae(y, phi(x)).
                    jcm trains without pairing, so its forward metric is
                    the X-space reconstruction mae(x, psi(phi(x))).
  backward_error    mae(y, phi(psi(y))) for every strategy: a proposed
                    preimage is judged by whether the forward model maps
                    it back to the requested output. The direct mae(x,
                    psi(y)) stays reported, but it punishes any valid
                    preimage that differs from the sampled one, so it is
                    a secondary column for non-injective targets.
  forward_direct    mae(y, phi(x)) always (diagnostic for jcm).
  backward_direct   mae(x, psi(y)).
  backward_solution mae(y, f(psi(y))) through the true generator, when
                    the dataset came from a registered task. Rows where
                    the generator is undefined (e.g. a negative proposed
                    mass for the spring task) are dropped; None when no
                    row survives or the generator is unknown.
"""

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .data import TASKS, build_dataset, denormalize, normalize
from .models import build_pair, predict
from .training import train_run

REPORT_COLUMNS = (
    "task", "strategy", "seed", "status", "epochs_run",
    "forward_error", "backward_error", "forward_direct", "backward_direct",
    "backward_solution", "final_loss_total", "wall_ms_total",
)


def mae(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mae shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def cycle_reconstruction_error(pair, y):
    """mae(y, phi(psi(y))) in inference mode."""
    return mae(y, predict(pair.phi, predict(pair.psi, y)))


def relative_error_ratio(err, reference):
    """err / reference, None when the reference is zero (a perfect
    reference makes the ratio undefined, not infinite)."""
    if reference == 0.0:
        return None
    return err / reference


def improvement_vs_baseline(err, baseline_err):
    """Fractional improvement (positive = better than the baseline)."""
    if baseline_err == 0.0:
        return None
    return (baseline_err - err) / baseline_err


@dataclass
class MetricsReport:
    task: str
    strategy: str
    seed: int
    status: str
    epochs_run: int
    forward_error: float | None = None
    backward_error: float | None = None
    forward_direct: float | None = None
    backward_direct: float | None = None
    backward_solution: float | None = None
    final_loss_total: float | None = None
    wall_ms_total: float | None = None

    def row(self):
        return {c: getattr(self, c) for c in REPORT_COLUMNS}


def _solution_error(dataset, x_hat_norm):
    """Backward error through the true generator, normalized units."""
    if dataset.task not in TASKS:
        return None
    fn = TASKS[dataset.task].fn
    stats = dataset.stats
    x_raw = denormalize(x_hat_norm, stats.x_lo, stats.x_hi)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        y_raw = fn(x_raw)
    y_sol = normalize(y_raw, stats.y_lo, stats.y_hi)
    ok = np.all(np.isfinite(y_sol), axis=1)
    if not ok.any():
        return None
    return mae(dataset.y_test[ok], y_sol[ok])


def evaluate_pair(pair, dataset, strategy, result=None, seed=0):
    """Metrics on the test split; a diverged result yields a report with
    empty metric fields."""
    status = result.status if result is not None else "ok"
    epochs = len(result.records) if result is not None else 0
    rep = MetricsReport(dataset.task, strategy, seed, status, epochs)
    if result is not None:
        rep.wall_ms_total = float(sum(r.wall_ms for r in result.records))
        if result.records:
            rep.final_loss_total = result.records[-1].loss_total
    if status != "ok":
        return rep

    x, y = dataset.x_test, dataset.y_test
    y_hat = predict(pair.phi, x)
    x_hat = predict(pair.psi, y)
    rep.forward_direct = mae(y, y_hat)
    rep.backward_direct = mae(x, x_hat)
    rep.backward_error = mae(y, predict(pair.phi, x_hat))
    if strategy == "jcm":
        rep.forward_error = mae(x, predict(pair.psi, y_hat))
    else:
        rep.forward_error = rep.forward_direct
    rep.backward_solution = _solution_error(dataset, x_hat)
    return rep


# -- orchestration -----------------------------------------------------------

@dataclass
class RunOutput:
    report: MetricsReport
    result: object
    pair: object
    dataset: object


def run_single(task, n, plan, hidden=(64, 64, 64, 64), activation="tanh",
               batchnorm=True, dropout=False, dropout_p=0.1, ranges=None,
               decouple=None):
    """Data -> pair -> train -> report, with the seed fan-out that keeps
    runs reproducible yet decorrelated: a run seed s draws data from 4s,
    initializes the models from 4s+1 / 4s+2 and batches from 4s+3."""
    s = plan.seed
    if decouple is None:
        decouple = plan.strategy == "jcm"
    ds = build_dataset(task, n, seed=4 * s, ranges=ranges, decouple=decouple)
    pair = build_pair(ds.dim_x, ds.dim_y, phi_seed=4 * s + 1, psi_seed=4 * s + 2,
                      hidden=tuple(hidden), activation=activation,
                      batchnorm=batchnorm, dropout=dropout, dropout_p=dropout_p)
    result = train_run(pair, ds, plan)
    report = evaluate_pair(pair, ds, plan.strategy, result, seed=s)
    return RunOutput(report, result, pair, ds)


def run_experiment(task, n, plan, seeds, **model_kw):
    """One strategy across seeds; returns (reports, aggregate)."""
    reports = []
    for s in seeds:
        reports.append(run_single(task, n, replace(plan, seed=int(s)),
                                  **model_kw).report)
    return reports, aggregate_reports(reports)


def aggregate_reports(reports):
    """Seed-level summary: medians over converged runs plus the spread."""
    ok = [r for r in reports if r.status == "ok"]
    agg = {
        "n_runs": len(reports),
        "n_converged": len(ok),
        "convergence_rate": len(ok) / len(reports) if reports else None,
    }
    for field in ("forward_error", "backward_error", "backward_direct",
                  "backward_solution"):
        vals = [getattr(r, field) for r in ok]
        vals = [v for v in vals if v is not None]
        if vals:
            agg[field] = {"median": float(np.median(vals)),
                          "min": float(np.min(vals)),
                          "max": float(np.max(vals))}
        else:
            agg[field] = None
    return agg


# -- emission ----------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def reports_to_csv(path, reports):
    with open(path, "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for r in reports:
            row = r.row()
            fh.write(",".join(_cell(row[c]) for c in REPORT_COLUMNS) + "\n")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_digest(mapping):
    """Stable fingerprint of a config mapping (tuples and lists collide on
    purpose: both serialize as JSON arrays)."""
    text = json.dumps(mapping, sort_keys=True, separators=(",", ":"),
                      default=list)
    return hashlib.sha256(text.encode()).hexdigest()
