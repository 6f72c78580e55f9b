"""Simulated functional triples (Z, X, Y) and replicated test sweeps.

Every model shares ``Z = e1`` and ``X = 2 Z + e2``; ``Y`` differs:

====== ===================================
model  Y(t)
====== ===================================
1      Z + e3                (conditional independence holds)
2      Z + X^2 + e3
3      Z + X + e3
4      Z + 4 log(|X| + 1) + e3
5      Z X + e3
====== ===================================

The errors are random combinations of Brownian-motion kernel sections,
``e(t) = sum_k xi_k min(t, t_k)``, with ``xi_k ~ N(0, 1)`` and ``t_k ~ U(0, 1)``.
"""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from funcci.ccco import run_test
from funcci.config import PipelineConfig
from funcci.dataset import TripleDataset
from funcci.errors import FunCIError, InvalidArgumentError
from funcci.smoothing import FunctionalSample

log = logging.getLogger(__name__)

MODELS = (1, 2, 3, 4, 5)
SCHEDULES = ("balanced", "unbalanced")
DEFAULT_R = 50
POOL_FACTOR = 10

# Stream ids within one replication.
_E1, _E2, _E3, _TIMES = 0, 1, 2, 3

TABLE_COLUMNS = (
    "rep_index",
    "model",
    "n",
    "schedule",
    "m",
    "statistic",
    "p_value",
    "delta_star",
    "epsilon_star",
    "status",
)


@dataclass(frozen=True)
class ErrorProcess:
    """``e(t) = sum_k xi[k] * min(t, anchors[k])``."""

    xi: np.ndarray
    anchors: np.ndarray

    @property
    def r(self) -> int:
        return self.xi.size

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.minimum.outer(t, self.anchors) @ self.xi


def gen_error(r: int, rng: np.random.Generator) -> ErrorProcess:
    if r < 1:
        raise InvalidArgumentError(f"r must be at least 1, got {r}")
    return ErrorProcess(rng.standard_normal(r), rng.uniform(0.0, 1.0, r))


def _eval_errors(xi, anchors, times):
    """Row i: ``sum_k xi[i, k] min(times[i], anchors[i, k])`` for a batch of processes."""
    # times: (n, m); anchors, xi: (n, r)
    return np.einsum("imk,ik->im", np.minimum(times[:, :, None], anchors[:, None, :]), xi)


@dataclass(frozen=True)
class SimulationSpec:
    """One simulation design.

    ``m`` is the number of intervals of the balanced grid ``j/m``, or the number
    of points drawn (plus t = 0) from ``{j / (POOL_FACTOR m)}`` when unbalanced.
    """

    model_id: int
    n: int
    schedule: str = "balanced"
    m: int = 50
    reps: int = 100
    seed: int = 0
    r: int = DEFAULT_R

    def __post_init__(self):
        if self.model_id not in MODELS:
            raise InvalidArgumentError(f"model_id must be one of {MODELS}, got {self.model_id}")
        if self.schedule not in SCHEDULES:
            raise InvalidArgumentError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.n < 3:
            raise InvalidArgumentError("n must be at least 3")
        if self.m < 2:
            raise InvalidArgumentError("m must be at least 2")
        if self.reps < 0:
            raise InvalidArgumentError("reps must be nonnegative")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be nonnegative")
        if self.r < 1:
            raise InvalidArgumentError("r must be at least 1")


def stream(seed: int, rep_index: int, channel: int) -> np.random.Generator:
    """Independent generator for one (seed, replication, channel) triple."""
    return np.random.default_rng(np.random.SeedSequence([seed, rep_index, channel]))


def schedule_times(spec: SimulationSpec, rep_index: int) -> np.ndarray:
    """Observation times, shape (n, m + 1); every row is sorted and starts at 0."""
    if spec.schedule == "balanced":
        grid = np.arange(spec.m + 1) / spec.m
        return np.tile(grid, (spec.n, 1))
    rng = stream(spec.seed, rep_index, _TIMES)
    pool = spec.m * POOL_FACTOR
    rows = []
    for _ in range(spec.n):
        picks = np.sort(rng.choice(np.arange(1, pool + 1), size=spec.m, replace=False))
        rows.append(np.concatenate([[0.0], picks / pool]))
    return np.vstack(rows)


@dataclass(frozen=True)
class SimulatedComponents:
    times: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray


def gen_components(spec: SimulationSpec, rep_index: int) -> SimulatedComponents:
    """Error processes of one replication, evaluated on its schedule (arrays of shape (n, m + 1))."""
    if not 0 <= rep_index < spec.reps:
        raise InvalidArgumentError(f"rep_index {rep_index} outside 0..{spec.reps - 1}")
    times = schedule_times(spec, rep_index)
    errs = []
    for ch in (_E1, _E2, _E3):
        rng = stream(spec.seed, rep_index, ch)
        xi = rng.standard_normal((spec.n, spec.r))
        anchors = rng.uniform(0.0, 1.0, (spec.n, spec.r))
        errs.append(_eval_errors(xi, anchors, times))
    return SimulatedComponents(times, *errs)


def model_response(model_id: int, z, x, e3):
    if model_id == 1:
        return z + e3
    if model_id == 2:
        return z + x**2 + e3
    if model_id == 3:
        return z + x + e3
    if model_id == 4:
        return z + 4.0 * np.log(np.abs(x) + 1.0) + e3
    if model_id == 5:
        return z * x + e3
    raise InvalidArgumentError(f"unknown model {model_id}")


def gen_dataset(spec: SimulationSpec, rep_index: int) -> TripleDataset:
    c = gen_components(spec, rep_index)
    z = c.e1
    x = 2.0 * z + c.e2
    y = model_response(spec.model_id, z, x, c.e3)
    ids = [f"s{i:04d}" for i in range(spec.n)]

    def samples(vals):
        return tuple(FunctionalSample(sid, c.times[i], vals[i]) for i, sid in enumerate(ids))

    return TripleDataset(samples(x), samples(y), samples(z))


def _run_one(args):
    spec, rep_index, config = args
    row = {
        "rep_index": rep_index,
        "model": spec.model_id,
        "n": spec.n,
        "schedule": spec.schedule,
        "m": spec.m,
        "statistic": None,
        "p_value": None,
        "delta_star": None,
        "epsilon_star": None,
        "status": "ok",
    }
    try:
        data = gen_dataset(spec, rep_index)
        res = run_test(data, config)
    except FunCIError as exc:
        row["status"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(
        statistic=res.statistic,
        p_value=res.p_value,
        delta_star=res.tuning.delta_star,
        epsilon_star=res.tuning.epsilon_star,
    )
    return row


def run_replications(spec: SimulationSpec, config: PipelineConfig, jobs: int = 1) -> List[Dict]:
    """One table row per replication, ordered by ``rep_index``.

    A replication whose pipeline raises is recorded with its error in
    ``status`` and NaN-free None values; the sweep continues.
    """
    tasks = [(spec, k, config) for k in range(spec.reps)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, tasks))
    else:
        rows = [_run_one(t) for t in tasks]
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d replications failed", failed, len(rows))
    return rows


def run_experiment(spec: SimulationSpec, config: PipelineConfig, jobs: int = 1) -> List[Optional[float]]:
    """p-values of every replication (None where the pipeline failed)."""
    return [r["p_value"] for r in run_replications(spec, config, jobs)]


def rejection_rate(pvalues: Sequence[Optional[float]], level: float = 0.05) -> float:
    """Share of successful replications with ``p < level`` (NaN if none succeeded)."""
    ok = [p for p in pvalues if p is not None]
    if not ok:
        return float("nan")
    return float(np.mean(np.asarray(ok) < level))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(rows: Sequence[Dict], out) -> None:
    """Write the replication table as CSV to a path or an open text stream."""
    if hasattr(out, "write"):
        _write_rows(rows, out)
    else:
        with open(out, "w", newline="") as fh:
            _write_rows(rows, fh)


def _write_rows(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in TABLE_COLUMNS])
