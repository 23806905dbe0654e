"""Scenario registry and the deterministic Monte Carlo replication runner.

Every replication draws its data and bootstrap streams from seeds
derived from ``(master, scenario, n, rep, group)``, so the result of a
run does not depend on how replications are split across workers.
"""

from __future__ import annotations

import csv
import logging
import math
import multiprocessing as mp
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bootstrap import BootstrapConfig
from .distributions import MvnParams, RngSeed, lognormal_underlying, sample_mvn
from .equivtests import STUDY_METHODS, Method, evaluate_methods, parse_method, true_margin_sq
from .errors import IncompleteGridError, UnknownScenarioError

log = logging.getLogger(__name__)

SIZES = (12, 24, 36, 48, 96, 120)
DEFAULT_MASTER_SEED = 20240229
NORMAL, LOGNORMAL = "Normal", "LogNormal"

# Hashing constants for derive_seed.  Changing them changes every stream.
SCENARIO_CODES = {f"S{i}": i for i in range(1, 9)}
GROUP_CODES = {"Test": 1, "Reference": 2, "Bootstrap": 3}

_GROUPS = {
    1: dict(
        mu1=(20.0, 70.0, 88.0),
        d=(10.0, 10.0, 10.0),
        e=(8.0, 8.0, 8.0),
        sigma=((120, 39, -9), (39, 146, 111), (-9, 111, 113)),
    ),
    2: dict(
        mu1=(31.0, 61.0, 83.0, 94.0),
        d=(10.0, 10.0, 10.0, 10.0),
        e=(8.0, 8.0, 8.0, 8.0),
        sigma=((32, 52, 38, 26), (52, 87, 66, 44), (38, 66, 65, 35), (26, 44, 35, 30)),
    ),
}

# id -> (group, shift key, family)
_SCENARIOS = {
    "S1": (1, "d", NORMAL),
    "S2": (2, "d", NORMAL),
    "S3": (1, "e", NORMAL),
    "S4": (2, "e", NORMAL),
    "S5": (1, "d", LOGNORMAL),
    "S6": (2, "d", LOGNORMAL),
    "S7": (1, "e", LOGNORMAL),
    "S8": (2, "e", LOGNORMAL),
}
SIZE_SCENARIOS = ("S1", "S2", "S5", "S6")
POWER_SCENARIOS = ("S3", "S4", "S7", "S8")


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    mu1: np.ndarray
    shift: np.ndarray
    sigma: np.ndarray
    family: str
    sizes: tuple
    d_margin: np.ndarray

    @property
    def p(self) -> int:
        return self.mu1.size

    @property
    def is_size_study(self) -> bool:
        return bool(np.array_equal(self.shift, self.d_margin))

    @property
    def true_margin(self) -> float:
        return true_margin_sq(self.sigma, self.d_margin)

    def params(self):
        """``(test, reference)`` parameters of the sampled (normal) layer."""
        test = MvnParams(self.mu1 + self.shift, self.sigma)
        ref = MvnParams(self.mu1, self.sigma)
        if self.family == LOGNORMAL:
            return lognormal_underlying(test), lognormal_underlying(ref)
        return test, ref


def build_scenario(scenario_id: str, sizes: Sequence[int] = SIZES) -> ScenarioSpec:
    try:
        group, shift_key, family = _SCENARIOS[str(scenario_id).upper()]
    except KeyError:
        raise UnknownScenarioError(f"unknown scenario {scenario_id!r}; expected S1..S8") from None
    g = _GROUPS[group]
    return ScenarioSpec(
        id=str(scenario_id).upper(),
        mu1=np.array(g["mu1"], dtype=float),
        shift=np.array(g[shift_key], dtype=float),
        sigma=np.array(g["sigma"], dtype=float),
        family=family,
        sizes=tuple(int(n) for n in sizes),
        d_margin=np.array(g["d"], dtype=float),
    )


def derive_seed(master, scenario: str, n: int, rep: int, group: str) -> RngSeed:
    """Seed for one stream of one replication.

    Injective by construction: the labels are appended verbatim as a
    numpy ``SeedSequence`` spawn key.
    """
    if not isinstance(master, RngSeed):
        master = RngSeed(int(master))
    return master.child(SCENARIO_CODES[scenario], int(n), int(rep), GROUP_CODES[group])


@dataclass(frozen=True)
class SimResult:
    scenario: str
    method: str
    n: int
    replications: int
    rejections: int
    failures: int = 0

    @property
    def rate(self) -> float:
        return self.rejections / self.replications

    @property
    def mc_se(self) -> float:
        r = self.rate
        return math.sqrt(r * (1.0 - r) / self.replications)


@dataclass
class _Job:
    spec: ScenarioSpec
    methods: tuple
    n: int
    start: int
    stop: int
    bootstrap: BootstrapConfig
    master: RngSeed
    backend: str | None = None


def replicate(spec: ScenarioSpec, methods, n: int, rep: int, bootstrap: BootstrapConfig,
              master, _params=None) -> dict:
    """Run all methods on replication `rep` at sample size `n`; returns ``{method: TestOutcome}``."""
    test_p, ref_p = _params or spec.params()
    xt = sample_mvn(test_p, n, derive_seed(master, spec.id, n, rep, "Test"))
    xr = sample_mvn(ref_p, n, derive_seed(master, spec.id, n, rep, "Reference"))
    if spec.family == LOGNORMAL:
        xt, xr = np.exp(xt), np.exp(xr)
    boot = bootstrap.with_seed(derive_seed(master, spec.id, n, rep, "Bootstrap"))
    return evaluate_methods(
        xt, xr, methods, spec.d_margin, bootstrap.alpha, boot,
        true_margin=spec.true_margin, fixed_margin_sq=spec.true_margin,
    )


def _run_job(job: _Job):
    if job.backend is not None:
        from ._kernels import set_backend

        set_backend(job.backend)
    params = job.spec.params()
    rej = np.zeros(len(job.methods), dtype=np.int64)
    fail = np.zeros(len(job.methods), dtype=np.int64)
    for rep in range(job.start, job.stop):
        out = replicate(job.spec, job.methods, job.n, rep, job.bootstrap, job.master, params)
        for k, m in enumerate(job.methods):
            o = out[m]
            rej[k] += o.reject
            fail[k] += o.failed
    return job.n, rej, fail


def default_workers() -> int:
    env = os.environ.get("EQUIVMD_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _worker_init():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def run_scenario(spec: ScenarioSpec, methods: Iterable = STUDY_METHODS, reps: int = 10_000,
                 bootstrap: BootstrapConfig | None = None, seed=DEFAULT_MASTER_SEED,
                 workers: int = 1, chunk: int = 50, progress: bool = False) -> list[SimResult]:
    """Monte Carlo rejection rates for each (method, n) of a scenario.

    All methods see the same data in each replication.  The output is a
    pure function of the arguments other than `workers`, `chunk` and
    `progress`.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    bootstrap = bootstrap or BootstrapConfig()
    methods = tuple(parse_method(m) for m in methods)
    master = seed if isinstance(seed, RngSeed) else RngSeed(int(seed))
    from ._kernels import get_backend

    backend = get_backend().name
    jobs = [
        _Job(spec, methods, n, s, min(s + chunk, reps), bootstrap, master, backend)
        for n in spec.sizes
        for s in range(0, reps, chunk)
    ]
    rej = defaultdict(lambda: np.zeros(len(methods), dtype=np.int64))
    fail = defaultdict(lambda: np.zeros(len(methods), dtype=np.int64))

    def collect(results):
        for done, (n, r, f) in enumerate(results, 1):
            rej[n] += r
            fail[n] += f
            if progress and done % max(1, len(jobs) // 20) == 0:
                log.info("%s: %d/%d chunks", spec.id, done, len(jobs))

    if workers <= 1:
        collect(map(_run_job, jobs))
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init) as pool:
            collect(pool.imap_unordered(_run_job, jobs))
    return [
        SimResult(spec.id, m.value, n, reps, int(rej[n][k]), int(fail[n][k]))
        for k, m in enumerate(methods)
        for n in spec.sizes
    ]


RESULT_FIELDS = ("scenario", "method", "n", "reps", "rejections", "rate", "mc_se", "failures")


def write_results(results: Iterable[SimResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in results:
            w.writerow([r.scenario, r.method, r.n, r.replications, r.rejections,
                        f"{r.rate:.6f}", f"{r.mc_se:.6f}", r.failures])


def read_results(path) -> list[SimResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                out.append(SimResult(row["scenario"], row["method"], int(row["n"]),
                                     int(row["reps"]), int(row["rejections"]),
                                     int(row["failures"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row {row}") from exc
    return out


@dataclass
class MadSummary:
    """Mean absolute deviation (percentage points) from the nominal rate."""

    scenarios: list
    rows: list = field(default_factory=list)  # (method, {scenario: mad}, average)

    def get(self, method, scenario=None) -> float:
        for m, cols, avg in self.rows:
            if m == method:
                return avg if scenario is None else cols[scenario]
        raise KeyError(method)

    def methods(self) -> list:
        return [m for m, _, _ in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", *self.scenarios, "average"])
            for m, cols, avg in self.rows:
                w.writerow([m, *(f"{cols[s]:.2f}" for s in self.scenarios), f"{avg:.2f}"])

    def format(self) -> str:
        width = max([len("method")] + [len(m) for m in self.methods()])
        head = f"{'method':<{width}}" + "".join(f"{s:>8}" for s in self.scenarios) + f"{'Average':>9}"
        lines = [head, "-" * len(head)]
        for m, cols, avg in self.rows:
            lines.append(f"{m:<{width}}" + "".join(f"{cols[s]:8.2f}" for s in self.scenarios) + f"{avg:9.2f}")
        return "\n".join(lines)


def summarize_mad(results: Iterable[SimResult], nominal: float = 0.05) -> MadSummary:
    """Per (scenario, method) mean over sample sizes of ``|rate - nominal|`` in pp.

    Rows are sorted ascending by the cross-scenario average.
    """
    grid = defaultdict(dict)
    for r in results:
        grid[(r.scenario, r.method)][r.n] = r.rate
    if not grid:
        raise IncompleteGridError("no results to summarize")
    scenarios = sorted({s for s, _ in grid}, key=lambda s: (len(s), s))
    methods = sorted({m for _, m in grid})
    for s in scenarios:
        sizes = set().union(*(grid[k].keys() for k in grid if k[0] == s))
        for m in methods:
            have = grid.get((s, m))
            if have is None:
                raise IncompleteGridError(f"method {m} has no results for scenario {s}")
            if set(have) != sizes:
                raise IncompleteGridError(f"{m} in {s} covers n={sorted(have)}, expected {sorted(sizes)}")
    rows = []
    for m in methods:
        cols = {s: 100.0 * float(np.mean([abs(v - nominal) for v in grid[(s, m)].values()]))
                for s in scenarios}
        rows.append((m, cols, float(np.mean(list(cols.values())))))
    rows.sort(key=lambda row: (row[2], row[0]))
    return MadSummary(scenarios, rows)


def parse_methods(spec: str | Iterable) -> tuple:
    if isinstance(spec, str):
        if spec.strip().lower() == "all":
            return STUDY_METHODS
        return tuple(parse_method(s) for s in spec.split(",") if s.strip())
    return tuple(parse_method(s) for s in spec)


__all__ = [
    "Method",
    "ScenarioSpec",
    "SimResult",
    "MadSummary",
    "build_scenario",
    "derive_seed",
    "run_scenario",
    "summarize_mad",
    "write_results",
    "read_results",
]
