"""Seeded Monte Carlo harness: experiment matrices, sweeps, aggregation and CSV output.

Every cell (environment seed, trial seed, strategy, budget, S) is an
independent episode. Its measurement noise comes from a generator seeded
with ``(env, trial, crc32(strategy))``, and its start arm from
``(env, trial)`` alone, so strategies are compared on matched starts and
adding a strategy never perturbs existing cells.
"""

from __future__ import annotations

import csv
import logging
import math
import re
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .baselines import BASELINE_KINDS, BaselineConfig, make_baseline
from .config import RunConfig, parse_inference
from .field import evaluate, generate_random_field, global_optimum
from .gp import ExactGP, SparseGP, TrainingSet, select_inducing_points
from .planner import DEFAULT_BETAS, MFGPUCB, ArmCache, PlannerConfig, run_episode
from .sensing import ArmGrid, _raw_pixel_centers, build_arm_grid

log = logging.getLogger(__name__)

CSV_COLUMNS = ("env_seed", "trial_seed", "strategy", "variance_mode", "window", "beta_form", "budget", "S",
               "images", "point_metric", "arm_metric", "gp_time_ms")
START_TAG = 0x5EED

ABLATION_STRATEGIES = ("CV--", "CPV--", "CV++", "CPV++", "DCV--", "DCPV--", "DCV++", "DCPV++")
COMPARISON_STRATEGIES = ("DCPV++", "boustrophedon@high", "boustrophedon@mid", "boustrophedon@low",
                         "gradient_ascent@high", "gradient_ascent@mid", "gradient_ascent@low",
                         "variance_reduction", "mutual_information", "block_ucl")

_PLANNER_RE = re.compile(r"^(D?)(CV|CPV)(\+\+|--)(?:@(\w+))?$")
_BASELINE_RE = re.compile(r"^([a-z_]+)(?:@(\w+))?$")


@dataclass(frozen=True)
class StrategySpec:
    name: str
    kind: str  # "mfgpucb" or a baseline kind
    variance_mode: str = ""
    window: int | None = None
    beta_form: str = ""
    level: int | None = None


def _level_index(token: str | None, num_levels: int, name: str) -> int | None:
    if token is None:
        return None
    named = {"low": 0, "high": num_levels - 1}
    if num_levels == 3:
        named["mid"] = 1
    if token in named:
        return named[token]
    if token.isdigit() and int(token) < num_levels:
        return int(token)
    raise ValueError(f"strategy {name!r}: unknown level {token!r}")


def resolve_strategy(name: str, num_levels: int = 3) -> StrategySpec:
    """Parse a strategy name.

    Planner variants follow ``[D]{CV|CPV}{++|--}[@level]`` (``D`` = dynamic
    window of radius 1, ``++``/``--`` = increasing/decreasing schedule).
    Baselines are ``boustrophedon@level``, ``gradient_ascent@level``,
    ``variance_reduction``, ``mutual_information`` and ``block_ucl``.
    """
    m = _PLANNER_RE.match(name)
    if m:
        d, mode, form, lvl = m.groups()
        return StrategySpec(name, "mfgpucb", "cpv" if mode == "CPV" else "current", 1 if d else None,
                            "increasing" if form == "++" else "decreasing", _level_index(lvl, num_levels, name))
    m = _BASELINE_RE.match(name)
    if not m or m.group(1) not in BASELINE_KINDS:
        raise ValueError(f"unknown strategy {name!r}")
    kind, lvl = m.groups()
    level = _level_index(lvl, num_levels, name)
    if kind in ("boustrophedon", "gradient_ascent") and level is None:
        raise ValueError(f"strategy {name!r} needs an altitude, e.g. {kind}@low")
    if kind not in ("boustrophedon", "gradient_ascent") and level is not None:
        raise ValueError(f"strategy {name!r} does not take an altitude")
    mode = "cpv" if kind in ("variance_reduction", "mutual_information", "block_ucl") else ""
    form = "increasing" if kind == "block_ucl" else ""
    return StrategySpec(name, kind, mode, None, form, level)


def build_strategy(spec: StrategySpec, base: PlannerConfig):
    """Strategy object plus the planner config the episode runs under."""
    if spec.kind == "mfgpucb":
        cfg = replace(base, variance_mode=spec.variance_mode, window=spec.window,
                      beta=DEFAULT_BETAS[(spec.variance_mode, spec.beta_form)], fixed_level=spec.level)
        return MFGPUCB(cfg), cfg
    return make_baseline(BaselineConfig(spec.kind, spec.level)), base


def cell_rng(env_seed: int, trial_seed: int, strategy: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([env_seed, trial_seed, zlib.crc32(strategy.encode())]))


def start_arm(grid: ArmGrid, env_seed: int, trial_seed: int, rule: str = "low"):
    """Matched start arm for a (environment, trial) pair."""
    if rule.isdigit():
        return grid.arms[int(rule)]
    pool = {"low": grid.arms_at(0), "mid": grid.arms_at(len(grid.levels) // 2),
            "high": grid.arms_at(len(grid.levels) - 1), "any": list(grid.arms)}[rule]
    rng = np.random.default_rng(np.random.SeedSequence([env_seed, trial_seed, START_TAG]))
    return pool[int(rng.integers(len(pool)))]


# -- experiment matrix -----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentMatrix:
    env_seeds: tuple[int, ...]
    trial_seeds: tuple[int, ...]
    strategies: tuple[str, ...]
    budgets: tuple[float, ...] = (100.0,)
    sparsity: tuple[int | str, ...] = ("exact",)
    out: str | None = None

    def __post_init__(self):
        if not (self.env_seeds and self.trial_seeds and self.strategies and self.budgets and self.sparsity):
            raise ValueError("every matrix axis needs at least one entry")

    @classmethod
    def from_config(cls, cfg: RunConfig, strategies=None, budgets=None, sparsity=None):
        b = cfg.bench
        return cls(tuple(range(b.env_seed_base, b.env_seed_base + b.env_count)),
                   tuple(range(b.trial_seed_base, b.trial_seed_base + b.trials)),
                   tuple(strategies or b.strategies), tuple(budgets or b.budgets),
                   tuple(parse_inference(s) for s in (sparsity or b.sparsity)), b.out)

    def cells(self):
        for e in self.env_seeds:
            for t in self.trial_seeds:
                for s in self.strategies:
                    for B in self.budgets:
                        for S in self.sparsity:
                            yield e, t, s, B, S


class Workspace:
    """Per-process cache of the grid, prior blocks and generated fields for one run config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.grid = build_arm_grid(cfg.field.extent, cfg.sensing.levels(), cfg.sensing.pixels)
        self.hyper = cfg.hyperparams()
        self.cache = ArmCache(self.grid, self.hyper)
        self._fields: dict[int, tuple] = {}

    def field(self, env_seed: int):
        out = self._fields.get(env_seed)
        if out is None:
            f = generate_random_field(replace(self.cfg.field, seed=env_seed))
            out = self._fields[env_seed] = (f, global_optimum(f))
        return out

    def run_cell(self, env_seed, trial_seed, strategy, budget, S, step_hook=None):
        spec = resolve_strategy(strategy, len(self.grid.levels))
        row = dict(env_seed=env_seed, trial_seed=trial_seed, strategy=strategy,
                   variance_mode=spec.variance_mode, window="off" if spec.window is None else spec.window,
                   beta_form=spec.beta_form, budget=budget, S=S)
        try:
            field, opt = self.field(env_seed)
            base = self.cfg.planner_config(budget=float(budget), inference=S)
            strat, pcfg = build_strategy(spec, base)
            start = start_arm(self.grid, env_seed, trial_seed, self.cfg.planner.start)
            trace = run_episode(field, self.grid, self.hyper, pcfg, cell_rng(env_seed, trial_seed, strategy),
                                strategy=strat, start_arm=start, optimum=opt, cache=self.cache,
                                step_hook=step_hook)
        except Exception as exc:  # a failed cell is recorded, the matrix carries on
            log.warning("cell %s failed: %s", (env_seed, trial_seed, strategy, budget, S), exc)
            row.update(images=0, point_metric=math.nan, arm_metric=math.nan, gp_time_ms=math.nan,
                       error=f"{type(exc).__name__}: {exc}")
            return row
        gp_ms = 1e3 * float(np.mean(trace.gp_times)) if trace.gp_times else 0.0
        row.update(images=trace.images, point_metric=trace.point_metric, arm_metric=trace.arm_metric,
                   gp_time_ms=gp_ms, error="")
        return row


_worker: Workspace | None = None


def _init_worker(cfg: RunConfig):
    global _worker
    _worker = Workspace(cfg)


def _run_in_worker(cell):
    return _worker.run_cell(*cell)


def run_matrix(cfg: RunConfig, matrix: ExperimentMatrix, workers: int = 1, progress=None) -> list[dict]:
    """Run every cell and return rows in matrix order (independent of ``workers``)."""
    cells = list(matrix.cells())
    if workers <= 1:
        ws = Workspace(cfg)
        rows = []
        for i, c in enumerate(cells):
            rows.append(ws.run_cell(*c))
            if progress:
                progress(i + 1, len(cells))
        return rows
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg,)) as pool:
        chunk = max(1, len(cells) // (8 * workers))
        return list(pool.map(_run_in_worker, cells, chunksize=chunk))


# -- aggregation -----------------------------------------------------------------

@dataclass(frozen=True)
class AggregateResult:
    strategy: str
    budget: float
    S: int | str
    n: int
    failures: int
    point_mean: float
    point_sigma: float
    arm_mean: float
    arm_sigma: float
    images_mean: float
    gp_time_ms_mean: float


def _mean_sigma(x):
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return math.nan, math.nan
    return float(np.mean(x)), float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def aggregate(rows) -> list[AggregateResult]:
    """Mean and sample (n - 1) standard deviation per (strategy, budget, S), in first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["strategy"], r["budget"], r["S"]), []).append(r)
    out = []
    for (s, B, S), rs in groups.items():
        ok = [r for r in rs if not r.get("error")]
        pm, ps = _mean_sigma([r["point_metric"] for r in ok])
        am, asd = _mean_sigma([r["arm_metric"] for r in ok])
        out.append(AggregateResult(s, B, S, len(ok), len(rs) - len(ok), pm, ps, am, asd,
                                   float(np.mean([r["images"] for r in ok])) if ok else math.nan,
                                   float(np.mean([r["gp_time_ms"] for r in ok])) if ok else math.nan))
    return out


def lookup(results, strategy, budget=None, S=None) -> AggregateResult:
    for r in results:
        if r.strategy == strategy and (budget is None or r.budget == budget) and (S is None or r.S == S):
            return r
    raise KeyError(strategy)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def emit_csv(rows, path):
    """Write per-cell rows with the fixed column set."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_aggregate_csv(results, path):
    cols = [f.name for f in AggregateResult.__dataclass_fields__.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in results:
            w.writerow([_fmt(getattr(r, c)) for c in cols])


def format_table(results) -> str:
    lines = [f"{'strategy':24s} {'budget':>7s} {'S':>6s} {'n':>4s} {'point':>15s} {'arm':>15s} {'images':>7s}"]
    for r in results:
        lines.append(f"{r.strategy:24s} {r.budget:7.1f} {str(r.S):>6s} {r.n:4d} "
                     f"{r.point_mean:7.2f}±{r.point_sigma:6.2f} {r.arm_mean:7.2f}±{r.arm_sigma:6.2f} "
                     f"{r.images_mean:7.1f}")
    return "\n".join(lines)


# -- sweeps ----------------------------------------------------------------------

def budget_sweep(cfg: RunConfig, budgets, strategy: str = "DCPV++", workers: int = 1, env_seeds=None,
                 trial_seeds=None):
    budgets = tuple(float(b) for b in budgets)
    if list(budgets) != sorted(budgets):
        raise ValueError("budgets must be sorted")
    m = ExperimentMatrix.from_config(cfg, strategies=(strategy,), budgets=budgets, sparsity=(cfg.gp.inference,))
    if env_seeds is not None or trial_seeds is not None:
        m = replace(m, env_seeds=tuple(env_seeds or m.env_seeds), trial_seeds=tuple(trial_seeds or m.trial_seeds))
    rows = run_matrix(cfg, m, workers)
    return rows, aggregate(rows)


def sparsity_sweep(cfg: RunConfig, sizes, strategy: str = "DCPV++", workers: int = 1, env_seeds=None,
                   trial_seeds=None):
    """Final metrics for exact inference and each inducing-set size, on matched cells."""
    sizes = tuple(parse_inference(s) for s in sizes)
    if "exact" not in sizes:
        sizes = ("exact",) + sizes
    m = ExperimentMatrix.from_config(cfg, strategies=(strategy,), budgets=(cfg.planner.budget,), sparsity=sizes)
    if env_seeds is not None or trial_seeds is not None:
        m = replace(m, env_seeds=tuple(env_seeds or m.env_seeds), trial_seeds=tuple(trial_seeds or m.trial_seeds))
    rows = run_matrix(cfg, m, workers)
    return rows, aggregate(rows)


@dataclass(frozen=True)
class TimingRow:
    k: int
    n: int
    method: str
    S: int | str
    seconds: float


def gp_update_times(cfg: RunConfig, sizes=(200,), steps: int = 15, pixels=(19, 34), seed: int = 0,
                    exact_steps: int | None = None, repeats: int = 1) -> list[TimingRow]:
    """Wall time of one GP update after each of ``steps`` images of ``pixels`` measurements.

    An update is a from-scratch posterior (factorisation plus mean and
    variance at every test point of the benchmark grid), which is what the
    exact model costs per sensing step. Images are taken at a seeded random
    sequence of arms. Exact timings stop after ``exact_steps`` images; the
    best of ``repeats`` runs is kept.
    """
    ws = Workspace(cfg)
    field, _ = ws.field(cfg.field.seed)
    grid, hyper = ws.grid, ws.hyper
    rng = np.random.default_rng(seed)
    inducing = {S: select_inducing_points((grid.origin, grid.extent), S, "lattice") for S in sizes}
    exact_steps = steps if exact_steps is None else exact_steps
    X, Y, q = [], [], []
    rows = []
    for k in range(1, steps + 1):
        arm = grid.arms[int(rng.integers(len(grid.arms)))]
        side = grid.levels[arm.level].footprint_side
        pts = _raw_pixel_centers(arm.xy, side, pixels, grid.origin, grid.extent)
        var = grid.noise_of(arm)
        X.append(pts)
        Y.append(np.asarray(evaluate(field, pts)) + rng.normal(0.0, math.sqrt(var), len(pts)))
        q.append(np.full(len(pts), var))
        train = TrainingSet(np.vstack(X), np.concatenate(Y), np.concatenate(q))
        n = len(train)
        if k <= exact_steps:
            rows.append(TimingRow(k, n, "exact", "exact", _best_time(
                lambda: _update(ExactGP(train, hyper, grid.test_points)), repeats)))
        for S in sizes:
            rows.append(TimingRow(k, n, "sparse", S, _best_time(
                lambda: _update(SparseGP(train, hyper, grid.test_points, inducing[S])), repeats)))
    return rows


def _update(model):
    model.mean()
    model.variance()


def _best_time(fn, repeats):
    best = math.inf
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def emit_timing_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "n", "method", "S", "seconds"])
        for r in rows:
            w.writerow([r.k, r.n, r.method, r.S, repr(r.seconds)])
