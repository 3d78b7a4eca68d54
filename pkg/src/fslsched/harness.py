"""Experiment orchestration: peak-rate tuning, horizon sweeps and rate fits.

Configs are INI files with sections ``[problem]``, ``[schedules]``,
``[grid]``, ``[engine]`` and ``[output]``. Every key can be overridden from
the command line with a flag of the same name.
"""

import configparser
import csv
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import DivergenceError, ValidationError, check_positive, check_positive_int
from .functional import evaluate_spec_grid, evaluate_trace
from .problem import ProblemSpec, truncation_dim
from .schedules import ScheduleSpec, materialize, parse_family, tail_exponent
from .sgd import run_exact_grid, run_monte_carlo

log = logging.getLogger(__name__)

__all__ = [
    "ENGINES",
    "CSV_COLUMNS",
    "CONFIG_SCHEMA",
    "ExperimentConfig",
    "load_config",
    "eta0_grid",
    "log_int_grid",
    "TuneResult",
    "tune_peak_lr",
    "SweepRow",
    "sweep",
    "read_table",
    "RateFit",
    "LogLogRateFit",
    "fit_rate",
    "fit_table",
    "emit_plot_script",
]

ENGINES = ("exact", "monte_carlo", "fsl", "fsl-quad")
CSV_COLUMNS = ("family", "gamma", "N", "eta0_star", "T", "loss", "std_error", "engine", "seed")

# section -> key -> (type, default); "auto" defaults are resolved at load time
CONFIG_SCHEMA = {
    "problem": {
        "s": (float, None),
        "beta": (float, None),
        "sigma2": (float, 1.0),
        "d": (str, "auto"),
        "eta_stab": (str, "auto"),
        "seed": (int, 0),
    },
    "schedules": {"families": (str, "cosine")},
    "grid": {
        "N": (str, ""),
        "N_min": (float, None),
        "N_max": (float, None),
        "N_points": (int, None),
        "eta0_points": (int, 21),
        "eta0_ratio": (float, math.sqrt(2.0)),
        "eta0_max": (str, "auto"),
    },
    "engine": {"engine": (str, "exact"), "runs": (int, 500), "workers": (int, 1)},
    "output": {"output": (str, "sweep.csv")},
}


def log_int_grid(lo, hi, points):
    """``points`` distinct log-spaced integers from lo to hi inclusive."""
    points = check_positive_int("points", points)
    values = np.unique(np.round(np.geomspace(float(lo), float(hi), points)).astype(np.int64))
    return [int(v) for v in values]


def eta0_grid(eta_max, points=21, ratio=math.sqrt(2.0)):
    """Ascending geometric grid ending at ``eta_max`` with the given ratio."""
    check_positive("eta_max", eta_max)
    points = check_positive_int("points", points)
    return [float(eta_max * ratio ** (-k)) for k in range(points - 1, -1, -1)]


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    families: Tuple[str, ...]
    N_grid: Tuple[int, ...]
    eta0_grid: Tuple[float, ...]
    engine: str = "exact"
    runs: int = 500
    workers: int = 1
    output: Optional[str] = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValidationError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if list(self.N_grid) != sorted(set(self.N_grid)):
            raise ValidationError("N grid must be strictly increasing")
        if not self.eta0_grid:
            raise ValidationError("eta0 grid must be non-empty")
        if any(e <= 0 or e > self.problem.eta_stab * (1 + 1e-12) for e in self.eta0_grid):
            raise ValidationError("eta0 grid must lie in (0, eta_stab]")
        for fam in self.families:
            parse_family(fam)
        check_positive_int("runs", self.runs)
        check_positive_int("workers", self.workers)

    @property
    def seed(self) -> int:
        return self.problem.seed

    def schedule(self, family, N, eta0=1.0) -> ScheduleSpec:
        return ScheduleSpec(eta0=eta0, N=N, **parse_family(family))


def _raw_config(path=None, overrides=None):
    raw = {}
    for section, keys in CONFIG_SCHEMA.items():
        for key, (_, default) in keys.items():
            raw[key] = default
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path):
            raise ValidationError(f"cannot read config file {path!r}")
        for section in parser.sections():
            if section not in CONFIG_SCHEMA:
                raise ValidationError(f"{path}: unknown section [{section}]")
            for key, value in parser.items(section):
                if key not in CONFIG_SCHEMA[section]:
                    raise ValidationError(f"{path}: unknown key {key!r} in [{section}]")
                raw[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    typed = {}
    for section, keys in CONFIG_SCHEMA.items():
        for key, (kind, _) in keys.items():
            value = raw[key]
            if value is None or value == "":
                typed[key] = value
                continue
            try:
                typed[key] = kind(value) if kind is not str else str(value).strip()
            except (TypeError, ValueError):
                raise ValidationError(f"config key {key!r}: cannot parse {value!r}") from None
    return typed


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Build an ``ExperimentConfig`` from an INI file and/or CLI overrides.

    ``d = auto`` uses ``truncation_dim`` with peak rate 1 (the stability cap)
    and the largest N; ``eta_stab = auto`` uses ``1 / (4 trace H)``.
    """
    raw = _raw_config(path, overrides)
    if raw["s"] is None or raw["beta"] is None:
        raise ValidationError("config needs problem exponents s and beta")
    if raw["N"]:
        N_grid = [int(float(v)) for v in str(raw["N"]).replace(",", " ").split()]
    elif raw["N_min"] is not None and raw["N_max"] is not None and raw["N_points"]:
        N_grid = log_int_grid(raw["N_min"], raw["N_max"], raw["N_points"])
    else:
        N_grid = []
    N_max = max(N_grid) if N_grid else 1
    if raw["d"] in ("auto", None, ""):
        d = truncation_dim(raw["s"], raw["beta"], 1.0, N_max)
    else:
        d = int(float(raw["d"]))
    eta_stab = None if raw["eta_stab"] in ("auto", None, "") else float(raw["eta_stab"])
    problem = ProblemSpec(raw["s"], raw["beta"], sigma2=raw["sigma2"], d=d, eta_stab=eta_stab, seed=raw["seed"])
    eta_max = problem.eta_stab if raw["eta0_max"] in ("auto", None, "") else float(raw["eta0_max"])
    families = tuple(f.strip() for f in str(raw["families"]).split(",") if f.strip())
    return ExperimentConfig(
        problem=problem,
        families=families,
        N_grid=tuple(N_grid),
        eta0_grid=tuple(eta0_grid(eta_max, raw["eta0_points"], raw["eta0_ratio"])),
        engine=raw["engine"],
        runs=raw["runs"],
        workers=raw["workers"],
        output=raw["output"] or None,
    )


# -- tuning --------------------------------------------------------------------


class TuneResult(NamedTuple):
    eta0_star: float
    loss: float
    std_error: float
    T: float
    losses: np.ndarray


def _grid_losses(config, family, N):
    """Loss, standard error and intrinsic time for every eta0 on the grid."""
    grid = np.asarray(config.eta0_grid, dtype=float)
    base = config.schedule(family, N, 1.0)
    s, beta = config.problem.s, config.problem.beta
    if config.engine == "fsl-quad":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            evals = evaluate_spec_grid(base, grid, s, beta)
        return np.array([e.total for e in evals]), np.zeros(grid.size), np.array([e.T for e in evals])
    trace = materialize(base)
    T = grid * trace.T
    if config.engine == "exact":
        return run_exact_grid(config.problem, trace.etas, grid), np.zeros(grid.size), T
    if config.engine == "fsl":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            losses = [evaluate_trace(trace.scaled(e), s, beta).total for e in grid]
        return np.array(losses), np.zeros(grid.size), T
    losses, errors = [], []
    for e in grid:
        res = run_monte_carlo(config.problem, trace.scaled(e), config.runs, seed=config.seed, workers=config.workers)
        losses.append(res.final_risk)
        errors.append(res.std_error)
    return np.array(losses), np.array(errors), T


def tune_peak_lr(config: ExperimentConfig, family, N) -> TuneResult:
    """Grid-search the peak rate minimizing the final loss; ties go to the smaller eta0."""
    losses, errors, T = _grid_losses(config, family, N)
    if not np.any(np.isfinite(losses)):
        raise DivergenceError(f"every eta0 on the grid diverged for {family} at N={N}")
    i = int(np.argmin(losses))  # first minimum, and the grid is ascending
    assert np.all(losses[i] <= losses[np.isfinite(losses)])
    if config.eta0_grid and (i == 0 or i == len(config.eta0_grid) - 1):
        warnings.warn(
            f"tuned eta0 for {family} at N={N} sits on the grid endpoint {config.eta0_grid[i]:.4g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return TuneResult(float(config.eta0_grid[i]), float(losses[i]), float(errors[i]), float(T[i]), losses)


# -- sweeps ----------------------------------------------------------------------


class SweepRow(NamedTuple):
    family: str
    gamma: float
    N: int
    eta0_star: float
    T: float
    loss: float
    std_error: float
    engine: str
    seed: int

    @property
    def key(self):
        return (self.family, repr(float(self.gamma)), int(self.N), self.engine, int(self.seed))

    def as_strings(self):
        return [
            self.family,
            repr(float(self.gamma)),
            str(int(self.N)),
            repr(float(self.eta0_star)),
            repr(float(self.T)),
            repr(float(self.loss)),
            repr(float(self.std_error)),
            self.engine,
            str(int(self.seed)),
        ]

    @classmethod
    def from_strings(cls, values):
        return cls(
            values[0],
            float(values[1]),
            int(values[2]),
            float(values[3]),
            float(values[4]),
            float(values[5]),
            float(values[6]),
            values[7],
            int(values[8]),
        )


def read_table(path) -> List[SweepRow]:
    """Rows of a sweep CSV, in file order."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        if tuple(header) != CSV_COLUMNS:
            raise ValidationError(f"{path}: unexpected header {header}")
        for lineno, values in enumerate(reader, start=2):
            try:
                rows.append(SweepRow.from_strings(values))
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed row {values!r} ({exc})") from None
    return rows


def _family_label_and_gamma(family):
    kwargs = parse_family(family)
    spec = ScheduleSpec(eta0=1.0, N=1, **kwargs)
    return spec.label, tail_exponent(spec)


def _run_cell(args):
    config, family, N = args
    label, gamma = _family_label_and_gamma(family)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = tune_peak_lr(config, family, N)
    return SweepRow(label, gamma, int(N), res.eta0_star, res.T, res.loss, res.std_error, config.engine, config.seed)


def sweep(config: ExperimentConfig, output=None, resume=True) -> List[SweepRow]:
    """Tune every (family, N) cell and persist the table.

    With ``resume`` the existing CSV is read first and cells whose key
    (family, gamma, N, engine, seed) is already present are skipped. The file
    is rewritten in deterministic order (config order, then any foreign rows
    in their original order), so rerunning a finished sweep reproduces it
    byte for byte.
    """
    output = output if output is not None else config.output
    cells = [(fam, N) for fam in config.families for N in config.N_grid]
    if not cells:
        return []
    existing = []
    if resume and output and os.path.exists(output):
        existing = read_table(output)
    by_key = {row.key: row for row in existing}
    wanted = []
    for fam, N in cells:
        label, gamma = _family_label_and_gamma(fam)
        wanted.append(((label, repr(float(gamma)), int(N), config.engine, int(config.seed)), fam, N))
    todo = [(config, fam, N) for key, fam, N in wanted if key not in by_key]
    if todo:
        log.info("sweep: %d of %d cells to run", len(todo), len(wanted))
        # Monte Carlo parallelizes inside each cell instead
        if config.workers > 1 and config.engine != "monte_carlo" and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                fresh = list(pool.map(_run_cell, todo))
        else:
            fresh = [_run_cell(job) for job in todo]
        for row in fresh:
            by_key[row.key] = row
    ordered_keys = [key for key, _, _ in wanted]
    in_config = set(ordered_keys)
    rows = [by_key[key] for key in ordered_keys]
    rows += [row for row in existing if row.key not in in_config]
    if output:
        tmp = f"{output}.tmp"
        try:
            with open(tmp, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_COLUMNS)
                for row in rows:
                    writer.writerow(row.as_strings())
            os.replace(tmp, output)
        except OSError as exc:
            raise OSError(f"failed writing sweep table {output!r}: {exc}") from exc
    return rows[: len(ordered_keys)]


# -- rate fitting ------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    n_points: int
    residuals: Tuple[float, ...] = field(default=(), repr=False)


class LogLogRateFit(RegressorMixin, BaseEstimator):
    """Least-squares line through ``(log N, log y)``.

    ``fit(N, y)`` accepts a 1-D array or a single-column matrix of horizons.
    ``predict`` maps horizons back to the fitted power law.
    """

    def __init__(self, upper_fraction=1.0, min_points=2):
        self.upper_fraction = upper_fraction
        self.min_points = min_points

    def fit(self, N, y):
        N = np.asarray(N, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if N.size != y.size:
            raise ValidationError("N and y must have the same length")
        if N.size < 2:
            raise ValidationError("a slope fit needs at least two points")
        if np.any(N <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
            raise ValidationError("log-log fits need positive, finite values")
        order = np.argsort(N, kind="stable")
        N, y = N[order], y[order]
        keep = max(int(self.min_points), int(math.ceil(self.upper_fraction * N.size)))
        keep = min(keep, N.size)
        N, y = N[-keep:], y[-keep:]
        x, ly = np.log(N), np.log(y)
        slope, intercept = np.polyfit(x, ly, 1)
        resid = ly - (slope * x + intercept)
        ss_tot = float(np.sum((ly - ly.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        self.slope_ = float(slope)
        self.intercept_ = float(intercept)
        self.r2_ = r2
        self.n_points_ = int(N.size)
        self.residuals_ = resid
        return self

    def predict(self, N):
        check_is_fitted(self, "slope_")
        N = check_array(np.asarray(N, dtype=float).reshape(-1, 1)).ravel()
        return np.exp(self.intercept_) * N**self.slope_

    def to_rate_fit(self) -> RateFit:
        check_is_fitted(self, "slope_")
        return RateFit(self.slope_, self.intercept_, self.r2_, self.n_points_, tuple(self.residuals_.tolist()))


def fit_rate(points, upper_half=False, min_points=4) -> RateFit:
    """OLS slope of ``log loss`` against ``log N``.

    ``upper_half`` restricts the fit to the larger half of the horizons
    (rounded up, at least ``min_points``), which damps pre-asymptotic bias.
    """
    points = list(points)
    if len(points) < 2:
        raise ValidationError("a slope fit needs at least two points")
    N = [p[0] for p in points]
    y = [p[1] for p in points]
    est = LogLogRateFit(0.5 if upper_half else 1.0, min_points if upper_half else 2)
    return est.fit(N, y).to_rate_fit()


def fit_table(rows: Sequence[SweepRow], family=None, column="loss", full=False, min_points=4):
    """Fit each family's ``column`` (``loss`` or ``eta0_star``) against N.

    Returns ``{family: RateFit}``; by default only the upper half of the N
    grid is used.
    """
    families = []
    for row in rows:
        if row.family not in families:
            families.append(row.family)
    if family is not None:
        families = [f for f in families if f == family]
    out = {}
    for fam in families:
        pts = [(row.N, getattr(row, column)) for row in rows if row.family == fam]
        if len(pts) >= 2:
            out[fam] = fit_rate(pts, upper_half=not full, min_points=min_points)
    return out


# -- plotting ------------------------------------------------------------------------

_PLOT_TEMPLATE = '''"""Log-log panel generated from {csv_name}."""
import matplotlib.pyplot as plt

CSV_PATH = {csv_path!r}
X_LABEL = {x!r}
Y_LABEL = {y!r}
SERIES = {{
{series}
}}
GUIDES = [
{guides}
]


def main():
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, points in SERIES.items():
        xs, ys = zip(*points)
        ax.loglog(xs, ys, marker="o", label=name)
    if GUIDES:
        xs = sorted(x for pts in SERIES.values() for x, _ in pts)
        x0, x1 = xs[0], xs[-1]
        y0 = min(y for pts in SERIES.values() for _, y in pts)
        for slope, label in GUIDES:
            ax.loglog([x0, x1], [y0 * (x1 / x0) ** -slope, y0], "k--", lw=0.8,
                      label=label or "slope {{:g}}".format(slope))
    ax.set_xlabel(X_LABEL)
    ax.set_ylabel(Y_LABEL)
    ax.legend()
    fig.tight_layout()
    fig.savefig(CSV_PATH.rsplit(".", 1)[0] + ".png", dpi=150)


if __name__ == "__main__":
    main()
'''


def emit_plot_script(table, axes=None, guides=(), csv_path="sweep.csv") -> str:
    """Standalone matplotlib script with one log-log series per family.

    ``table`` is a list of ``SweepRow`` (or a CSV path). ``axes`` is an
    ``(x, y)`` pair of column names, default ``("N", "loss")``. ``guides``
    lists reference slopes, each a number or ``(slope, label)``.
    """
    if isinstance(table, (str, os.PathLike)):
        csv_path = str(table)
        table = read_table(table)
    table = list(table)
    if not table:
        raise ValidationError("cannot plot an empty table")
    x, y = axes if axes else ("N", "loss")
    for col in (x, y):
        if col not in CSV_COLUMNS:
            raise ValidationError(f"unknown column {col!r}")
    series = {}
    for row in table:
        series.setdefault(row.family, []).append((getattr(row, x), getattr(row, y)))
    series_lines = "\n".join(f"    {name!r}: {sorted(pts)!r}," for name, pts in series.items())
    guide_items = []
    for g in guides:
        slope, label = (g, "") if isinstance(g, (int, float)) else (g[0], g[1])
        guide_items.append(f"    ({float(slope)!r}, {label!r}),")
    return _PLOT_TEMPLATE.format(
        csv_name=os.path.basename(csv_path),
        csv_path=csv_path,
        x=x,
        y=y,
        series=series_lines,
        guides="\n".join(guide_items),
    )
