"""Experiment sweeps over measurement counts, noise and solvers.

Config files are TOML.  Recognized keys (all optional unless noted)::

    seed = 0                 # master seed
    trials = 10              # planted signals per m
    out = "sweep.csv"

    [model]
    name = "group-sparse"    # required; or "ffnet:<path to weight manifest>"
    n = 120                  # remaining keys are passed to the model builder
    k = 20

    [signal]
    mode = "dense"           # "dense": every group-sparse block active; "ball": uniform latent
    seeds = [1, 2, 3]        # optional per-trial latent seeds (cycled)

    [measurements]
    m = [50, 100, 200, 400]  # required

    [noise]
    kind = "none"            # "gaussian" (sigma) or "sign_flip" (p)
    sigma = 0.0
    p = 0.0

    [solvers.pgd1bit]        # one table per solver; keys are solver parameters
    step_size = 1.25
    [solvers.biht]
    iters = 100

CSV layout: one header line, then one ``trial`` row per (m, solver, trial)
and one ``aggregate`` row per (m, solver), sorted by m, solver, trial.
Columns::

    row_type, m, solver, trial, status,
    ds, l2_error, per_coord_error, final_loss, tau1, tau2,   # trial rows
    count, ds_mean, ds_std, err_mean, err_std, err_errbar    # aggregate rows

``ds`` is the geodesic distance between the planted signal and the
unit-normalized estimate, ``l2_error`` the Euclidean distance between the
same two unit vectors, ``per_coord_error`` the squared l2 error divided by n
(raw estimate for ``lasso``, normalized otherwise).  Standard deviations are
population values over successful trials and ``err_errbar`` is half of
``err_std``.  Floats are written with 17 significant digits.  Wall times
go to a ``<csv>.meta.json`` sidecar so the CSV itself is reproducible.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .errors import ConfigError, DivergedError, DomainViolationError, InfeasibleError, InvalidArgumentError
from .genmodel import GroupSparseModel, build_model, sample_latents
from .measure import NoiseSpec, gaussian_matrix, geodesic_dist, hamming_dist, sign
from .recover import SOLVERS, derive_seed, run_solver

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "SweepRow",
    "Aggregate",
    "SweepResult",
    "load_config",
    "config_from_dict",
    "apply_overrides",
    "run_sweep",
    "emit_csv",
    "load_csv",
    "CSV_COLUMNS",
]

TRIAL_COLUMNS = ["ds", "l2_error", "per_coord_error", "final_loss", "tau1", "tau2"]
AGG_COLUMNS = ["count", "ds_mean", "ds_std", "err_mean", "err_std", "err_errbar"]
CSV_COLUMNS = ["row_type", "m", "solver", "trial", "status"] + TRIAL_COLUMNS + AGG_COLUMNS


@dataclass
class ExperimentConfig:
    model: str
    m_values: List[int]
    model_params: dict = field(default_factory=dict)
    signal_mode: str = "ball"
    signal_seeds: Optional[List[int]] = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    solvers: Dict[str, dict] = field(default_factory=lambda: {"pgd1bit": {}})
    trials: int = 1
    seed: int = 0
    out: Optional[str] = None

    def __post_init__(self):
        if not self.m_values:
            raise ConfigError("measurement grid is empty")
        if any(int(m) < 1 for m in self.m_values):
            raise ConfigError("measurement counts must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.solvers:
            raise ConfigError("no solvers configured")
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ConfigError(f"unknown solvers {sorted(unknown)}; choose from {SOLVERS}")
        if self.signal_mode not in ("ball", "dense"):
            raise ConfigError(f"unknown signal mode {self.signal_mode!r}")


def config_from_dict(d: dict) -> ExperimentConfig:
    try:
        model = dict(d["model"])
        name = model.pop("name")
        noise = dict(d.get("noise", {}))
        signal = d.get("signal", {})
        return ExperimentConfig(
            model=name,
            model_params=model,
            m_values=[int(m) for m in d["measurements"]["m"]],
            signal_mode=signal.get("mode", "ball"),
            signal_seeds=signal.get("seeds"),
            noise=NoiseSpec(kind=noise.get("kind", "none"), sigma=float(noise.get("sigma", 0.0)), p=float(noise.get("p", 0.0)), seed=int(noise.get("seed", 0))),
            solvers={k: dict(v) for k, v in d.get("solvers", {"pgd1bit": {}}).items()},
            trials=int(d.get("trials", 1)),
            seed=int(d.get("seed", 0)),
            out=d.get("out"),
        )
    except KeyError as exc:
        raise ConfigError(f"missing required config key {exc}") from exc
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as TOML literals."""
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        node = d
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-table")
        node[parts[-1]] = _parse_value(value.strip())
    return d


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(apply_overrides(raw, overrides))


@dataclass
class SweepRow:
    m: int
    solver: str
    trial: int
    status: str
    ds: float = math.nan
    l2_error: float = math.nan
    per_coord_error: float = math.nan
    final_loss: float = math.nan
    tau1: float = math.nan
    tau2: float = math.nan
    wall_time: float = 0.0

    @property
    def key(self):
        return (self.m, self.solver, self.trial)


@dataclass
class Aggregate:
    count: int
    ds_mean: float
    ds_std: float
    err_mean: float
    err_std: float

    @property
    def err_errbar(self) -> float:
        return 0.5 * self.err_std


def _aggregate(rows: List[SweepRow]) -> Aggregate:
    ok = [r for r in rows if r.status == "ok"]
    if not ok:
        return Aggregate(0, math.nan, math.nan, math.nan, math.nan)
    ds = np.array([r.ds for r in ok])
    err = np.array([r.per_coord_error for r in ok])
    return Aggregate(len(ok), float(ds.mean()), float(ds.std()), float(err.mean()), float(err.std()))


@dataclass
class SweepResult:
    rows: List[SweepRow]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.key)

    def aggregates(self) -> Dict[Tuple[int, str], Aggregate]:
        groups: Dict[Tuple[int, str], List[SweepRow]] = {}
        for r in self.rows:
            groups.setdefault((r.m, r.solver), []).append(r)
        return {key: _aggregate(v) for key, v in sorted(groups.items())}

    def median_error(self, solver: str, metric: str = "per_coord_error") -> Dict[int, float]:
        out: Dict[int, List[float]] = {}
        for r in self.rows:
            if r.solver == solver and r.status == "ok":
                out.setdefault(r.m, []).append(getattr(r, metric))
        return {m: float(np.median(v)) for m, v in sorted(out.items())}

    def to_dict(self) -> dict:
        return {
            "rows": [{k: v for k, v in asdict(r).items() if k != "wall_time"} for r in self.rows],
            "aggregates": [
                {"m": m, "solver": s, **asdict(a), "err_errbar": a.err_errbar} for (m, s), a in self.aggregates().items()
            ],
        }


def _planted_latent(model, mode: str, rng: np.random.Generator) -> np.ndarray:
    if mode == "dense":
        if not isinstance(model, GroupSparseModel):
            raise ConfigError("signal mode 'dense' needs the group-sparse model")
        half = model.r / math.sqrt(model.k)
        z = rng.uniform(-half, half, model.k)
        z[-1] = 0.0
        return z
    for _ in range(1000):
        z = sample_latents(model.k, model.r, 1, rng)[0]
        if model.in_domain(z):
            return z
    raise DomainViolationError("could not plant a latent inside the model domain")


def _signal_seed(config: ExperimentConfig, trial: int) -> int:
    if config.signal_seeds:
        return int(config.signal_seeds[trial % len(config.signal_seeds)])
    return derive_seed(config.seed, trial, 1)


def _build_model(config: ExperimentConfig):
    try:
        return build_model(config.model, **config.model_params)
    except (InvalidArgumentError, TypeError, OSError, KeyError) as exc:
        raise ConfigError(f"cannot build model {config.model!r}: {exc}") from exc


def run_sweep(config: ExperimentConfig, model=None) -> SweepResult:
    """Run every (m, trial, solver) cell; fully determined by ``config``.

    The planted latent depends only on the trial index, so each trial
    follows one signal across the measurement grid.
    """
    model = model if model is not None else _build_model(config)
    rows = []
    for m in sorted(set(config.m_values)):
        for trial in range(config.trials):
            A = gaussian_matrix(m, model.n, derive_seed(config.seed, m, trial, 0))
            a = A.entries
            x = model.forward(_planted_latent(model, config.signal_mode, np.random.default_rng(_signal_seed(config, trial))))
            x = x / np.linalg.norm(x)
            ax = a @ x
            clean = sign(ax)
            rng = np.random.default_rng(derive_seed(config.seed, m, trial, 2))
            noise = config.noise
            y = ax
            if noise.kind == "gaussian":
                y = ax + noise.sigma * rng.standard_normal(m)
                b = sign(y)
            elif noise.kind == "sign_flip":
                b = np.where(rng.random(m) < noise.p, -clean, clean).astype(np.int8)
            else:
                b = clean
            tau1 = hamming_dist(b, clean)
            for name in sorted(config.solvers):
                params = dict(config.solvers[name])
                if name == "pgd1bit":
                    params.setdefault("seed", derive_seed(config.seed, m, trial, 3))
                t0 = time.perf_counter()
                try:
                    res = run_solver(name, A, b, model, params, y=y)
                except (DivergedError, InfeasibleError, DomainViolationError, InvalidArgumentError) as exc:
                    rows.append(SweepRow(m, name, trial, f"error:{type(exc).__name__}", tau1=tau1, wall_time=time.perf_counter() - t0))
                    continue
                except TypeError as exc:
                    raise ConfigError(f"bad parameters for solver {name!r}: {exc}") from exc
                wall = time.perf_counter() - t0
                est = res.estimate
                nrm = np.linalg.norm(est)
                if not nrm > 0 or not np.all(np.isfinite(est)):
                    rows.append(SweepRow(m, name, trial, "error:degenerate", tau1=tau1, wall_time=wall))
                    continue
                xh = est / nrm
                raw = est if name == "lasso" else xh
                rows.append(
                    SweepRow(
                        m=m,
                        solver=name,
                        trial=trial,
                        status="ok",
                        ds=geodesic_dist(x, xh),
                        l2_error=float(np.linalg.norm(x - xh)),
                        per_coord_error=float(np.sum((x - raw) ** 2) / model.n),
                        final_loss=res.final_loss,
                        tau1=tau1,
                        tau2=hamming_dist(sign(a @ xh), b),
                        wall_time=wall,
                    )
                )
    return SweepResult(rows)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def emit_csv(result: SweepResult, path, config: Optional[ExperimentConfig] = None) -> None:
    path = Path(path)
    aggs = result.aggregates()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for (m, solver), agg in aggs.items():
            for r in result.rows:
                if (r.m, r.solver) == (m, solver):
                    w.writerow(["trial", r.m, r.solver, r.trial, r.status] + [_fmt(getattr(r, c)) for c in TRIAL_COLUMNS] + [""] * len(AGG_COLUMNS))
            w.writerow(
                ["aggregate", m, solver, "", ""]
                + [""] * len(TRIAL_COLUMNS)
                + [str(agg.count)] + [_fmt(v) for v in (agg.ds_mean, agg.ds_std, agg.err_mean, agg.err_std, agg.err_errbar)]
            )
    meta = {
        "version": __version__,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "wall_time": [{"m": r.m, "solver": r.solver, "trial": r.trial, "seconds": r.wall_time} for r in result.rows],
    }
    if config is not None:
        meta["config"] = {**asdict(config), "noise": asdict(config.noise)}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2))


def _same(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


def load_csv(path) -> SweepResult:
    """Read a sweep CSV and check its aggregate rows against the trial rows."""
    rows, stored = [], {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            if rec["row_type"] == "trial":
                rows.append(SweepRow(int(rec["m"]), rec["solver"], int(rec["trial"]), rec["status"], *(float(rec[c]) for c in TRIAL_COLUMNS)))
            elif rec["row_type"] == "aggregate":
                stored[(int(rec["m"]), rec["solver"])] = rec
            else:
                raise ValueError(f"{path}: unknown row type {rec['row_type']!r}")
    result = SweepResult(rows)
    recomputed = result.aggregates()
    if set(recomputed) != set(stored):
        raise ValueError(f"{path}: aggregate rows do not match the trial rows")
    for key, agg in recomputed.items():
        rec = stored[key]
        values = (agg.ds_mean, agg.ds_std, agg.err_mean, agg.err_std, agg.err_errbar)
        if int(rec["count"]) != agg.count or not all(_same(float(rec[c]), v) for c, v in zip(AGG_COLUMNS[1:], values)):
            raise ValueError(f"{path}: stored aggregate for {key} differs from its trial rows")
    return result


# Named verifiers.  Each returns a JSON-ready dict with a ``passed`` flag;
# defaults reproduce the desk-scale acceptance runs.


def _random_units(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    X = rng.standard_normal((count, n))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def verify_lemma4(seed: int = 0, pairs: int = 20, n: int = 10, trials: int = 100_000, tol: float = 0.01, min_pass: Optional[int] = None) -> dict:
    """Sign-flip frequency over Gaussian rows against the geodesic distance.

    By default 95% of the pairs must land within ``tol``.
    """
    if min_pass is None:
        min_pass = math.ceil(0.95 * pairs)
    from .embed import verify_sign_flip_prob

    rng = np.random.default_rng(seed)
    X, S = _random_units(rng, pairs, n), _random_units(rng, pairs, n)
    gaps = []
    for i in range(pairs):
        freq = verify_sign_flip_prob(X[i], S[i], trials, 1, derive_seed(seed, i))
        gaps.append(abs(freq - geodesic_dist(X[i], S[i])))
    ok = int(np.sum(np.array(gaps) <= tol))
    return {"verifier": "lemma4", "pairs": pairs, "rows": trials, "within_tol": ok, "max_gap": float(max(gaps)), "passed": ok >= min_pass}


def verify_lemma6(seed: int = 0, pairs: int = 100_000, n: int = 10) -> dict:
    """Exact sandwich between geodesic and Euclidean distance."""
    from .measure import geodesic_dist_rows

    rng = np.random.default_rng(seed)
    X, S = _random_units(rng, pairs, n), _random_units(rng, pairs, n)
    ds = geodesic_dist_rows(X, S)
    l2 = np.linalg.norm(X - S, axis=1)
    violations = int(np.count_nonzero((l2 / np.pi > ds) | (ds > l2 / 2)))
    return {"verifier": "lemma6", "pairs": pairs, "violations": violations, "passed": violations == 0}


def verify_lemma2(seed: int = 0, m: int = 1000, n: int = 50, eps: float = 0.3, trials: int = 100, min_pass: Optional[int] = None) -> dict:
    """Two-sided norm preservation of a fixed unit vector; 98% must pass by default."""
    if min_pass is None:
        min_pass = math.ceil(0.98 * trials)
    from .embed import verify_norm_preservation

    x = _random_units(np.random.default_rng(seed), 1, n)[0]
    frac = verify_norm_preservation(x, m, eps, trials, derive_seed(seed, 1))
    ok = int(round(frac * trials))
    return {"verifier": "lemma2", "trials": trials, "satisfied": ok, "passed": ok >= min_pass}


def _pair_at_distance(rng: np.random.Generator, n: int, dist: float):
    x = _random_units(rng, 1, n)[0]
    u = rng.standard_normal(n)
    u -= (u @ x) * x
    u /= np.linalg.norm(u)
    theta = 2 * math.asin(dist / 2)
    return x, math.cos(theta) * x + math.sin(theta) * u


def verify_separation(seed: int = 0, pairs: int = 10, n: int = 10, eps: float = 0.5, trials: int = 100_000, slack: float = 0.01) -> dict:
    """Far pairs hit the opposite-side event with probability at least eps/12;
    near pairs land on the same side with probability at least 1 - 2 eps / 3."""
    from .embed import verify_sep_lemma, verify_sep_lemma_near

    rng = np.random.default_rng(seed)
    far, near = [], []
    for i in range(pairs):
        x, s = _pair_at_distance(rng, n, rng.uniform(eps, 2.0))
        far.append(verify_sep_lemma(x, s, eps, trials, derive_seed(seed, i, 0)))
        x, s = _pair_at_distance(rng, n, rng.uniform(0.0, eps))
        near.append(verify_sep_lemma_near(x, s, eps, trials, derive_seed(seed, i, 1)))
    far_fail = int(np.sum(np.array(far) < eps / 12 - slack))
    near_fail = int(np.sum(np.array(near) < 1 - 2 * eps / 3 - slack))
    return {
        "verifier": "separation",
        "far_min": float(min(far)),
        "near_min": float(min(near)),
        "far_failures": far_fail,
        "near_failures": near_fail,
        "passed": far_fail == 0 and near_fail == 0,
    }


def verify_bese_trend(
    seed: int = 0, n: int = 64, k: int = 2, m_low: int = 500, m_high: int = 8000, pairs: int = 2000, seeds: int = 10, max_high: float = 0.1
) -> dict:
    """Median maximum deviation over seeds shrinks as m grows."""
    from .embed import bese_deviation

    model = GroupSparseModel(n, k)
    med = {}
    for m in (m_low, m_high):
        devs = [
            bese_deviation(model, gaussian_matrix(m, n, derive_seed(seed, m, i)), pairs, derive_seed(seed, m, i, 1)).max_dev
            for i in range(seeds)
        ]
        med[m] = float(np.median(devs))
    return {
        "verifier": "bese-trend",
        "median_max_dev": {str(m): v for m, v in med.items()},
        "passed": med[m_high] < med[m_low] and med[m_high] <= max_high,
    }


def verify_bese(seed: int = 0, n: int = 64, k: int = 2, m: int = 2000, pairs: int = 2000) -> dict:
    """One deviation report; always passes when the report is well formed."""
    from .embed import bese_deviation

    rep = bese_deviation(GroupSparseModel(n, k), gaussian_matrix(m, n, seed), pairs, derive_seed(seed, 1), model_id=f"group-sparse({n},{k})")
    return {"verifier": "bese", **rep.to_dict(), "passed": 0 <= rep.mean_dev <= rep.max_dev <= 1}


def verify_local_embedding(seed: int = 0, n: int = 60, k: int = 3, m: int = 4000, eps: float = 0.3, pairs: int = 10_000) -> dict:
    """Far pairs never collide in sign space."""
    from .embed import local_embedding_check

    rep = local_embedding_check(GroupSparseModel(n, k), gaussian_matrix(m, n, seed), eps, pairs, derive_seed(seed, 1))
    out = {"verifier": "local-embedding", **rep.to_dict()}
    out["passed"] = rep.far_pairs_min_dH is None or rep.far_pairs_min_dH > 0
    return out


def verify_noisy_bound(seed: int = 0, n: int = 60, k: int = 3, m: int = 2000, p: float = 0.05, sigma: float = 0.2, trials: int = 50) -> dict:
    """Noisy recovery bound under sign flips plus the Gaussian-noise flip rate."""
    from .embed import noisy_bound_check

    model = GroupSparseModel(n, k)
    A = gaussian_matrix(m, n, seed)
    rep = noisy_bound_check(model, A, NoiseSpec.sign_flip(p, seed=derive_seed(seed, 1)), trials=trials, seed=derive_seed(seed, 2))
    rng = np.random.default_rng(derive_seed(seed, 3))
    a = A.entries
    tau1 = []
    for _ in range(trials):
        x = model.forward(sample_latents(k, model.r, 1, rng)[0])
        ax = a @ x
        tau1.append(hamming_dist(sign(ax + sigma * rng.standard_normal(m)), sign(ax)))
    mean_tau1 = float(np.mean(tau1))
    return {
        "verifier": "noisy-bound",
        **rep.to_dict(),
        "gaussian_sigma": sigma,
        "gaussian_mean_tau1": mean_tau1,
        "passed": rep.violations == 0 and mean_tau1 <= sigma / 2 + 0.05,
    }


def verify_epsilon_net(seed: int = 0, k: int = 2, r: float = 1.0, delta: float = 0.1, probes: int = 10_000) -> dict:
    """Covering certification of a grid net."""
    from .embed import build_epsilon_net

    net = build_epsilon_net(k, r, delta)
    radius = net.covering_radius(probes, seed)
    return {
        "verifier": "epsilon-net",
        "points": len(net.points),
        "log_cardinality": net.log_cardinality,
        "declared_bound": net.declared_bound,
        "covering_radius": radius,
        "passed": radius <= net.latent_radius * (1 + 1e-12),
    }


VERIFIERS = {
    "lemma4": verify_lemma4,
    "lemma6": verify_lemma6,
    "lemma2": verify_lemma2,
    "separation": verify_separation,
    "bese": verify_bese,
    "bese-trend": verify_bese_trend,
    "local-embedding": verify_local_embedding,
    "noisy-bound": verify_noisy_bound,
    "epsilon-net": verify_epsilon_net,
}
