"""Recovery from 1-bit measurements.

Generative-prior PGD, BIHT, Lasso on linear measurements and the 1-bit
Lasso linear program, plus the one-sided l1 objective they share.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from .errors import DivergedError, DomainViolationError, InfeasibleError, InvalidArgumentError
from .genmodel import sample_latents
from .measure import as_matrix, sign

__all__ = [
    "RecoveryConfig",
    "RecoveryResult",
    "onesided_l1",
    "onesided_l1_subgrad",
    "adam_minimize",
    "project_range",
    "pgd_1bit",
    "biht",
    "hard_threshold",
    "lasso_linear",
    "lasso_1bit",
    "lasso_1bit_relaxed",
    "derive_seed",
    "run_solver",
    "SOLVERS",
]

log = logging.getLogger(__name__)


def derive_seed(*keys: int) -> int:
    """A 64-bit seed derived deterministically from integer keys."""
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class RecoveryConfig:
    step_size: float = 1.25
    outer_iters: int = 15
    restarts: int = 4
    inner_steps: int = 200
    inner_lr: float = 0.1
    seed: int = 0
    # divide the subgradient by m, so step_size acts on the averaged subgradient
    scale_by_m: bool = True

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidArgumentError("step_size must be positive")
        for name in ("outer_iters", "restarts", "inner_steps"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if not self.inner_lr > 0:
            raise InvalidArgumentError("inner_lr must be positive")


@dataclass
class RecoveryResult:
    estimate: np.ndarray
    final_loss: float
    iterations_run: int
    restart_index: int = 0
    latent: Optional[np.ndarray] = None
    best_iteration: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimate"] = self.estimate.tolist()
        d["latent"] = None if self.latent is None else self.latent.tolist()
        return d


def _check_dims(A, x, b=None):
    a = as_matrix(A)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (a.shape[1],):
        raise InvalidArgumentError(f"signal length {x.shape} does not match {a.shape[1]} columns")
    if b is not None:
        b = np.asarray(b)
        if b.shape != (a.shape[0],):
            raise InvalidArgumentError(f"sign pattern length {b.shape} does not match {a.shape[0]} rows")
    return a, x, b


def onesided_l1(A, x, b) -> float:
    """``2 * sum(max(0, -b_i <a_i, x>))``."""
    a, x, b = _check_dims(A, x, b)
    return float(2.0 * np.sum(np.maximum(0.0, -b * (a @ x))))


def onesided_l1_subgrad(A, x, b) -> np.ndarray:
    """The subgradient ``A^T (sign(A x) - b)`` of :func:`onesided_l1`."""
    a, x, b = _check_dims(A, x, b)
    return a.T @ (sign(a @ x) - b)


def adam_minimize(
    objective_grad: Callable,
    z0,
    steps: int,
    lr: float,
    seed: Optional[int] = None,
    constraint: Optional[Callable] = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Adam on ``objective_grad(z) -> (value, grad)``; returns the best iterate seen.

    ``constraint`` maps each new iterate back into the feasible set.  ``seed``
    is accepted for interface symmetry; the recursion itself is deterministic.
    """
    if steps < 1 or not lr > 0:
        raise InvalidArgumentError("steps must be >= 1 and lr > 0")
    z = np.array(z0, dtype=np.float64)
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    best_z, best_val = z.copy(), np.inf
    last_finite = None
    for t in range(steps + 1):
        val, g = objective_grad(z)
        g = np.asarray(g, dtype=np.float64)
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            raise DivergedError(f"non-finite objective or gradient at Adam step {t}", last_finite=last_finite)
        last_finite = z.copy()
        if val < best_val:
            best_val, best_z = val, z.copy()
        if t == steps:
            break
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** (t + 1))
        vhat = v / (1 - beta2 ** (t + 1))
        z = z - lr * mhat / (np.sqrt(vhat) + eps)
        if constraint is not None:
            z = constraint(z)
    return best_z


def _radial_clip(r: float):
    def clip(z):
        nrm = np.linalg.norm(z)
        return z * (r / nrm) if nrm > r else z

    return clip


def _start_point(model, rng: np.random.Generator, tries: int = 1000) -> np.ndarray:
    for _ in range(tries):
        z = sample_latents(model.k, model.r, 1, rng)[0]
        if model.in_domain(z):
            return z
    raise DomainViolationError(f"no admissible latent found in {tries} random draws")


def _range_objective(model, y):
    # out-of-domain points get a value above any admissible one and a gradient
    # that increases the inner output norm
    penalty = (1.0 + np.linalg.norm(y)) ** 2 + 1.0

    def f(z):
        try:
            x = model.forward(z)
        except DomainViolationError:
            g = model.inner.forward(z)
            return penalty, -model.inner.vjp(z, g / max(np.linalg.norm(g), 1e-300))
        diff = x - y
        return float(diff @ diff), 2.0 * model.vjp(z, diff)

    return f


def project_range(model, y, config: RecoveryConfig = RecoveryConfig(), z_init=None):
    """Approximate ``argmin_{x in range} ||x - y||``; returns ``(x, z)``.

    Uses ``model.exact_project`` when available.  Otherwise runs Adam on the
    latent from ``config.restarts`` uniform starts in the latent ball (or from
    ``z_init`` alone when given), rescaling iterates radially into the ball.
    """
    y = np.asarray(y, dtype=np.float64)
    if hasattr(model, "exact_project"):
        return model.exact_project(y)
    if y.shape != (model.n,):
        raise InvalidArgumentError(f"expected a length-{model.n} vector, got shape {y.shape}")
    f = _range_objective(model, y)
    clip = _radial_clip(model.r)
    if z_init is not None:
        starts = [np.asarray(z_init, dtype=np.float64)]
    else:
        starts = [_start_point(model, np.random.default_rng(derive_seed(config.seed, i))) for i in range(config.restarts)]
    best_z, best_val = None, np.inf
    for z0 in starts:
        z = adam_minimize(f, z0, config.inner_steps, config.inner_lr, constraint=clip)
        val = f(z)[0]
        if val < best_val:
            best_val, best_z = val, z
    return model.forward(best_z), best_z


def pgd_1bit(A, b, model, config: RecoveryConfig = RecoveryConfig()) -> RecoveryResult:
    """Projected subgradient descent ``x <- P_G(x + step * A^T (b - sign(A x)))`` from 0.

    ``step`` is ``config.step_size / m`` when ``config.scale_by_m`` is set
    (the default) and ``config.step_size`` otherwise.  Since
    ``E[a sign(<a, x>)] = sqrt(2/pi) x`` for unit ``x``, the averaged subgradient
    approximates ``sqrt(2/pi) (x_true - x)`` and steps near ``sqrt(pi/2)`` work.

    Runs ``config.restarts`` trajectories.  The first starts from ``x = 0``,
    the others from ``G(z0)`` for a random latent ``z0``.  Without an exact
    projector the latent search of each trajectory is warm-started from its
    previous latent.  Returns the iterate with the smallest one-sided l1 loss
    over all trajectories.
    """
    a = as_matrix(A)
    b = np.asarray(b)
    if b.shape != (a.shape[0],) or a.shape[1] != model.n:
        raise InvalidArgumentError(f"shapes disagree: A {a.shape}, b {b.shape}, model n={model.n}")
    exact = hasattr(model, "exact_project")
    step = config.step_size / a.shape[0] if config.scale_by_m else config.step_size
    best = None
    total = 0
    for rs in range(config.restarts):
        z = _start_point(model, np.random.default_rng(derive_seed(config.seed, rs)))
        x = np.zeros(a.shape[1]) if rs == 0 else model.forward(z)
        if exact:
            z = None
        for t in range(config.outer_iters):
            y = x + step * (a.T @ (b - sign(a @ x)))
            if not np.any(y):
                # sign(A 0) is all +1; fall back to back-projection so P_G never sees 0
                y = a.T @ b
            x, z = project_range(model, y, config, z_init=z)
            total += 1
            loss = onesided_l1(a, x, b)
            if best is None or loss < best.final_loss:
                best = RecoveryResult(x.copy(), loss, 0, rs, None if z is None else np.array(z), t + 1)
    best.iterations_run = total
    return best


def hard_threshold(v: np.ndarray, s: int) -> np.ndarray:
    """Keep the ``s`` largest-magnitude entries; ties go to the lowest index."""
    keep = np.argsort(-np.abs(v), kind="stable")[:s]
    out = np.zeros_like(v)
    out[keep] = v[keep]
    return out


def biht(A, b, s: int, step: float = 1.0, iters: int = 100, normalize_each: bool = False) -> np.ndarray:
    """Binary iterative hard thresholding; returns a unit-norm ``s``-sparse vector."""
    a = as_matrix(A)
    b = np.asarray(b)
    n = a.shape[1]
    if not 1 <= s <= n:
        raise InvalidArgumentError(f"sparsity must lie in [1, {n}], got {s}")
    if b.shape != (a.shape[0],):
        raise InvalidArgumentError(f"sign pattern length {b.shape} does not match {a.shape[0]} rows")
    x = np.zeros(n)
    for t in range(iters):
        v = x + 0.5 * step * (a.T @ (b - sign(a @ x)))
        if t == 0 and not np.any(v):
            v = a.T @ b
        x = hard_threshold(v, s)
        if normalize_each and np.any(x):
            x /= np.linalg.norm(x)
    nrm = np.linalg.norm(x)
    if nrm == 0:
        raise InvalidArgumentError("BIHT produced the zero vector (A^T b = 0)")
    return x / nrm


def _soft(v, thr):
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _ista(a, y, x, reg, L, tol, max_iter):
    # ISTA with backtracking from x; returns (x, residual vector, L, iterations)
    def smooth(v):
        r = a @ v - y
        return 0.5 * float(r @ r), r

    f, r = smooth(x)
    obj = f + reg * np.abs(x).sum()
    it = 0
    for it in range(1, max_iter + 1):
        grad = a.T @ r
        while True:
            x_new = _soft(x - grad / L, reg / L)
            d = x_new - x
            f_new, r_new = smooth(x_new)
            if f_new <= f + grad @ d + 0.5 * L * (d @ d) * (1 + 1e-12) + 1e-300:
                break
            L *= 2.0
        obj_new = f_new + reg * np.abs(x_new).sum()
        x, f, r = x_new, f_new, r_new
        done = obj - obj_new <= tol * max(obj, 1e-300)
        obj = obj_new
        if done:
            break
    return x, r, L, it


def lasso_linear(A, y, reg: float = 1e-4, tol: float = 1e-8, max_iter: int = 10_000, full_output: bool = False):
    """ISTA with backtracking for ``0.5 ||A x - y||^2 + reg ||x||_1``.

    Uses continuation: the penalty starts at ``||A^T y||_inf / 2`` and halves
    until it reaches ``reg``, each stage warm-started from the previous one.
    Plain ISTA with a tiny ``reg`` and fewer rows than columns otherwise
    spends its budget shrinking a dense least-squares iterate.  The final
    stage stops once the relative objective decrease drops below ``tol``
    (earlier stages at ``max(tol, 1e-4)``); ``max_iter``
    bounds the iterations over all stages.  With ``full_output`` returns
    ``(x, residual, iterations)`` where ``residual`` is ``||A x - y||``.
    """
    a = as_matrix(A)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (a.shape[0],):
        raise InvalidArgumentError(f"measurement length {y.shape} does not match {a.shape[0]} rows")
    if reg < 0:
        raise InvalidArgumentError("reg must be non-negative")
    x = np.zeros(a.shape[1])
    lam0 = max(float(np.abs(a.T @ y).max()) / 2, reg)
    lam, L, used = lam0, 1.0, 0
    while True:
        # intermediate stages only need a rough warm start
        x, r, L, it = _ista(a, y, x, lam, L, tol if lam <= reg else max(tol, 1e-4), max_iter - used)
        used += it
        if lam <= reg or used >= max_iter:
            break
        lam /= 2
        if lam < max(reg, 1e-10 * lam0):
            lam = reg
    if full_output:
        return x, float(np.linalg.norm(r)), used
    return x


def _signed_rows(A, b):
    a = as_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.shape[0],):
        raise InvalidArgumentError(f"sign pattern length {b.shape} does not match {a.shape[0]} rows")
    return b[:, None] * a


def lasso_1bit(A, b, fallback: bool = False, C: float = 100.0) -> np.ndarray:
    """``min ||x||_1`` s.t. ``b_i <a_i, x> >= 0`` and ``sum_i b_i <a_i, x> = m``.

    Solved as a linear program in ``(x+, x-)`` with HiGHS.  Raises
    ``InfeasibleError`` when the sign pattern is not realizable, unless
    ``fallback`` is set, in which case :func:`lasso_1bit_relaxed` is used.
    """
    B = _signed_rows(A, b)
    m, n = B.shape
    c = np.ones(2 * n)
    A_ub = np.hstack([-B, B])
    A_eq = np.hstack([B.sum(0), -B.sum(0)])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=[float(m)], bounds=(0, None), method="highs")
    if res.status == 0:
        return res.x[:n] - res.x[n:]
    if res.status == 2:
        if fallback:
            log.info("1-bit Lasso infeasible; using the hinge relaxation")
            return lasso_1bit_relaxed(A, b, C=C)
        raise InfeasibleError("sign constraints are not jointly satisfiable")
    raise RuntimeError(f"LP solver failed: {res.message}")


def lasso_1bit_relaxed(A, b, C: float = 100.0) -> np.ndarray:
    """``min ||x||_1 + C sum_i max(0, -b_i <a_i, x>)`` s.t. ``sum_i b_i <a_i, x> = m``."""
    B = _signed_rows(A, b)
    m, n = B.shape
    c = np.concatenate([np.ones(2 * n), np.full(m, C)])
    A_ub = np.hstack([-B, B, -np.eye(m)])
    A_eq = np.concatenate([B.sum(0), -B.sum(0), np.zeros(m)])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=[float(m)], bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"relaxed 1-bit Lasso failed: {res.message}")
    return res.x[:n] - res.x[n : 2 * n]


SOLVERS = ("pgd1bit", "biht", "lasso", "lasso1bit")


def run_solver(name: str, A, b, model=None, params: Optional[dict] = None, y=None) -> RecoveryResult:
    """Dispatch a solver by name.

    ``pgd1bit`` takes :class:`RecoveryConfig` fields; ``biht`` takes
    ``sparsity`` (default ``model.k``), ``step``, ``iters``, ``normalize_each``;
    ``lasso`` takes ``reg`` and needs the linear measurements ``y``;
    ``lasso1bit`` takes ``C`` for its infeasibility fallback.
    """
    params = dict(params or {})
    a = as_matrix(A)
    if name == "pgd1bit":
        if model is None:
            raise InvalidArgumentError("pgd1bit needs a generative model")
        return pgd_1bit(a, b, model, RecoveryConfig(**params))
    if name == "biht":
        s = params.pop("sparsity", None)
        if s is None:
            if model is None:
                raise InvalidArgumentError("biht needs a sparsity level")
            s = model.k
        iters = params.get("iters", 100)
        x = biht(a, b, int(s), **params)
        return RecoveryResult(x, onesided_l1(a, x, b), iters)
    if name == "lasso":
        if y is None:
            raise InvalidArgumentError("lasso needs linear measurements y")
        x, _, it = lasso_linear(a, y, full_output=True, **params)
        return RecoveryResult(x, onesided_l1(a, x, b), it)
    if name == "lasso1bit":
        x = lasso_1bit(a, b, fallback=True, **params)
        return RecoveryResult(x, onesided_l1(a, x, b), 1)
    raise InvalidArgumentError(f"unknown solver {name!r}; choose from {SOLVERS}")
