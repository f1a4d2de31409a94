"""Monte Carlo checks of binary embedding and separation properties.

All routines are pure functions of their arguments and seeds.  They report
empirical quantities; asserting them against a bound is left to the caller.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, ResourceLimitError
from .genmodel import sample_latents
from .measure import NoiseSpec, as_matrix, geodesic_dist, geodesic_dist_rows, hamming_dist, noisy_sign_measure, sign

log = logging.getLogger(__name__)

__all__ = [
    "EmbeddingReport",
    "LocalEmbeddingReport",
    "EpsilonNet",
    "NoisyBoundReport",
    "sample_model_latents",
    "pair_deviations",
    "bese_deviation",
    "local_embedding_check",
    "verify_sep_lemma",
    "verify_sep_lemma_near",
    "verify_sign_flip_prob",
    "verify_norm_preservation",
    "build_epsilon_net",
    "noisy_bound_check",
    "check_sandwich",
]

_CHUNK = 1 << 16
_SANDWICH_TOL = 1e-12


@dataclass
class EmbeddingReport:
    num_pairs: int
    max_dev: float
    mean_dev: float
    quantiles: List[Tuple[float, float]]
    m: int
    model_id: str
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def check_sandwich(X, S, ds) -> None:
    """Raise if ``|x - s| / pi <= d_S <= |x - s| / 2`` fails for any row."""
    d = np.linalg.norm(np.asarray(X) - np.asarray(S), axis=-1)
    if np.any(d / np.pi > ds + _SANDWICH_TOL) or np.any(ds > d / 2 + _SANDWICH_TOL):
        raise AssertionError("geodesic/Euclidean sandwich violated")


def sample_model_latents(model, count: int, rng: np.random.Generator, max_rounds: int = 100) -> np.ndarray:
    """Uniform latents from the model's ball, rejecting any outside its domain."""
    out = np.empty((0, model.k))
    for _ in range(max_rounds):
        Z = sample_latents(model.k, model.r, max(count - len(out), 16) * 2, rng)
        keep = [z for z in Z if model.in_domain(z)]
        if keep:
            out = np.vstack([out, np.array(keep)])
        if len(out) >= count:
            return out[:count]
    raise InvalidArgumentError("model domain is too small to sample from")


def pair_deviations(A, X, S) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rowwise ``(d_S, d_H, |d_S - d_H|)`` for unit-vector batches ``X``, ``S``."""
    a = as_matrix(A)
    X = np.atleast_2d(X)
    S = np.atleast_2d(S)
    ds = geodesic_dist_rows(X, S)
    check_sandwich(X, S, ds)
    dh = np.mean(sign(X @ a.T) != sign(S @ a.T), axis=1)
    return ds, dh, np.abs(ds - dh)


def _require_normalized(model):
    if not getattr(model, "normalized", False):
        raise InvalidArgumentError("model outputs must lie on the unit sphere; wrap it with normalize_model")


def bese_deviation(model, A, num_pairs: int, seed: int, model_id: str = "", quantiles=(0.5, 0.9, 0.99)) -> EmbeddingReport:
    """Statistics of ``|d_S(x, s) - d_H(sign(Ax), sign(As))|`` over random range pairs."""
    _require_normalized(model)
    rng = np.random.default_rng(seed)
    X = model.forward(sample_model_latents(model, num_pairs, rng))
    S = model.forward(sample_model_latents(model, num_pairs, rng))
    dev = np.concatenate([pair_deviations(A, X[i : i + 4096], S[i : i + 4096])[2] for i in range(0, num_pairs, 4096)])
    return EmbeddingReport(
        num_pairs=num_pairs,
        max_dev=float(dev.max()),
        mean_dev=float(dev.mean()),
        quantiles=[(float(q), float(np.quantile(dev, q))) for q in quantiles],
        m=as_matrix(A).shape[0],
        model_id=model_id or type(model).__name__,
        seed=seed,
    )


@dataclass
class LocalEmbeddingReport:
    eps: float
    far_pairs_min_dH: Optional[float]
    near_pairs_max_dH: Optional[float]
    num_far: int
    num_near: int
    far_below_proof_constant: int

    def to_dict(self) -> dict:
        return asdict(self)


def local_embedding_check(model, A, eps: float, num_pairs: int, seed: int) -> LocalEmbeddingReport:
    """Split sampled pairs at Euclidean distance ``eps``; report the smallest
    Hamming distance among far pairs and the largest among near pairs.

    Half the pairs are independent; the other half perturb the first latent
    by a random offset of latent length ``r * 10**U(-3, 0)`` so that near
    pairs actually occur.
    """
    _require_normalized(model)
    rng = np.random.default_rng(seed)
    half = num_pairs // 2
    Z1 = sample_model_latents(model, num_pairs, rng)
    Z2 = sample_model_latents(model, num_pairs, rng)
    local = Z1[half:] + sample_latents(model.k, 1.0, num_pairs - half, rng) * (model.r * 10 ** rng.uniform(-3, 0, (num_pairs - half, 1)))
    nrm = np.linalg.norm(local, axis=1, keepdims=True)
    local = np.where(nrm > model.r, local * (model.r / nrm), local)
    ok = np.array([model.in_domain(z) for z in local])
    Z2[half:][ok] = local[ok]
    X, S = model.forward(Z1), model.forward(Z2)
    _, dh, _ = pair_deviations(A, X, S)
    dist = np.linalg.norm(X - S, axis=1)
    far, near = dist > eps, dist <= eps
    below = int(np.count_nonzero(dh[far] < eps / 96))
    if below:
        log.warning("%d far pairs have Hamming distance below eps/96 = %.3g", below, eps / 96)
    return LocalEmbeddingReport(
        eps=eps,
        far_pairs_min_dH=float(dh[far].min()) if far.any() else None,
        near_pairs_max_dH=float(dh[near].max()) if near.any() else None,
        num_far=int(far.sum()),
        num_near=int(near.sum()),
        far_below_proof_constant=below,
    )


def _unit_pair(x, s):
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x.shape != s.shape or x.ndim != 1:
        raise InvalidArgumentError("x and s must be vectors of equal length")
    geodesic_dist(x, s)  # validates unit norms
    return x, s


def _gaussian_projections(x, s, trials: int, seed: int):
    rng = np.random.default_rng(seed)
    for start in range(0, trials, _CHUNK):
        G = rng.standard_normal((min(_CHUNK, trials - start), x.shape[0]))
        yield G @ x, G @ s


def verify_sep_lemma(x, s, eps: float, trials: int, seed: int) -> float:
    """Frequency of ``<a, x> > eps/12`` and ``<a, s> < -eps/12`` for Gaussian ``a``.

    Requires ``||x - s|| >= eps``.
    """
    x, s = _unit_pair(x, s)
    if not eps > 0 or np.linalg.norm(x - s) < eps - 1e-12:
        raise InvalidArgumentError("need eps > 0 and ||x - s|| >= eps")
    t = eps / 12
    hits = sum(int(np.count_nonzero((ax > t) & (as_ < -t))) for ax, as_ in _gaussian_projections(x, s, trials, seed))
    return hits / trials


def verify_sep_lemma_near(x, s, eps: float, trials: int, seed: int) -> float:
    """Frequency of both ``<a, x>``, ``<a, s>`` beyond ``eps/12`` on the same side.

    Requires ``||x - s|| <= eps``.
    """
    x, s = _unit_pair(x, s)
    if not eps > 0 or np.linalg.norm(x - s) > eps + 1e-12:
        raise InvalidArgumentError("need eps > 0 and ||x - s|| <= eps")
    t = eps / 12
    hits = 0
    for ax, as_ in _gaussian_projections(x, s, trials, seed):
        hits += int(np.count_nonzero(((ax > t) & (as_ > t)) | ((ax < -t) & (as_ < -t))))
    return hits / trials


def verify_sign_flip_prob(x, s, m: int, trials: int, seed: int) -> float:
    """Mean Hamming distance between ``sign(Ax)`` and ``sign(As)`` over fresh ``m``-row matrices."""
    x, s = _unit_pair(x, s)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(trials):
        flips = 0
        for start in range(0, m, _CHUNK):
            G = rng.standard_normal((min(_CHUNK, m - start), x.shape[0]))
            flips += int(np.count_nonzero(sign(G @ x) != sign(G @ s)))
        total += flips / m
    return total / trials


def verify_norm_preservation(x, m: int, eps: float, trials: int, seed: int) -> float:
    """Fraction of fresh Gaussian matrices with ``(1-eps)|x|^2 <= |Ax|^2/m <= (1+eps)|x|^2``."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 < eps < 1:
        raise InvalidArgumentError("eps must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    sq = float(x @ x)
    ok = 0
    for _ in range(trials):
        y = rng.standard_normal((m, x.shape[0])) @ x
        ratio = float(y @ y) / m
        ok += (1 - eps) * sq <= ratio <= (1 + eps) * sq
    return ok / trials


@dataclass
class EpsilonNet:
    """Latent grid whose image under an ``L``-Lipschitz map is a ``delta``-net."""

    points: np.ndarray
    delta: float
    r: float
    lipschitz: float = 1.0

    @property
    def latent_radius(self) -> float:
        return self.delta / self.lipschitz

    @property
    def declared_bound(self) -> float:
        """``k log(4 L r / delta)``, the size bound for an optimal net (context only)."""
        return self.points.shape[1] * math.log(4 * self.lipschitz * self.r / self.delta)

    @property
    def log_cardinality(self) -> float:
        return math.log(len(self.points))

    def covering_radius(self, probes: int = 10_000, seed: int = 0) -> float:
        """Largest probe-to-net distance over uniform probes of the ball."""
        Z = sample_latents(self.points.shape[1], self.r, probes, np.random.default_rng(seed))
        dist, _ = cKDTree(self.points).query(Z)
        return float(dist.max())

    def certify(self, probes: int = 10_000, seed: int = 0) -> bool:
        return self.covering_radius(probes, seed) <= self.latent_radius * (1 + 1e-12)


def build_epsilon_net(k: int, r: float, delta: float, lipschitz: float = 1.0, budget: int = 10**7) -> EpsilonNet:
    """Grid net of the latent ball ``B(r)`` in R^k with covering radius ``delta / lipschitz``.

    Cells of side ``2 rho / sqrt(k)`` (``rho`` the latent covering radius) are
    centred on the lattice through the origin; every cell meeting the ball
    contributes its centre, pulled radially onto the ball when outside it.
    Radial projection onto the ball cannot increase the distance to a ball
    point, so coverage is preserved.
    """
    if k < 1 or not (r > 0 and delta > 0 and lipschitz > 0):
        raise InvalidArgumentError("need k >= 1 and positive r, delta, lipschitz")
    rho = delta / lipschitz
    if rho >= r:
        return EpsilonNet(np.zeros((1, k)), delta, r, lipschitz)
    h = 2 * rho / math.sqrt(k)
    J = int(math.ceil((r + h / 2) / h))
    if (2 * J + 1) ** k > budget:
        raise ResourceLimitError(f"grid of {(2 * J + 1) ** k} cells exceeds budget {budget}")
    axis = np.arange(-J, J + 1) * h
    C = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    gap = np.linalg.norm(np.maximum(np.abs(C) - h / 2, 0.0), axis=1)
    C = C[gap <= r]
    nrm = np.linalg.norm(C, axis=1, keepdims=True)
    C = np.where(nrm > r, C * (r / np.maximum(nrm, 1e-300)), C)
    return EpsilonNet(np.unique(C, axis=0), delta, r, lipschitz)


@dataclass
class NoisyBoundReport:
    trials: int
    violations: int
    eps_hat: float
    solver: str
    ds: List[float] = field(default_factory=list)
    tau1: List[float] = field(default_factory=list)
    tau2: List[float] = field(default_factory=list)

    @property
    def margins(self) -> np.ndarray:
        return self.eps_hat + np.array(self.tau1) + np.array(self.tau2) - np.array(self.ds)

    def to_dict(self) -> dict:
        mg = self.margins
        return {
            "trials": self.trials,
            "violations": self.violations,
            "eps_hat": self.eps_hat,
            "solver": self.solver,
            "mean_tau1": float(np.mean(self.tau1)),
            "mean_tau2": float(np.mean(self.tau2)),
            "mean_ds": float(np.mean(self.ds)),
            "min_margin": float(mg.min()),
            "mean_margin": float(mg.mean()),
        }


def noisy_bound_check(
    model,
    A,
    noise: NoiseSpec,
    solver: str = "pgd1bit",
    params: Optional[dict] = None,
    trials: int = 50,
    seed: int = 0,
    eps_hat: Optional[float] = None,
    bese_pairs: int = 2000,
) -> NoisyBoundReport:
    """Count trials where ``d_S(x, x_hat) > eps_hat + tau1 + tau2``.

    ``tau1`` is the Hamming distance between clean and corrupted signs,
    ``tau2`` the Hamming distance between ``sign(A x_hat)`` and the corrupted
    signs.  ``eps_hat`` defaults to the maximum deviation of a
    :func:`bese_deviation` run on the same model and matrix.
    """
    from .recover import derive_seed, run_solver

    _require_normalized(model)
    a = as_matrix(A)
    if eps_hat is None:
        eps_hat = bese_deviation(model, a, bese_pairs, derive_seed(seed, 0xBE5E)).max_dev
    report = NoisyBoundReport(trials=trials, violations=0, eps_hat=float(eps_hat), solver=solver)
    for t in range(trials):
        rng = np.random.default_rng(derive_seed(seed, t))
        x = model.forward(sample_model_latents(model, 1, rng)[0])
        clean = sign(a @ x)
        b = noisy_sign_measure(a, x, replace(noise, seed=derive_seed(noise.seed, t)))
        res = run_solver(solver, a, b, model, params)
        xh = res.estimate / np.linalg.norm(res.estimate)
        tau1 = hamming_dist(b, clean)
        tau2 = hamming_dist(sign(a @ xh), b)
        ds = geodesic_dist(x, xh)
        report.ds.append(ds)
        report.tau1.append(tau1)
        report.tau2.append(tau2)
        if ds > eps_hat + tau1 + tau2:
            report.violations += 1
    return report
