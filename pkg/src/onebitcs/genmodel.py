"""Generative models mapping a latent ball ``B(r)`` in R^k to R^n.

Every model exposes ``k``, ``n``, ``r``, ``normalized`` (outputs on the unit
sphere), ``forward(z)`` (accepting a single latent or an ``(N, k)`` batch),
``lipschitz()`` and ``in_domain(z)``.  Differentiable models add
``vjp(z, u)``; the group-sparse model instead supplies ``exact_project(y)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DomainViolationError, InvalidArgumentError

__all__ = [
    "GroupSparseModel",
    "FeedForwardModel",
    "NormalizedModel",
    "normalize_model",
    "lipschitz_compose",
    "random_ffnet",
    "save_ffnet",
    "load_ffnet",
    "build_model",
    "sample_latents",
]

_BALL_SLACK = 1e-12


def _check_ball(z: np.ndarray, k: int, r: float) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1:] != (k,):
        raise InvalidArgumentError(f"latent must have length {k}, got shape {z.shape}")
    if np.any(np.linalg.norm(z, axis=-1) > r * (1 + _BALL_SLACK)):
        raise InvalidArgumentError(f"latent outside the ball of radius {r}")
    return z


def sample_latents(k: int, r: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the ``k``-dimensional ball of radius ``r``."""
    g = rng.standard_normal((size, k))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radii = r * rng.random(size) ** (1.0 / k)
    return g * radii[:, None]


@dataclass(frozen=True)
class GroupSparseModel:
    """Piecewise-linear decoder producing k-group-sparse unit vectors.

    The output splits into ``k`` blocks of length ``n // k``.  For the first
    ``k - 1`` blocks, latent coordinate ``z_i`` sweeps ``[-r/sqrt(k), r/sqrt(k)]``
    cut into ``n // k`` sub-intervals of width ``2 r sqrt(k) / n``.  Inside
    sub-interval ``j`` only entry ``j`` of the block is non-zero and traces a
    double triangle: down to ``-x_max`` at the quarter point, back to zero at
    the midpoint, up to ``+x_max`` at the three-quarter point and back to zero.
    Sub-intervals are half-open except the last.  Outside the sweep range the
    block is zero.  The last block is always ``(0, ..., 0, x_c)``.  The
    resulting vector is divided by its norm.
    """

    n: int
    k: int
    r: float = 1.0
    x_max: Optional[float] = None
    x_c: float = 1.0

    normalized = True

    def __post_init__(self):
        if self.k < 1 or self.n < 1 or self.n % self.k:
            raise InvalidArgumentError(f"n={self.n} must be a positive multiple of k={self.k}")
        if self.x_max is None:
            object.__setattr__(self, "x_max", math.sqrt(3.0 / (self.k - 1)) if self.k > 1 else 1.0)
        if not (self.r > 0 and self.x_max > 0 and self.x_c > 0):
            raise InvalidArgumentError("r, x_max and x_c must be positive")

    @property
    def block(self) -> int:
        return self.n // self.k

    @property
    def width(self) -> float:
        """Width of one sub-interval of the latent sweep."""
        return 2.0 * self.r * math.sqrt(self.k) / self.n

    @property
    def ratio(self) -> float:
        return self.x_max / self.x_c

    @property
    def last_floor(self) -> float:
        """Smallest possible last coordinate of an output."""
        return self.x_c / math.sqrt((self.k - 1) * self.x_max**2 + self.x_c**2)

    def lipschitz(self) -> float:
        return 2.0 * self.n * self.x_max / (math.sqrt(self.k) * self.r * self.x_c)

    def in_domain(self, z) -> bool:
        return bool(np.linalg.norm(z) <= self.r * (1 + _BALL_SLACK))

    def pre_forward(self, z) -> np.ndarray:
        """Output before normalization."""
        z = _check_ball(z, self.k, self.r)
        single = z.ndim == 1
        Z = np.atleast_2d(z)
        N = Z.shape[0]
        out = np.zeros((N, self.n))
        out[:, -1] = self.x_c
        L = self.block
        lo = -self.r / math.sqrt(self.k)
        for i in range(self.k - 1):
            t = (Z[:, i] - lo) / self.width
            inside = (t >= 0) & (t <= L)
            j = np.minimum(np.floor(t), L - 1)
            u = t - j
            down = -self.x_max * (1.0 - np.abs(4.0 * u - 1.0))
            up = self.x_max * (1.0 - np.abs(4.0 * u - 3.0))
            val = np.where(u < 0.5, down, up)
            rows = np.nonzero(inside)[0]
            out[rows, i * L + j[rows].astype(int)] = val[rows]
        return out[0] if single else out

    def forward(self, z) -> np.ndarray:
        g = self.pre_forward(z)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def in_range(self, x, tol: float = 1e-9) -> bool:
        """Membership in ``G(B(r))``: unit norm, one non-zero per block, positive
        last entry, and every block magnitude at most ``x_max / x_c`` times it."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,) or abs(np.linalg.norm(x) - 1.0) > tol:
            return False
        L = self.block
        blocks = x.reshape(self.k, L)
        if np.any(np.abs(blocks[-1, :-1]) > tol) or x[-1] <= 0:
            return False
        for i in range(self.k - 1):
            mags = np.abs(blocks[i])
            if np.count_nonzero(mags > tol) > 1:
                return False
            if mags.max() > self.ratio * x[-1] + tol:
                return False
        return True

    def exact_project(self, y):
        """Closest point of the range to ``y`` and a latent that generates it.

        Returns ``(x, z)``.  Raises ``InvalidArgumentError`` for ``y = 0``.
        """
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.n,):
            raise InvalidArgumentError(f"expected a length-{self.n} vector, got shape {y.shape}")
        if not np.any(y):
            raise InvalidArgumentError("cannot project the zero vector")
        L, rho = self.block, self.ratio
        nb = self.k - 1
        blocks = y[: nb * L].reshape(nb, L)
        idx = np.argmax(np.abs(blocks), axis=1)
        a = np.abs(blocks[np.arange(nb), idx])
        sgn = np.where(blocks[np.arange(nb), idx] >= 0, 1.0, -1.0)
        yn = y[-1]

        if yn + rho * a.sum() <= 0:
            # every feasible direction has non-positive correlation with y;
            # the best one puts all free blocks at their bound
            mags = np.full(nb, rho)
            t = 1.0
        else:
            t = _last_coordinate(a, yn, rho)
            mags = np.minimum(a, rho * t)
        x = np.zeros(self.n)
        x[np.arange(nb) * L + idx] = sgn * mags
        x[-1] = t
        x /= np.linalg.norm(x)
        return x, self.latent_of(x)

    def latent_of(self, x) -> np.ndarray:
        """A latent ``z`` with ``forward(z) == x`` for ``x`` in the range."""
        x = np.asarray(x, dtype=np.float64)
        L = self.block
        lo = -self.r / math.sqrt(self.k)
        z = np.zeros(self.k)
        scale = self.x_c / x[-1]
        for i in range(self.k - 1):
            blk = x[i * L : (i + 1) * L]
            j = int(np.argmax(np.abs(blk)))
            v = float(np.clip(blk[j] * scale, -self.x_max, self.x_max))
            if v == 0.0:
                continue
            u = -v / (4 * self.x_max) if v < 0 else 0.5 + v / (4 * self.x_max)
            z[i] = lo + (j + u) * self.width
        return z


def _last_coordinate(a: np.ndarray, yn: float, rho: float) -> float:
    # minimize the convex f(t) = sum((a_i - rho t)_+^2) + (t - yn)^2 over t >= 0;
    # the minimizer is the stationary point of one active set (top-p entries of a)
    # or t = 0, so evaluate every candidate
    order = np.sort(a)[::-1]
    csum = np.concatenate([[0.0], np.cumsum(order)])
    p = np.arange(len(order) + 1)
    cands = np.maximum((yn + rho * csum) / (1.0 + p * rho**2), 0.0)
    f = np.sum(np.maximum(a[None, :] - rho * cands[:, None], 0.0) ** 2, axis=1) + (cands - yn) ** 2
    return float(cands[np.argmin(f)])


_ACTIVATIONS = {
    "identity": (lambda v: v, lambda v, out: np.ones_like(v)),
    "relu": (lambda v: np.maximum(v, 0.0), lambda v, out: (v > 0).astype(np.float64)),
    "sigmoid": (lambda v: 1.0 / (1.0 + np.exp(-v)), lambda v, out: out * (1.0 - out)),
    "tanh": (np.tanh, lambda v, out: 1.0 - out**2),
}


@dataclass(frozen=True, eq=False)
class FeedForwardModel:
    """Fully connected decoder ``z -> act_d(W_d ... act_1(W_1 z + b_1) ... + b_d)``."""

    weights: tuple
    biases: tuple
    activations: tuple
    r: float = 1.0

    normalized = False

    def __post_init__(self):
        W = tuple(np.array(w, dtype=np.float64, ndmin=2) for w in self.weights)
        b = tuple(np.array(v, dtype=np.float64).reshape(-1) for v in self.biases)
        acts = tuple(self.activations)
        if not W or len(W) != len(b) or len(W) != len(acts):
            raise InvalidArgumentError("need one weight matrix, bias and activation per layer")
        for i, (w, v, act) in enumerate(zip(W, b, acts)):
            if act not in _ACTIVATIONS:
                raise InvalidArgumentError(f"unknown activation {act!r}")
            if w.shape[0] != v.shape[0]:
                raise InvalidArgumentError(f"layer {i + 1}: bias length {v.shape[0]} != {w.shape[0]} rows")
            if i and w.shape[1] != W[i - 1].shape[0]:
                raise InvalidArgumentError(f"layer {i + 1}: expects {w.shape[1]} inputs, previous layer gives {W[i - 1].shape[0]}")
        for arr in W + b:
            arr.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "activations", acts)
        if not self.r > 0:
            raise InvalidArgumentError("latent radius must be positive")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def k(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    def in_domain(self, z) -> bool:
        return bool(np.linalg.norm(z) <= self.r * (1 + _BALL_SLACK))

    def _run(self, z):
        h = _check_ball(z, self.k, self.r)
        pre, post = [], []
        for w, v, act in zip(self.weights, self.biases, self.activations):
            a = h @ w.T + v
            h = _ACTIVATIONS[act][0](a)
            pre.append(a)
            post.append(h)
        return pre, post

    def forward(self, z) -> np.ndarray:
        return self._run(z)[1][-1]

    def vjp(self, z, u) -> np.ndarray:
        """``J(z)^T u`` for the Jacobian ``J`` of :meth:`forward`; batched over leading axes."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1:] != (self.n,):
            raise InvalidArgumentError(f"cotangent must have length {self.n}, got shape {u.shape}")
        pre, post = self._run(z)
        g = u
        for i in reversed(range(self.depth)):
            g = g * _ACTIVATIONS[self.activations[i]][1](pre[i], post[i])
            g = g @ self.weights[i]
        return g

    def lipschitz(self) -> float:
        """Product bound ``(w * W_max) ** d`` valid for 1-Lipschitz activations."""
        w = max(self.layer_sizes)
        w_max = max(float(np.abs(W).max()) for W in self.weights)
        return float((w * w_max) ** self.depth)


@dataclass(frozen=True, eq=False)
class NormalizedModel:
    """``inner(z) / ||inner(z)||`` restricted to ``||inner(z)|| > r_min``."""

    inner: object
    r_min: float

    normalized = True

    def __post_init__(self):
        if not self.r_min > 0:
            raise InvalidArgumentError("r_min must be positive")

    k = property(lambda self: self.inner.k)
    n = property(lambda self: self.inner.n)
    r = property(lambda self: self.inner.r)

    def in_domain(self, z) -> bool:
        if not self.inner.in_domain(z):
            return False
        return bool(np.all(np.linalg.norm(self.inner.forward(z), axis=-1) > self.r_min))

    def forward(self, z) -> np.ndarray:
        g = self.inner.forward(z)
        nrm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(nrm <= self.r_min):
            raise DomainViolationError(f"inner output norm {float(nrm.min()):.3g} <= r_min={self.r_min}")
        return g / nrm

    def vjp(self, z, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        x = self.forward(z)
        nrm = np.linalg.norm(self.inner.forward(z), axis=-1, keepdims=True)
        proj = u - x * np.sum(x * u, axis=-1, keepdims=True)
        return self.inner.vjp(z, proj / nrm)

    def lipschitz(self) -> float:
        return self.inner.lipschitz() / self.r_min


def normalize_model(inner, r_min: float) -> NormalizedModel:
    return NormalizedModel(inner, r_min)


def lipschitz_compose(L_f: float, L_g: float) -> float:
    if L_f < 0 or L_g < 0:
        raise InvalidArgumentError("Lipschitz constants must be non-negative")
    return L_f * L_g


def random_ffnet(layer_sizes: Sequence[int], activations, seed: int, scale: float = 1.0, r: float = 1.0) -> FeedForwardModel:
    """Gaussian-initialized network with weight std ``scale / sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    if isinstance(activations, str):
        activations = [activations] * (len(layer_sizes) - 1)
    W, b = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        W.append(rng.standard_normal((fan_out, fan_in)) * scale / math.sqrt(fan_in))
        b.append(rng.standard_normal(fan_out) * 0.1 * scale)
    return FeedForwardModel(tuple(W), tuple(b), tuple(activations), r=r)


FFNET_FORMAT = "onebitcs.ffnet"


def save_ffnet(model: FeedForwardModel, path, binary: bool = True) -> None:
    """Write a weight file.

    With ``binary=True`` the JSON manifest at ``path`` names a sidecar payload
    (``<stem>.bin``) holding, per layer, ``W`` (row-major) then ``b`` as
    little-endian float64.  Otherwise all numbers are inlined in the JSON.
    """
    path = Path(path)
    manifest = {
        "format": FFNET_FORMAT,
        "version": 1,
        "layer_sizes": model.layer_sizes,
        "activations": list(model.activations),
        "latent_radius": model.r,
    }
    if binary:
        payload = path.with_suffix(".bin")
        with open(payload, "wb") as fh:
            for w, v in zip(model.weights, model.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        manifest["payload"] = payload.name
    else:
        manifest["layers"] = [{"weight": w.tolist(), "bias": v.tolist()} for w, v in zip(model.weights, model.biases)]
    path.write_text(json.dumps(manifest, indent=2))


def load_ffnet(path) -> FeedForwardModel:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"cannot read weight manifest {path}: {exc}") from exc
    if manifest.get("format") != FFNET_FORMAT:
        raise InvalidArgumentError(f"{path}: not a {FFNET_FORMAT} manifest")
    acts = manifest["activations"]
    r = float(manifest.get("latent_radius", 1.0))
    if "layers" in manifest:
        W = [layer["weight"] for layer in manifest["layers"]]
        b = [layer["bias"] for layer in manifest["layers"]]
        return FeedForwardModel(tuple(W), tuple(b), tuple(acts), r=r)
    sizes = manifest["layer_sizes"]
    data = np.fromfile(path.parent / manifest["payload"], dtype="<f8")
    expected = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if data.size != expected:
        raise InvalidArgumentError(f"{path}: payload has {data.size} values, expected {expected}")
    W, b, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W.append(data[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in))
        pos += fan_in * fan_out
        b.append(data[pos : pos + fan_out])
        pos += fan_out
    return FeedForwardModel(tuple(W), tuple(b), tuple(acts), r=r)


def build_model(descriptor: str, **params):
    """Build a model from a descriptor: ``"group-sparse"`` or ``"ffnet:<path>"``.

    ``group-sparse`` takes ``n``, ``k`` and optionally ``r``, ``x_max``, ``x_c``.
    ``ffnet`` takes an optional ``r_min``; when given the network is normalized.
    """
    if descriptor == "group-sparse":
        allowed = {"n", "k", "r", "x_max", "x_c"}
        unknown = set(params) - allowed
        if unknown:
            raise InvalidArgumentError(f"unknown group-sparse parameters: {sorted(unknown)}")
        return GroupSparseModel(**params)
    if descriptor.startswith("ffnet:"):
        net = load_ffnet(descriptor[len("ffnet:") :])
        r_min = params.get("r_min")
        return NormalizedModel(net, float(r_min)) if r_min is not None else net
    raise InvalidArgumentError(f"unknown model descriptor {descriptor!r}")
