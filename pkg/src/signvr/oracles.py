"""Synthetic objectives with analytic gradients and certified constants.

Every problem here exposes exact gradients in closed form so that the
smoothness constant L, the noise level sigma, and (for node partitions) the
gradient bound G are known by construction instead of assumed.  Randomness
enters only through caller-supplied ``RngStream`` objects; the problem
instances themselves are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import RngStream, as_vector


class StochasticGradOracle:
    """Interface for problems accessed through noisy gradient samples.

    ``grad_sample`` returns one draw whose expectation is ``grad_true``;
    ``grad_sample_pair`` evaluates the *same* draw at two points, which is
    what the recursive variance-reduction estimators need.  ``grad_true`` is
    for metrics only and must never feed an algorithm's update.
    """

    dim: int
    noise_sigma: float
    smoothness_L: float

    def loss(self, x) -> float:
        raise NotImplementedError

    def grad_true(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad_sample(self, x, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def grad_sample_pair(self, x_a, x_b, rng: RngStream):
        """One noise draw evaluated at two points: (grad(x_a; xi), grad(x_b; xi))."""
        raise NotImplementedError


class NoisyQuadratic(StochasticGradOracle):
    """f(x) = 0.5 (x - x*)^T A (x - x*) with diagonal A and additive gradient noise.

    Eigenvalues of A are log-spaced in [1, condition_number].  Noise is
    i.i.d. per coordinate with total variance sigma^2; ``noise_kind`` is
    "gaussian" (unbounded) or "uniform" (bounded, half-width a = sigma*sqrt(3/d),
    same per-coordinate variance sigma^2/d).  The uniform kind gives a finite
    per-sample gradient bound, which the vote protocols with hard infinity-norm
    preconditions require.
    """

    def __init__(self, dim, condition_number=1.0, sigma=0.0, seed=0, noise_kind="gaussian",
                 x_star=None, eigs=None):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if condition_number < 1:
            raise ValueError(f"condition_number must be >= 1, got {condition_number}")
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if noise_kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise_kind {noise_kind!r}")
        self.dim = int(dim)
        self.noise_sigma = float(sigma)
        self.noise_kind = noise_kind
        if eigs is None:
            eigs = np.logspace(0.0, np.log10(condition_number), self.dim)
        self.eigs = np.asarray(eigs, dtype=np.float64)
        if x_star is None:
            x_star = RngStream(seed, ("quadratic-xstar",)).normal(self.dim)
        self.x_star = as_vector(x_star, "x_star")
        self.smoothness_L = float(np.max(self.eigs))
        # Half-width of the uniform noise per coordinate (0 if gaussian/noiseless).
        self.noise_halfwidth = (
            sigma * np.sqrt(3.0 / self.dim) if noise_kind == "uniform" and sigma > 0 else 0.0
        )

    def loss(self, x) -> float:
        z = np.asarray(x, dtype=np.float64) - self.x_star
        return float(0.5 * np.dot(z, self.eigs * z))

    def grad_true(self, x) -> np.ndarray:
        return self.eigs * (np.asarray(x, dtype=np.float64) - self.x_star)

    def _noise(self, rng: RngStream) -> np.ndarray:
        if self.noise_sigma == 0.0:
            return np.zeros(self.dim)
        if self.noise_kind == "gaussian":
            return rng.normal(self.dim) * (self.noise_sigma / np.sqrt(self.dim))
        return rng.uniform(-self.noise_halfwidth, self.noise_halfwidth, self.dim)

    def grad_sample(self, x, rng: RngStream) -> np.ndarray:
        return self.grad_true(x) + self._noise(rng)

    def grad_sample_pair(self, x_a, x_b, rng: RngStream):
        eps = self._noise(rng)
        return self.grad_true(x_a) + eps, self.grad_true(x_b) + eps

    def grad_bound_l2(self, center, rho) -> float:
        """sup of ||grad_true|| over the ball ||x - center|| <= rho."""
        return self.smoothness_L * (rho + float(np.linalg.norm(center - self.x_star)))

    def grad_bound_linf_sample(self, center, rho) -> float:
        """sup of per-sample ||grad(x; xi)||_inf over the same ball (inf if unbounded noise)."""
        if self.noise_sigma > 0 and self.noise_kind == "gaussian":
            return np.inf
        base = self.smoothness_L * (rho + float(np.max(np.abs(center - self.x_star))))
        return base + self.noise_halfwidth


def make_noisy_quadratic(d, condition_number=10.0, sigma=1.0, seed=0,
                         noise_kind="gaussian") -> NoisyQuadratic:
    """Quadratic instance of known minimizer with controllable noise level."""
    return NoisyQuadratic(d, condition_number, sigma, seed, noise_kind)


# ---------------------------------------------------------------------------
# finite-sum problems
# ---------------------------------------------------------------------------

class FiniteSumProblem:
    """Objective f(x) = (1/m) sum_i f_i(x) with exact component and full gradients."""

    dim: int
    m: int
    smoothness_L: float

    def loss(self, x) -> float:
        raise NotImplementedError

    def component_grad(self, i: int, x) -> np.ndarray:
        raise NotImplementedError

    def full_grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def _check_index(self, i: int):
        if not 0 <= i < self.m:
            raise IndexError(f"component index {i} out of range [0, {self.m})")


class FiniteSumQuadratic(FiniteSumProblem):
    """f_i(x) = 0.5 ||B_i x - c_i||^2 with seeded B_i, c_i.

    Component gradients use the precomputed normal-equation form
    H_i x - b_i with H_i = B_i^T B_i, and the full gradient uses the averaged
    H-bar, b-bar, so the m = 1 case collapses to the single component bit for
    bit and the general case never sums per-sample terms at evaluation time.
    """

    def __init__(self, dim, m, seed=0):
        if dim < 1 or m < 1:
            raise ValueError(f"need dim >= 1 and m >= 1, got dim={dim}, m={m}")
        self.dim = int(dim)
        self.m = int(m)
        rng = RngStream(seed, ("finite-sum-quadratic",))
        self.B = rng.normal((self.m, self.dim, self.dim)) / np.sqrt(self.dim)
        self.c = rng.normal((self.m, self.dim))
        self.H = np.einsum("ipk,ipl->ikl", self.B, self.B)
        self.b = np.einsum("ipk,ip->ik", self.B, self.c)
        self.H_bar = self.H.mean(axis=0)
        self.b_bar = self.b.mean(axis=0)

    @cached_property
    def smoothness_L(self) -> float:
        return float(max(np.linalg.eigvalsh(self.H[i])[-1] for i in range(self.m)))

    def loss(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        r = self.B @ x - self.c
        return float(0.5 * np.mean(np.sum(r * r, axis=1)))

    def component_grad(self, i, x) -> np.ndarray:
        self._check_index(i)
        return self.H[i] @ np.asarray(x, dtype=np.float64) - self.b[i]

    def full_grad(self, x) -> np.ndarray:
        return self.H_bar @ np.asarray(x, dtype=np.float64) - self.b_bar


def make_finite_sum_quadratic(d, m, seed=0) -> FiniteSumQuadratic:
    return FiniteSumQuadratic(d, m, seed)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class NonconvexLogistic(FiniteSumProblem):
    """Binary logistic loss plus a smooth nonconvex regularizer.

    f_i(x) = log(1 + exp(-y_i a_i.x)) + reg_lambda * sum_k x_k^2 / (1 + x_k^2)

    Rows a_i are unit-norm, labels come from a seeded linear teacher with a
    small flip fraction so the data is not separable.  The regularizer is
    bounded, smooth, and nonconvex for reg_lambda > 0.
    """

    def __init__(self, dim, n_samples, reg_lambda=0.0, seed=0, label_flip=0.05):
        if dim < 1 or n_samples < 1:
            raise ValueError(f"need dim >= 1 and n_samples >= 1, got {dim}, {n_samples}")
        if reg_lambda < 0:
            raise ValueError(f"reg_lambda must be >= 0, got {reg_lambda}")
        self.dim = int(dim)
        self.m = int(n_samples)
        self.reg_lambda = float(reg_lambda)
        rng = RngStream(seed, ("logistic-data",))
        A = rng.normal((self.m, self.dim))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        w_star = rng.normal(self.dim)
        y = np.where(A @ w_star >= 0.0, 1.0, -1.0)
        flips = rng.random(self.m) < label_flip
        y[flips] *= -1.0
        self.A = A
        self.y = y
        # Each row is unit-norm, so the logistic part is 1/4-smooth per component;
        # |d^2/dz^2 [z^2/(1+z^2)]| <= 2 bounds the regularizer curvature.
        self.smoothness_L = 0.25 + 2.0 * self.reg_lambda

    def _reg_grad(self, x) -> np.ndarray:
        one_plus = 1.0 + x * x
        return self.reg_lambda * 2.0 * x / (one_plus * one_plus)

    def loss(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        margins = self.y * (self.A @ x)
        data = float(np.mean(np.logaddexp(0.0, -margins)))
        reg = self.reg_lambda * float(np.sum(x * x / (1.0 + x * x)))
        return data + reg

    def component_grad(self, i, x) -> np.ndarray:
        self._check_index(i)
        x = np.asarray(x, dtype=np.float64)
        margin = self.y[i] * float(self.A[i] @ x)
        return -self.y[i] * _sigmoid(-margin) * self.A[i] + self._reg_grad(x)

    def full_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        margins = self.y * (self.A @ x)
        weights = self.y * _sigmoid(-margins)
        return -(self.A.T @ weights) / self.m + self._reg_grad(x)


def make_nonconvex_logistic(d, n_samples, reg_lambda=0.0, seed=0) -> NonconvexLogistic:
    return NonconvexLogistic(d, n_samples, reg_lambda, seed)


class FiniteSumStochastic(StochasticGradOracle):
    """View a finite-sum problem as a stochastic oracle by uniform component sampling."""

    def __init__(self, problem: FiniteSumProblem):
        self.problem = problem
        self.dim = problem.dim
        self.noise_sigma = float("nan")  # component-sampling variance is x-dependent
        self.smoothness_L = problem.smoothness_L

    def loss(self, x) -> float:
        return self.problem.loss(x)

    def grad_true(self, x) -> np.ndarray:
        return self.problem.full_grad(x)

    def grad_sample(self, x, rng: RngStream) -> np.ndarray:
        i = int(rng.integers(self.problem.m))
        return self.problem.component_grad(i, x)

    def grad_sample_pair(self, x_a, x_b, rng: RngStream):
        i = int(rng.integers(self.problem.m))
        return self.problem.component_grad(i, x_a), self.problem.component_grad(i, x_b)


# ---------------------------------------------------------------------------
# node partitions for the distributed setting
# ---------------------------------------------------------------------------

@dataclass
class NodePartition:
    """Per-node objectives f_j with the global objective f = (1/n) sum_j f_j.

    Gradient bounds are certified only on the stated envelope ball
    {||x - center||_2 <= rho}: ``bound_g2`` dominates every node's true
    gradient l2 norm there, and ``bound_ginf_sample`` dominates every
    per-sample gradient infinity norm (infinite when noise is unbounded).
    Runs that leave the envelope flag it in metrics instead of aborting.
    """

    nodes: list
    center: np.ndarray
    rho: float
    bound_g2: float
    bound_ginf_sample: float

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.nodes[0].dim

    def node_oracle(self, j: int) -> StochasticGradOracle:
        return self.nodes[j]

    def global_grad_true(self, x) -> np.ndarray:
        return np.mean([node.grad_true(x) for node in self.nodes], axis=0)

    def global_loss(self, x) -> float:
        return float(np.mean([node.loss(x) for node in self.nodes]))

    def in_envelope(self, x) -> bool:
        return float(np.linalg.norm(np.asarray(x) - self.center)) <= self.rho


def partition_heterogeneous(n, d, heterogeneity, seed=0, sigma=0.0, condition_number=1.0,
                            noise_kind="uniform", rho=4.0, offsets=None) -> NodePartition:
    """Build n quadratic node objectives whose minimizers spread with ``heterogeneity``.

    Node j minimizes 0.5 (x - x*_j)^T A (x - x*_j) with a shared diagonal A and
    x*_j = heterogeneity * u_j, where the seeded offsets u_j sum to zero, so
    the global minimizer sits at the origin.  heterogeneity = 0 makes all
    nodes identical (the homogeneous setting).  ``offsets`` pins the u_j
    explicitly for hand-constructed instances.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if heterogeneity < 0:
        raise ValueError(f"heterogeneity must be >= 0, got {heterogeneity}")
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    eigs = np.logspace(0.0, np.log10(condition_number), d)
    if offsets is None:
        if n == 1:
            offsets = np.zeros((1, d))
        else:
            offsets = RngStream(seed, ("partition-offsets",)).normal((n, d))
            offsets -= offsets.mean(axis=0)
    else:
        offsets = np.asarray(offsets, dtype=np.float64)
        if offsets.shape != (n, d):
            raise ValueError(f"offsets must have shape {(n, d)}, got {offsets.shape}")
    center = np.zeros(d)
    nodes = [
        NoisyQuadratic(d, sigma=sigma, noise_kind=noise_kind,
                       x_star=center + heterogeneity * offsets[j], eigs=eigs)
        for j in range(n)
    ]
    bound_g2 = max(node.grad_bound_l2(center, rho) for node in nodes)
    bound_ginf = max(node.grad_bound_linf_sample(center, rho) for node in nodes)
    return NodePartition(nodes=nodes, center=center, rho=rho,
                         bound_g2=bound_g2, bound_ginf_sample=bound_ginf)


def make_sign_conflict_pair(d=2, sigma=0.0, rho=1.5, noise_kind="uniform") -> NodePartition:
    """Two identity-quadratic nodes with opposite minimizers +/- e1.

    The global minimizer is the origin, where the node gradients are -e1 and
    +e1: their signs conflict on the first coordinate, which stalls the
    deterministic double-sign vote while the randomized protocols keep moving.
    """
    e1 = np.zeros(d)
    e1[0] = 1.0
    return partition_heterogeneous(
        n=2, d=d, heterogeneity=1.0, sigma=sigma, condition_number=1.0,
        noise_kind=noise_kind, rho=rho, offsets=np.stack([e1, -e1]),
    )
