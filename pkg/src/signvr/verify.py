"""Independent brute-force oracles used by tests and the acceptance suite.

Nothing in this module shares arithmetic with the code it checks: gradients
are re-derived by central differences, vote distributions by exhaustive
enumeration over all 2^n patterns, expectations by Monte-Carlo sampling, and
the snapshot-corrected estimator by a standalone formula.  A bug shared with
the implementation under test would defeat the purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream

MAX_ENUM_NODES = 20


def finite_diff_grad(loss, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        grad[k] = (loss(x + step) - loss(x - step)) / (2.0 * h)
    return grad


def relative_fd_step(x, scale: float = 1e-6) -> float:
    """The step h = scale * (1 + ||x||_inf) used by the gradient checks."""
    return scale * (1.0 + float(np.max(np.abs(x))))


@dataclass
class VoteDistribution:
    """Exact per-coordinate law of the server output: columns are P(-1), P(0), P(+1)."""

    probs: np.ndarray  # shape (d, 3)

    def p_minus(self) -> np.ndarray:
        return self.probs[:, 0]

    def p_zero(self) -> np.ndarray:
        return self.probs[:, 1]

    def p_plus(self) -> np.ndarray:
        return self.probs[:, 2]


def enumerate_vote_distribution(vote_probs, option: int, tie_mode: str = "ternary") -> VoteDistribution:
    """Exact server-output law for n independent +/-1 votes with given P(+1).

    Enumerates all 2^n vote patterns per coordinate and weights each by its
    product probability.  Option 1 applies the deterministic sign of the vote
    mean (ties resolved by tie_mode); option 2 accumulates the conditional
    Bernoulli P(+1 | pattern) = (1 + mean)/2 in closed form.
    """
    table = np.asarray(vote_probs, dtype=np.float64)
    if table.ndim == 1:
        table = table[:, None]
    n, d = table.shape
    if n > MAX_ENUM_NODES:
        raise ValueError(f"enumeration over 2^{n} patterns refused (max n = {MAX_ENUM_NODES})")
    if np.any(table < 0) or np.any(table > 1):
        raise ValueError("vote probabilities must lie in [0, 1]")
    if option not in (1, 2):
        raise ValueError(f"option must be 1 or 2, got {option}")
    if tie_mode not in ("ternary", "plus_one"):
        raise ValueError(f"tie_mode must be 'ternary' or 'plus_one', got {tie_mode}")

    probs = np.zeros((d, 3))
    for pattern in range(2 ** n):
        up = np.array([(pattern >> j) & 1 for j in range(n)], dtype=bool)
        weight = np.prod(np.where(up[:, None], table, 1.0 - table), axis=0)  # shape (d,)
        mean = (2.0 * up.sum() - n) / n
        if option == 1:
            if mean > 0:
                s = 2
            elif mean < 0:
                s = 0
            else:
                s = 1 if tie_mode == "ternary" else 2
            probs[:, s] += weight
        else:
            p_plus = (1.0 + mean) / 2.0
            probs[:, 2] += weight * p_plus
            probs[:, 0] += weight * (1.0 - p_plus)
    return VoteDistribution(probs=probs)


def svrg_reference_estimator(problem, x_t, snapshot_x, i_t: int) -> np.ndarray:
    """Snapshot-corrected component gradient, written straight from its definition:
    g_i(x_t) - g_i(snapshot) + full_grad(snapshot)."""
    if not 0 <= i_t < problem.m:
        raise IndexError(f"component index {i_t} out of range [0, {problem.m})")
    return (problem.component_grad(i_t, x_t)
            - problem.component_grad(i_t, snapshot_x)
            + problem.full_grad(snapshot_x))


def mc_expectation(sampler, N: int, rng: RngStream):
    """Sample mean and per-coordinate standard error over N independent draws.

    ``sampler(rng)`` may return a scalar or a vector; results are float arrays.
    numpy's pairwise summation keeps the mean independent of any later
    parallel partitioning of the draws (up to that fixed reassociation).
    """
    if N < 2:
        raise ValueError(f"need N >= 2 draws, got {N}")
    draws = np.array([np.asarray(sampler(rng), dtype=np.float64) for _ in range(N)])
    mean = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(N)
    return mean, stderr


# ---------------------------------------------------------------------------
# self-contained check suite (surfaced by the CLI `verify` subcommand)
# ---------------------------------------------------------------------------

def run_all_checks(seed: int = 0):
    """Run every oracle cross-check; returns [(name, passed, detail), ...]."""
    from . import core, majority_vote, optimizers, oracles

    results = []

    def check(name, passed, detail=""):
        results.append((name, bool(passed), detail))

    rng = RngStream(seed, ("verify",))

    # Gradient formulas vs central differences, every problem family.
    fd_cases = [
        ("noisy_quadratic", oracles.make_noisy_quadratic(6, 12.0, 0.0, seed=3)),
        ("finite_sum_quadratic", oracles.make_finite_sum_quadratic(5, 7, seed=4)),
        ("nonconvex_logistic", oracles.make_nonconvex_logistic(6, 40, reg_lambda=0.1, seed=5)),
    ]
    for name, prob in fd_cases:
        grad_fn = prob.grad_true if hasattr(prob, "grad_true") else prob.full_grad
        worst = 0.0
        for _ in range(20):
            x = rng.normal(prob.dim) * 2.0
            fd = finite_diff_grad(prob.loss, x, relative_fd_step(x))
            g = grad_fn(x)
            worst = max(worst, float(np.max(np.abs(fd - g)) / (1.0 + np.max(np.abs(g)))))
        check(f"finite-diff gradient: {name}", worst <= 1e-5, f"max rel err {worst:.2e}")

    # Finite-sum consistency: full gradient equals the component mean.
    prob = oracles.make_finite_sum_quadratic(6, 9, seed=6)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(prob.dim)
        mean_g = np.mean([prob.component_grad(i, x) for i in range(prob.m)], axis=0)
        full = prob.full_grad(x)
        worst = max(worst, float(np.max(np.abs(mean_g - full)) / (1.0 + np.max(np.abs(full)))))
    check("finite-sum full gradient = component mean", worst <= 1e-12, f"max rel err {worst:.2e}")

    # Randomized sign unbiasedness at and inside the boundary.
    v = np.array([0.5, -0.25, 0.0])
    N = 200_000
    mean, stderr = mc_expectation(
        lambda r: core.stochastic_sign(v, 1.0, r).to_signs().astype(float), N, rng.fork("s-mc"))
    tol = 4.0 * np.sqrt((1.0 - v ** 2) / N)
    check("randomized sign is unbiased (Monte-Carlo)", bool(np.all(np.abs(mean - v) <= tol)),
          f"max dev {np.max(np.abs(mean - v)):.2e} vs tol {np.min(tol):.2e}")
    edge = core.stochastic_sign(np.array([1.0, -1.0]), 1.0, rng.fork("s-edge")).to_signs()
    check("randomized sign boundary values are deterministic",
          edge[0] == 1 and edge[1] == -1, f"got {edge}")

    # Bit codec round-trips across pad-bit widths.
    ok = True
    for d in list(range(1, 26)) + [255, 256, 257]:
        signs = np.where(rng.fork("codec", d).random(d) < 0.5, -1, 1).astype(np.int8)
        if not np.array_equal(core.BitSignVector.from_signs(signs).to_signs(), signs):
            ok = False
            break
    check("1-bit codec round-trip (dims 1..257)", ok)

    # Snapshot-corrected estimator at beta = 1 vs the reference formula.
    worst = 0.0
    for k in range(200):
        inst = oracles.make_finite_sum_quadratic(4, 5, seed=100 + k)
        r = rng.fork("svrg", k)
        x_t, x_prev, snap = (r.normal(4) for _ in range(3))
        v_prev = r.normal(4)
        i_t = int(r.integers(inst.m))
        ours = optimizers.fs_estimator_update(v_prev, x_t, x_prev, snap, inst.full_grad(snap),
                                              i_t, inst, beta=1.0)
        ref = svrg_reference_estimator(inst, x_t, snap, i_t)
        worst = max(worst, float(np.max(np.abs(ours - ref))))
    check("estimator at beta=1 matches snapshot reference", worst <= 1e-12, f"max dev {worst:.2e}")

    # Vote enumeration: marginals sum to one, pinned 3-node value, MC agreement.
    table = np.array([[0.9], [0.8], [0.3]])
    dist = enumerate_vote_distribution(table, option=1)
    check("vote enumeration marginals sum to 1",
          abs(float(dist.probs.sum()) - 1.0) <= 1e-12)
    check("3-node majority P(+1) = 0.798 (pinned)",
          abs(float(dist.p_plus()[0]) - 0.798) <= 1e-12, f"got {dist.p_plus()[0]!r}")

    agree = True
    detail = ""
    for k in range(10):
        r = rng.fork("vote-mc", k)
        n = int(r.integers(1, 5))
        d = int(r.integers(1, 4))
        option = 1 if k % 2 == 0 else 2
        probs = r.random((n, d))
        exact = enumerate_vote_distribution(probs, option=option)

        def one_round(rr, probs=probs, n=n, d=d, option=option):
            votes = np.where(rr.random((n, d)) < probs, 1, -1).astype(np.int8)
            msgs = [majority_vote.WorkerMessage(round=0, node_id=j,
                                                payload=core.BitSignVector.from_signs(votes[j]))
                    for j in range(n)]
            out = majority_vote.server_aggregate(msgs, option=option, tie_mode="ternary", rng=rr)
            return (out.to_signs() == 1).astype(float)

        mc_mean, mc_err = mc_expectation(one_round, 4000, r.fork("draws"))
        dev = np.abs(mc_mean - exact.p_plus())
        if np.any(dev > 4.0 * (mc_err + 1e-9)):
            agree = False
            detail = f"case {k}: dev {np.max(dev):.3e} vs 4*stderr {np.max(4 * mc_err):.3e}"
            break
    check("server aggregation matches enumeration (Monte-Carlo)", agree, detail)

    return results
