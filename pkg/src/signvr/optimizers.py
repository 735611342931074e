"""Centralized optimizers: recursive variance-reduced sign descent and baselines.

Two sign methods are implemented here.  ``ssvr_run`` tracks the gradient with
a recursive momentum estimator built from correlated sample pairs and steps
along its sign.  ``ssvr_fs_run`` is the finite-sum variant: it periodically
recomputes the exact full gradient at a snapshot point and adds an
error-correction term that cancels the component-vs-objective mismatch.
``signsgd_run`` / ``signum_run`` / ``sgd_run`` are the reference baselines.

All runs are deterministic given their seed, select the output iterate
uniformly from a dedicated random stream, and record the same metrics schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, sign
from .metrics import MetricsRow
from .oracles import FiniteSumProblem, StochasticGradOracle

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """An iterate left the finite / bounded region; sign steps cannot do this
    under sane step sizes, so tripping it indicates a configuration bug."""


@dataclass
class StormState:
    """Recursive estimator state: current estimate v, previous iterate, step count."""
    v: np.ndarray
    x_prev: np.ndarray
    t: int


@dataclass
class RunResult:
    rows: list
    x_out: np.ndarray          # iterate selected uniformly from {1..T}
    tau_out: int
    x_final: np.ndarray        # x_{T+1}, after the last update
    full_grad_evals: int = 0   # finite-sum runs count their snapshot gradients here
    comm: object = None        # CommLedger for distributed runs


@dataclass
class SsvrConfig:
    T: int
    eta: float
    beta: float
    B0: int = 1
    B1: int = 1
    seed: int = 0
    x0: np.ndarray = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.B0 < 1 or self.B1 < 1:
            raise ValueError(f"batch sizes must be >= 1, got B0={self.B0}, B1={self.B1}")


@dataclass
class SsvrFsConfig:
    T: int
    eta: float
    beta: float
    I: int
    seed: int = 0
    x0: np.ndarray = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.I < 1:
            raise ValueError(f"snapshot period I must be >= 1, got {self.I}")


@dataclass
class BaselineConfig:
    T: int
    eta: float
    batch: int = 1
    momentum: float = 0.0
    seed: int = 0
    x0: np.ndarray = None

    def __post_init__(self):
        if self.T < 1 or self.eta <= 0 or self.batch < 1:
            raise ValueError(f"invalid baseline config T={self.T}, eta={self.eta}, batch={self.batch}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def _initial_point(oracle_dim, x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(oracle_dim)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (oracle_dim,):
        raise ValueError(f"x0 must have shape ({oracle_dim},), got {x0.shape}")
    return x0.copy()


def _guard(x_new, t):
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"non-finite iterate at t={t}")
    worst = float(np.max(np.abs(x_new)))
    if worst > DIVERGENCE_LIMIT:
        raise DivergenceError(f"iterate magnitude {worst:.3e} exceeds {DIVERGENCE_LIMIT:.0e} at t={t}")


def _record(rows, t, oracle_loss, grad, v, envelope_ok=True, bits_up=0, bits_down=0):
    diff = v - grad
    rows.append(MetricsRow(
        t=t, loss=oracle_loss,
        grad_l1=float(np.sum(np.abs(grad))), grad_l2=float(np.linalg.norm(grad)),
        est_err_sq=float(np.dot(diff, diff)),
        bits_up=bits_up, bits_down=bits_down, envelope_ok=envelope_ok,
    ))


def _batch_grad(oracle, x, b, rng) -> np.ndarray:
    if b == 1:
        return oracle.grad_sample(x, rng)
    draws = [oracle.grad_sample(x, rng) for _ in range(b)]
    return np.mean(draws, axis=0)


def storm_update(state: StormState, x_new, oracle: StochasticGradOracle, b1: int, beta: float,
                 rng: RngStream) -> StormState:
    """One recursive-momentum step: v <- g(x_new) + (1 - beta) (v - g(x_prev)).

    Both batch gradients reuse the identical sample draws, which is what makes
    the recursion's correction term cancel the shared noise.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != state.v.shape:
        raise ValueError(f"dim mismatch: x_new {x_new.shape} vs state {state.v.shape}")
    if b1 == 1:
        g_new, g_old = oracle.grad_sample_pair(x_new, state.x_prev, rng)
    else:
        pairs = [oracle.grad_sample_pair(x_new, state.x_prev, rng) for _ in range(b1)]
        g_new = np.mean([p[0] for p in pairs], axis=0)
        g_old = np.mean([p[1] for p in pairs], axis=0)
    v = g_new + (1.0 - beta) * (state.v - g_old)
    return StormState(v=v, x_prev=x_new, t=state.t + 1)


def ssvr_run(oracle: StochasticGradOracle, cfg: SsvrConfig, metrics_every: int = 1) -> RunResult:
    """Sign descent driven by the recursive variance-reduction estimator.

    The first iteration estimates the gradient with a B0-sample batch; later
    iterations apply ``storm_update`` with B1 paired samples.  The update is
    x <- x - eta * sign(v).
    """
    if metrics_every < 1:
        raise ValueError(f"metrics_every must be >= 1, got {metrics_every}")
    rng = RngStream(cfg.seed)
    rng_batch = rng.fork("batch")
    tau = int(rng.fork("output-select").integers(1, cfg.T + 1))

    x = _initial_point(oracle.dim, cfg.x0)
    rows, x_out = [], None
    state = None
    for t in range(1, cfg.T + 1):
        if t == 1:
            v = _batch_grad(oracle, x, cfg.B0, rng_batch)
            state = StormState(v=v, x_prev=x, t=1)
        else:
            state = storm_update(state, x, oracle, cfg.B1, cfg.beta, rng_batch)
        if (t - 1) % metrics_every == 0:
            _record(rows, t, oracle.loss(x), oracle.grad_true(x), state.v)
        if t == tau:
            x_out = x.copy()
        x_new = x - cfg.eta * sign(state.v)
        _guard(x_new, t)
        x = x_new
    return RunResult(rows=rows, x_out=x_out, tau_out=tau, x_final=x)


def fs_estimator_update(v_prev, x_t, x_prev, snapshot_x, snapshot_full_grad, i_t: int,
                        problem: FiniteSumProblem, beta: float) -> np.ndarray:
    """Finite-sum recursive estimator with snapshot error correction.

    v = g_i(x_t) + (1 - beta) (v_prev - g_i(x_prev))
        - beta (g_i(snapshot_x) - full_grad(snapshot_x))

    The last term removes the gap between the sampled component and the full
    objective at the snapshot; at beta = 1 the recursion reduces to the
    classic snapshot-corrected estimator.
    """
    v_prev = np.asarray(v_prev, dtype=np.float64)
    for name, arr in (("x_t", x_t), ("x_prev", x_prev), ("snapshot_x", snapshot_x),
                      ("snapshot_full_grad", snapshot_full_grad)):
        if np.asarray(arr).shape != v_prev.shape:
            raise ValueError(f"dim mismatch: {name} has shape {np.asarray(arr).shape}, "
                             f"expected {v_prev.shape}")
    g_new = problem.component_grad(i_t, x_t)
    g_old = problem.component_grad(i_t, x_prev)
    g_snap = problem.component_grad(i_t, snapshot_x)
    return g_new + (1.0 - beta) * (v_prev - g_old) - beta * (g_snap - snapshot_full_grad)


def ssvr_fs_run(problem: FiniteSumProblem, cfg: SsvrFsConfig, metrics_every: int = 1) -> RunResult:
    """Finite-sum sign descent with periodic exact snapshots.

    A full gradient is computed at t = 1 and then every I iterations (the
    snapshot schedule is t = 1, 1+I, 1+2I, ..., so exactly
    1 + floor((T-1)/I) full-gradient evaluations happen over T iterations).
    The first iteration uses the full gradient itself as the estimator; later
    iterations sample one component uniformly and apply the corrected
    recursion above, then step x <- x - eta * sign(v).
    """
    if metrics_every < 1:
        raise ValueError(f"metrics_every must be >= 1, got {metrics_every}")
    rng = RngStream(cfg.seed)
    rng_comp = rng.fork("component")
    tau = int(rng.fork("output-select").integers(1, cfg.T + 1))

    x = _initial_point(problem.dim, cfg.x0)
    rows, x_out = [], None
    snapshot_x = snapshot_g = None
    full_grad_evals = 0
    v = None
    x_prev = x
    for t in range(1, cfg.T + 1):
        if (t - 1) % cfg.I == 0:
            snapshot_x = x.copy()
            snapshot_g = problem.full_grad(x)
            full_grad_evals += 1
        if t == 1:
            v = snapshot_g
        else:
            i_t = int(rng_comp.integers(problem.m))
            v = fs_estimator_update(v, x, x_prev, snapshot_x, snapshot_g, i_t, problem, cfg.beta)
        if (t - 1) % metrics_every == 0:
            _record(rows, t, problem.loss(x), problem.full_grad(x), v)
        if t == tau:
            x_out = x.copy()
        x_new = x - cfg.eta * sign(v)
        _guard(x_new, t)
        x_prev = x
        x = x_new
    return RunResult(rows=rows, x_out=x_out, tau_out=tau, x_final=x,
                     full_grad_evals=full_grad_evals)


def _baseline_run(oracle, cfg: BaselineConfig, metrics_every, use_sign, momentum) -> RunResult:
    rng = RngStream(cfg.seed)
    rng_batch = rng.fork("batch")
    tau = int(rng.fork("output-select").integers(1, cfg.T + 1))

    x = _initial_point(oracle.dim, cfg.x0)
    rows, x_out = [], None
    m = np.zeros(oracle.dim)
    for t in range(1, cfg.T + 1):
        g = _batch_grad(oracle, x, cfg.batch, rng_batch)
        if momentum > 0:
            m = momentum * m + (1.0 - momentum) * g
            direction = m
        else:
            direction = g
        if (t - 1) % metrics_every == 0:
            _record(rows, t, oracle.loss(x), oracle.grad_true(x), direction)
        if t == tau:
            x_out = x.copy()
        step = sign(direction) if use_sign else direction
        x_new = x - cfg.eta * step
        _guard(x_new, t)
        x = x_new
    return RunResult(rows=rows, x_out=x_out, tau_out=tau, x_final=x)


def signsgd_run(oracle: StochasticGradOracle, cfg: BaselineConfig, metrics_every: int = 1) -> RunResult:
    """x <- x - eta * sign(g) with a fresh stochastic batch gradient each step."""
    return _baseline_run(oracle, cfg, metrics_every, use_sign=True, momentum=0.0)


def signum_run(oracle: StochasticGradOracle, cfg: BaselineConfig, metrics_every: int = 1) -> RunResult:
    """Momentum variant of sign descent: sign of the EMA of stochastic gradients."""
    return _baseline_run(oracle, cfg, metrics_every, use_sign=True, momentum=cfg.momentum)


def sgd_run(oracle: StochasticGradOracle, cfg: BaselineConfig, metrics_every: int = 1) -> RunResult:
    """Plain stochastic gradient descent with the shared metrics schema."""
    return _baseline_run(oracle, cfg, metrics_every, use_sign=False, momentum=0.0)


# ---------------------------------------------------------------------------
# hyperparameter presets
# ---------------------------------------------------------------------------

PRESET_NAMES = ("theorem1", "theorem2", "theorem5", "theorem6")


def preset(name: str, T: int, d: int, m: int = None, scale_constants: float = 1.0, seed: int = 0):
    """Named hyperparameter scaling rules for the centralized methods.

    Every unspecified leading constant defaults to ``scale_constants`` (1.0
    unless overridden); only the exponents are fixed by the rule.

    theorem1: beta = c T^{-2/3}, eta = c d^{-1/2} T^{-2/3}, B0 = ceil(T^{1/3}), B1 = 1
    theorem2: beta = c / m, I = m, eta = c m^{-1/4} d^{-1/2} T^{-1/2}
    theorem5: beta = c d^{1/3} T^{-2/3}, eta = c d^{-1/6} T^{-2/3}, B0 = 1, B1 = ceil(c d)
    theorem6: beta = c / m, I = m, eta = c min(m^{-1/4} d^{-1/2} T^{-1/2}, 1/(m d))
    """
    if T < 1 or d < 1:
        raise ValueError(f"need T >= 1 and d >= 1, got T={T}, d={d}")
    c = float(scale_constants)
    if c <= 0:
        raise ValueError(f"scale_constants must be positive, got {scale_constants}")
    if name == "theorem1":
        return SsvrConfig(
            T=T,
            eta=c * d ** -0.5 * T ** (-2.0 / 3.0),
            beta=min(1.0, c * T ** (-2.0 / 3.0)),
            B0=max(1, math.ceil(T ** (1.0 / 3.0))),
            B1=1,
            seed=seed,
        )
    if name == "theorem5":
        return SsvrConfig(
            T=T,
            eta=c * d ** (-1.0 / 6.0) * T ** (-2.0 / 3.0),
            beta=min(1.0, c * d ** (1.0 / 3.0) * T ** (-2.0 / 3.0)),
            B0=1,
            B1=max(1, math.ceil(c * d)),
            seed=seed,
        )
    if name in ("theorem2", "theorem6"):
        if m is None or m < 1:
            raise ValueError(f"preset {name!r} needs the component count m")
        eta = c * m ** -0.25 * d ** -0.5 * T ** -0.5
        if name == "theorem6":
            eta = c * min(m ** -0.25 * d ** -0.5 * T ** -0.5, 1.0 / (m * d))
        return SsvrFsConfig(T=T, eta=eta, beta=min(1.0, c / m), I=m, seed=seed)
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
