"""Simulated parameter-server protocol with 1-bit sign messages.

Each round, every node advances a per-node recursive gradient estimator,
compresses it to one bit per coordinate, and uplinks it; the server tallies
the votes and broadcasts a single direction back.  Two compression schemes
are implemented:

* Option 1 -- nodes send the randomized unbiased sign of v with radius
  R = 4G (valid because the recursion with beta = 1/2 keeps ||v||_inf <= 4G
  whenever per-sample gradients are G-bounded); the server broadcasts the
  deterministic sign of the vote mean.
* Option 2 -- nodes project v onto the l2 ball of radius G before the
  randomized sign; the server re-randomizes the vote mean with the unit-radius
  unbiased sign, keeping the whole downlink unbiased as well.

The transport is an in-process, ordered, per-round barrier; messages carry
their exact wire bytes so the byte accounting in the ledger is meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .core import BitSignVector, RngStream, project_l2, sign_bit, stochastic_sign
from .metrics import MetricsRow
from .optimizers import RunResult, _guard, _initial_point
from .oracles import NodePartition, StochasticGradOracle

SERVER_NODE_ID = 0xFFFFFFFF
FRAME_BYTES = 16  # round u64 LE + node_id u32 LE + dim u32 LE


class ProtocolError(RuntimeError):
    """A protocol invariant failed (bound violation, bad message set, ...)."""


# ---------------------------------------------------------------------------
# messages and wire formats
# ---------------------------------------------------------------------------

def pack_ternary(signs) -> bytes:
    """Pack {-1, 0, +1} values at 2 bits per coordinate (00=0, 01=+1, 10=-1),
    little-endian within bytes, pad bits zero."""
    signs = np.asarray(signs, dtype=np.int8)
    codes = np.where(signs > 0, 1, np.where(signs < 0, 2, 0)).astype(np.uint8)
    bits = np.zeros(2 * codes.size, dtype=np.uint8)
    bits[0::2] = codes & 1
    bits[1::2] = codes >> 1
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_ternary(payload: bytes, dim: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=2 * dim,
                         bitorder="little")
    codes = bits[0::2] + 2 * bits[1::2]
    if np.any(codes == 3):
        raise ProtocolError("invalid ternary code 0b11 in payload")
    return np.where(codes == 1, 1, np.where(codes == 2, -1, 0)).astype(np.int8)


@dataclass(frozen=True)
class WorkerMessage:
    round: int
    node_id: int
    payload: BitSignVector

    def to_bytes(self) -> bytes:
        return struct.pack("<QII", self.round, self.node_id, self.payload.dim) + self.payload.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "WorkerMessage":
        rnd, node_id, dim = struct.unpack_from("<QII", data)
        body = data[FRAME_BYTES:FRAME_BYTES + (dim + 7) // 8]
        return cls(round=rnd, node_id=node_id, payload=BitSignVector(dim=dim, payload=body))


@dataclass(frozen=True)
class ServerBroadcast:
    round: int
    dim: int
    kind: str        # "bits": strict +/-1 payload; "ternary": 2-bit {-1,0,+1}
    payload: bytes

    def to_signs(self) -> np.ndarray:
        if self.kind == "bits":
            return BitSignVector(dim=self.dim, payload=self.payload).to_signs()
        return unpack_ternary(self.payload, self.dim)

    def to_bytes(self) -> bytes:
        return struct.pack("<QII", self.round, SERVER_NODE_ID, self.dim) + self.payload


# ---------------------------------------------------------------------------
# configuration and communication accounting
# ---------------------------------------------------------------------------

@dataclass
class MvConfig:
    option: int
    n: int
    T: int
    eta: float
    beta: float
    G: float
    tie_mode: str = "ternary"   # server sign at exact vote ties: 0 ("ternary") or +1 ("plus_one")
    seed: int = 0
    x0: np.ndarray = None

    def __post_init__(self):
        if self.option not in (1, 2):
            raise ValueError(f"option must be 1 or 2, got {self.option}")
        if self.n < 1:
            raise ValueError(f"need n >= 1 nodes, got {self.n}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.G <= 0:
            raise ValueError(f"gradient bound G must be positive, got {self.G}")
        if self.tie_mode not in ("ternary", "plus_one"):
            raise ValueError(f"tie_mode must be 'ternary' or 'plus_one', got {self.tie_mode}")

    @property
    def R(self) -> float:
        """Option-1 randomized-sign radius."""
        return 4.0 * self.G


@dataclass
class RoundComm:
    t: int
    up_payload: int      # bytes, summed over the n worker messages
    up_frame: int
    down_payload: int    # bytes, one broadcast per round
    down_frame: int


@dataclass
class CommLedger:
    rounds: list

    def total(self, field: str) -> int:
        return sum(getattr(r, field) for r in self.rounds)


# ---------------------------------------------------------------------------
# node and server steps
# ---------------------------------------------------------------------------

@dataclass
class NodeState:
    node_id: int
    oracle: StochasticGradOracle
    rng: RngStream
    x: np.ndarray                 # replicated decision variable
    v: np.ndarray = None          # per-node gradient estimator
    x_eval: np.ndarray = None     # point where v was last evaluated


def node_step(state: NodeState, x_new, beta: float, rng: RngStream = None) -> NodeState:
    """Advance the node's recursive estimator to the point ``x_new``.

    v <- g(x_new; xi) + (1 - beta) (v - g(x_eval; xi)) with the *same* sample
    xi at both points (batch size 1).  The first call just samples the
    gradient at x_new.
    """
    rng = rng if rng is not None else state.rng
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (state.oracle.dim,):
        raise ValueError(f"dim mismatch: x_new {x_new.shape} vs oracle dim {state.oracle.dim}")
    if state.v is None:
        v = state.oracle.grad_sample(x_new, rng)
    else:
        g_new, g_old = state.oracle.grad_sample_pair(x_new, state.x_eval, rng)
        v = g_new + (1.0 - beta) * (state.v - g_old)
    return replace(state, v=v, x_eval=x_new)


def worker_encode_option1(state: NodeState, G: float, rng: RngStream = None,
                          round_t: int = 0) -> WorkerMessage:
    """Randomized sign of v with radius 4G; a bound violation is a protocol error."""
    rng = rng if rng is not None else state.rng
    radius = 4.0 * G
    vmax = float(np.max(np.abs(state.v)))
    if vmax > radius:
        raise ProtocolError(
            f"node {state.node_id} round {round_t}: ||v||_inf = {vmax!r} exceeds 4G = {radius!r}; "
            f"the estimator left its certified bound (beta/gradient-bound mismatch)"
        )
    return WorkerMessage(round=round_t, node_id=state.node_id,
                         payload=stochastic_sign(state.v, radius, rng))


def worker_encode_option2(state: NodeState, G: float, rng: RngStream = None,
                          round_t: int = 0) -> WorkerMessage:
    """Project v onto the l2 ball of radius G, then take the randomized sign.

    The projection guarantees ||v_hat||_inf <= ||v_hat||_2 <= G, so the sign
    mapping is always valid here.
    """
    rng = rng if rng is not None else state.rng
    v_hat = project_l2(state.v, G)
    return WorkerMessage(round=round_t, node_id=state.node_id,
                         payload=stochastic_sign(v_hat, G, rng))


def server_aggregate(messages, option: int, tie_mode: str = "ternary",
                     rng: RngStream = None, expected_n: int = None) -> ServerBroadcast:
    """Tally one round of worker votes and produce the broadcast direction.

    Option 1 takes the deterministic sign of the vote mean (exact ties give 0
    under ``ternary`` -- costing 2 bits/coordinate downlink -- or +1 under
    ``plus_one``, which keeps the downlink at 1 bit).  Option 2 re-randomizes:
    each coordinate broadcasts +1 with probability (1 + mean)/2, which is
    always a valid probability since the mean of +/-1 votes lies in [-1, 1].
    """
    if not messages:
        raise ProtocolError("no worker messages to aggregate")
    n = len(messages)
    if expected_n is not None and n != expected_n:
        raise ProtocolError(f"expected {expected_n} worker messages, got {n}")
    rounds = {msg.round for msg in messages}
    if len(rounds) != 1:
        raise ProtocolError(f"messages from mixed rounds {sorted(rounds)}")
    ids = sorted(msg.node_id for msg in messages)
    if len(set(ids)) != n:
        raise ProtocolError(f"duplicate node ids in round {rounds.pop()}: {ids}")
    dims = {msg.payload.dim for msg in messages}
    if len(dims) != 1:
        raise ProtocolError(f"messages with mixed dims {sorted(dims)}")
    (dim,) = dims
    round_t = messages[0].round

    ordered = sorted(messages, key=lambda m: m.node_id)
    votes = np.stack([m.payload.to_signs() for m in ordered]).astype(np.float64)
    mean = votes.mean(axis=0)

    if option == 1:
        if tie_mode == "ternary":
            out = np.sign(mean).astype(np.int8)
            return ServerBroadcast(round=round_t, dim=dim, kind="ternary",
                                   payload=pack_ternary(out))
        out = np.where(mean >= 0.0, 1, -1).astype(np.int8)
        return ServerBroadcast(round=round_t, dim=dim, kind="bits",
                               payload=BitSignVector.from_signs(out).payload)
    if option == 2:
        if rng is None:
            raise ValueError("option 2 aggregation needs a random stream")
        bits = stochastic_sign(mean, 1.0, rng)
        return ServerBroadcast(round=round_t, dim=dim, kind="bits", payload=bits.payload)
    raise ValueError(f"option must be 1 or 2, got {option}")


# ---------------------------------------------------------------------------
# full protocol runs
# ---------------------------------------------------------------------------

def _mv_loop(partition: NodePartition, cfg: MvConfig, metrics_every: int,
             deterministic_workers: bool) -> RunResult:
    if cfg.n != partition.n:
        raise ValueError(f"config says n={cfg.n} but partition has {partition.n} nodes")
    if metrics_every < 1:
        raise ValueError(f"metrics_every must be >= 1, got {metrics_every}")
    dim = partition.dim
    rng = RngStream(cfg.seed)
    server_rng = rng.fork("server")
    x0 = _initial_point(dim, cfg.x0)
    nodes = [
        NodeState(node_id=j, oracle=partition.node_oracle(j), rng=rng.fork("node", j),
                  x=x0.copy())
        for j in range(cfg.n)
    ]
    tau = int(rng.fork("output-select").integers(1, cfg.T + 1)) if cfg.T >= 1 else 0

    rows, comm_rounds = [], []
    x_out = x0.copy() if cfg.T == 0 else None
    bits_up = bits_down = 0
    for t in range(1, cfg.T + 1):
        ref = nodes[0].x.tobytes()
        if any(node.x.tobytes() != ref for node in nodes[1:]):
            raise ProtocolError(f"replication broken at round {t}: nodes hold different x")
        x_t = nodes[0].x

        for j, node in enumerate(nodes):
            nodes[j] = node_step(node, node.x, cfg.beta)
        if deterministic_workers:
            messages = [WorkerMessage(round=t, node_id=node.node_id, payload=sign_bit(node.v))
                        for node in nodes]
            broadcast = server_aggregate(messages, option=1, tie_mode=cfg.tie_mode,
                                         expected_n=cfg.n)
        elif cfg.option == 1:
            messages = [worker_encode_option1(node, cfg.G, round_t=t) for node in nodes]
            broadcast = server_aggregate(messages, option=1, tie_mode=cfg.tie_mode,
                                         expected_n=cfg.n)
        else:
            messages = [worker_encode_option2(node, cfg.G, round_t=t) for node in nodes]
            broadcast = server_aggregate(messages, option=2, rng=server_rng,
                                         expected_n=cfg.n)

        up_payload = sum(len(m.payload.payload) for m in messages)
        down_payload = len(broadcast.payload)
        comm_rounds.append(RoundComm(t=t, up_payload=up_payload, up_frame=FRAME_BYTES * cfg.n,
                                     down_payload=down_payload, down_frame=FRAME_BYTES))
        bits_up += 8 * up_payload
        bits_down += 8 * down_payload

        if (t - 1) % metrics_every == 0:
            grad = partition.global_grad_true(x_t)
            err = float(np.mean([
                np.sum((node.v - node.oracle.grad_true(x_t)) ** 2) for node in nodes
            ]))
            rows.append(MetricsRow(
                t=t, loss=partition.global_loss(x_t),
                grad_l1=float(np.sum(np.abs(grad))), grad_l2=float(np.linalg.norm(grad)),
                est_err_sq=err, bits_up=bits_up, bits_down=bits_down,
                envelope_ok=partition.in_envelope(x_t),
            ))
        if t == tau:
            x_out = x_t.copy()

        direction = broadcast.to_signs()
        for j, node in enumerate(nodes):
            x_new = node.x - cfg.eta * direction
            _guard(x_new, t)
            nodes[j] = replace(node, x=x_new)

    return RunResult(rows=rows, x_out=x_out, tau_out=tau, x_final=nodes[0].x,
                     comm=CommLedger(rounds=comm_rounds))


def mv_run(partition: NodePartition, cfg: MvConfig, metrics_every: int = 1) -> RunResult:
    """Run the randomized 1-bit vote protocol (Option 1 or 2 per the config)."""
    return _mv_loop(partition, cfg, metrics_every, deterministic_workers=False)


def baseline_mv_run(partition: NodePartition, cfg: MvConfig, metrics_every: int = 1) -> RunResult:
    """Deterministic double-sign majority vote: workers send the plain sign of
    their estimator and the server signs the vote mean.  Biased; known to
    stall when node gradient signs conflict."""
    return _mv_loop(partition, cfg, metrics_every, deterministic_workers=True)


MV_PRESET_NAMES = ("theorem3", "theorem4")


def preset_mv(name: str, T: int, d: int, n: int, G: float, scale_constants: float = 1.0,
              tie_mode: str = "ternary", seed: int = 0) -> MvConfig:
    """Named hyperparameter rules for the vote protocol.

    theorem3: Option 1, beta = 1/2 (exact; this is what certifies ||v||_inf <= 4G),
              eta = c T^{-1/2} d^{-1/2}
    theorem4: Option 2, beta = c T^{-1/2}, eta = c d^{-1/2} T^{-1/2}
    """
    if T < 1 or d < 1:
        raise ValueError(f"need T >= 1 and d >= 1, got T={T}, d={d}")
    c = float(scale_constants)
    if c <= 0:
        raise ValueError(f"scale_constants must be positive, got {scale_constants}")
    if name == "theorem3":
        return MvConfig(option=1, n=n, T=T, eta=c * T ** -0.5 * d ** -0.5, beta=0.5,
                        G=G, tie_mode=tie_mode, seed=seed)
    if name == "theorem4":
        return MvConfig(option=2, n=n, T=T, eta=c * d ** -0.5 * T ** -0.5,
                        beta=min(1.0, c * T ** -0.5), G=G, tie_mode=tie_mode, seed=seed)
    raise ValueError(f"unknown preset {name!r}; expected one of {MV_PRESET_NAMES}")
