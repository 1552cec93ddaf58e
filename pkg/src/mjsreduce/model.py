"""Markov jump linear system model, simulation, and JSON I/O.

A system is given by mode matrices A_1..A_s (n x n), input matrices
B_1..B_s (n x p), and a row-stochastic mode transition matrix T (s x s).
The state evolves as x_{t+1} = A[w_t] x_t + B[w_t] u_t where the mode
sequence w_t is a Markov chain driven by T.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InputError,
    NotErgodic,
    PartitionMismatch,
)

__all__ = [
    "MjsModel",
    "Partition",
    "Trajectory",
    "StationaryDistribution",
    "validate_model",
    "is_ergodic",
    "stationary_distribution",
    "simulate",
    "simulate_batch",
    "simulate_coupled",
    "simulate_coupled_batch",
    "expand_reduced",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]


class MjsModel:
    """Immutable container for the matrices (A, B, T) of a jump system.

    Args:
        A: array-like of shape (s, n, n), one square matrix per mode.
        B: array-like of shape (s, n, p), or None for an autonomous
            system (p = 0).
        T: array-like of shape (s, s), the mode transition matrix.

    Shape inconsistencies raise DimensionMismatch.  Value-level problems
    (bad row sums, negative entries, NaN) are reported by
    validate_model, not here.
    """

    def __init__(self, A, B, T) -> None:
        A = np.array(A, dtype=float)
        T = np.array(T, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise DimensionMismatch(
                f"A must have shape (s, n, n), got {A.shape}"
            )
        s, n = A.shape[0], A.shape[1]
        if B is None:
            B = np.zeros((s, n, 0))
        else:
            B = np.array(B, dtype=float)
        if B.ndim != 3 or B.shape[0] != s or B.shape[1] != n:
            raise DimensionMismatch(
                f"B must have shape (s, n, p) = ({s}, {n}, p), got {B.shape}"
            )
        if T.shape != (s, s):
            raise DimensionMismatch(
                f"T must have shape ({s}, {s}), got {T.shape}"
            )
        for M in (A, B, T):
            M.setflags(write=False)
        self.A = A
        self.B = B
        self.T = T

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.B.shape[2]

    def __repr__(self) -> str:
        return f"MjsModel(s={self.s}, n={self.n}, p={self.p})"


class Partition:
    """Disjoint non-empty clusters of the mode set {0, ..., s-1}.

    Clusters are stored sorted, 0-based.  JSON serialization is 1-based
    (see to_lists_1based / from_lists_1based).
    """

    def __init__(self, clusters, s: int | None = None) -> None:
        cleaned = []
        for c in clusters:
            c = tuple(sorted(int(i) for i in c))
            if not c:
                raise PartitionMismatch("empty cluster")
            cleaned.append(c)
        flat = [i for c in cleaned for i in c]
        total = len(flat)
        if s is None:
            s = total
        if sorted(flat) != list(range(s)):
            raise PartitionMismatch(
                f"clusters must partition range({s}) exactly"
            )
        # Canonical order: by smallest member.  Cluster k of a reduced
        # model always refers to position k in this canonical tuple.
        cleaned.sort(key=lambda c: c[0])
        self.clusters: tuple[tuple[int, ...], ...] = tuple(cleaned)
        self.s = s
        labels = np.empty(s, dtype=int)
        for k, c in enumerate(self.clusters):
            labels[list(c)] = k
        labels.setflags(write=False)
        self.labels = labels

    @property
    def r(self) -> int:
        return len(self.clusters)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)

    @property
    def size_largest(self) -> int:
        return max(self.sizes)

    @property
    def size_smallest(self) -> int:
        return min(self.sizes)

    def cluster_of(self, i: int) -> int:
        return int(self.labels[i])

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        labels = np.asarray(labels, dtype=int)
        groups: dict[int, list[int]] = {}
        for i, k in enumerate(labels):
            groups.setdefault(int(k), []).append(i)
        return cls([groups[k] for k in sorted(groups)], s=len(labels))

    @classmethod
    def uniform(cls, s: int, r: int) -> "Partition":
        """Contiguous clusters of equal size; requires r | s."""
        if s % r != 0:
            raise PartitionMismatch(f"uniform partition needs r | s, got s={s}, r={r}")
        w = s // r
        return cls([range(k * w, (k + 1) * w) for k in range(r)], s=s)

    def to_lists_1based(self) -> list[list[int]]:
        return [[i + 1 for i in c] for c in self.clusters]

    @classmethod
    def from_lists_1based(cls, lists, s: int | None = None) -> "Partition":
        return cls([[i - 1 for i in c] for c in lists], s=s)

    def __eq__(self, other) -> bool:
        return isinstance(other, Partition) and self.clusters == other.clusters

    def __hash__(self) -> int:
        return hash(self.clusters)

    def __repr__(self) -> str:
        return f"Partition({list(map(list, self.clusters))})"


@dataclass
class Trajectory:
    """One simulated path: states x_0..x_H, modes w_0..w_{H-1}, inputs u_0..u_{H-1}."""

    states: np.ndarray
    modes: np.ndarray
    inputs: np.ndarray

    def __post_init__(self) -> None:
        H = len(self.modes)
        if self.states.shape[0] != H + 1 or self.inputs.shape[0] != H:
            raise DimensionMismatch(
                "trajectory arrays disagree on horizon: "
                f"states {self.states.shape}, modes {self.modes.shape}, "
                f"inputs {self.inputs.shape}"
            )

    @property
    def horizon(self) -> int:
        return len(self.modes)


@dataclass
class StationaryDistribution:
    pi: np.ndarray
    pi_min: float = field(init=False)
    pi_max: float = field(init=False)

    def __post_init__(self) -> None:
        self.pi = np.asarray(self.pi, dtype=float)
        self.pi_min = float(self.pi.min())
        self.pi_max = float(self.pi.max())


def validate_model(model: MjsModel, tol: float = 1e-9) -> list[str]:
    """Return a list of value-level violations; empty means valid.

    Never raises.  Checks: finite entries, nonnegative T, unit row sums.
    """
    violations: list[str] = []
    for name, M in (("A", model.A), ("B", model.B), ("T", model.T)):
        if not np.all(np.isfinite(M)):
            violations.append(f"{name} contains non-finite entries")
    if np.all(np.isfinite(model.T)):
        if np.any(model.T < -tol):
            i, j = np.argwhere(model.T < -tol)[0]
            violations.append(f"T({i},{j}) = {model.T[i, j]:.6g} is negative")
        sums = model.T.sum(axis=1)
        for i in np.nonzero(np.abs(sums - 1.0) > tol)[0]:
            violations.append(f"T row {i} sums to {sums[i]:.6g}")
    return violations


def is_ergodic(T: np.ndarray, tol: float = 1e-14) -> bool:
    """True iff some power T^m with m <= s^2 is entrywise positive.

    Once a power is positive every higher power stays positive (each row
    of a stochastic matrix has a positive entry), so squaring up to the
    first power of two past s^2 is equivalent to checking every m.
    """
    T = np.asarray(T, dtype=float)
    s = T.shape[0]
    M = T
    m = 1
    while True:
        if np.all(M > tol):
            return True
        if m >= s * s:
            return False
        M = M @ M
        m *= 2


def stationary_distribution(T: np.ndarray) -> StationaryDistribution:
    """Stationary law of an ergodic chain, via the left Perron eigenvector.

    Raises NotErgodic when no power of T up to s^2 is entrywise positive.
    """
    T = np.asarray(T, dtype=float)
    if not is_ergodic(T):
        raise NotErgodic("transition matrix is not ergodic")
    w, V = np.linalg.eig(T.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(V[:, k])
    pi = pi / pi.sum()
    # A couple of power steps scrub residual eigensolver noise.
    for _ in range(2):
        pi = pi @ T
        pi = pi / pi.sum()
    pi = np.maximum(pi, 0.0)
    pi = pi / pi.sum()
    return StationaryDistribution(pi)


def _draw_mode(rng: np.random.Generator, cdf_row: np.ndarray) -> int:
    j = int(np.searchsorted(cdf_row, rng.random(), side="right"))
    return min(j, len(cdf_row) - 1)


def _initial_mode(
    rng: np.random.Generator, model: MjsModel, init_dist
) -> int:
    if init_dist is None:
        pi = stationary_distribution(model.T).pi
    elif np.isscalar(init_dist):
        mode = int(init_dist)
        if not 0 <= mode < model.s:
            raise DimensionMismatch(f"initial mode {mode} outside range({model.s})")
        return mode
    else:
        pi = np.asarray(init_dist, dtype=float)
        if pi.shape != (model.s,):
            raise DimensionMismatch(
                f"initial distribution must have shape ({model.s},), got {pi.shape}"
            )
    cdf = np.cumsum(pi)
    return _draw_mode(rng, cdf / cdf[-1])


def _mode_sequence(
    rng: np.random.Generator, model: MjsModel, horizon: int, init_dist
) -> np.ndarray:
    modes = np.empty(horizon, dtype=int)
    if horizon == 0:
        return modes
    cdf = np.cumsum(model.T, axis=1)
    # Guard against row sums a hair under 1.
    cdf = cdf / cdf[:, -1:]
    modes[0] = _initial_mode(rng, model, init_dist)
    for t in range(1, horizon):
        modes[t] = _draw_mode(rng, cdf[modes[t - 1]])
    return modes


def _input_at(inputs, t: int, x: np.ndarray, mode: int, p: int) -> np.ndarray:
    if inputs is None:
        return np.zeros(p)
    if callable(inputs):
        u = np.asarray(inputs(t, x, mode), dtype=float)
    else:
        u = np.asarray(inputs[t], dtype=float)
    if u.shape != (p,):
        raise DimensionMismatch(f"input at t={t} has shape {u.shape}, expected ({p},)")
    return u


def simulate(
    model: MjsModel,
    x0,
    horizon: int,
    inputs=None,
    noise_std: float = 0.0,
    seed=None,
    init_dist=None,
    modes=None,
) -> Trajectory:
    """Sample one trajectory of the jump system.

    Args:
        model: the system.
        x0: initial state, shape (n,).
        horizon: number of steps H; the trajectory has H+1 states.
        inputs: None (zero input), an (H, p) array of fixed inputs, or a
            callable (t, x, mode) -> u for state feedback.
        noise_std: standard deviation of additive iid Gaussian state noise.
        seed: anything np.random.default_rng accepts.
        init_dist: initial mode distribution; None uses the stationary
            law, an int fixes the mode, a length-s vector gives weights.
        modes: optional injected mode sequence of length H, overriding
            the Markov chain (the rng then only drives noise).

    Returns:
        Trajectory with states (H+1, n), modes (H,), inputs (H, p).
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise DimensionMismatch(f"x0 must have shape ({model.n},), got {x0.shape}")
    rng = np.random.default_rng(seed)
    if modes is None:
        modes = _mode_sequence(rng, model, horizon, init_dist)
    else:
        modes = np.asarray(modes, dtype=int)
        if modes.shape != (horizon,):
            raise DimensionMismatch(
                f"injected mode sequence must have shape ({horizon},), got {modes.shape}"
            )
        if horizon and (modes.min() < 0 or modes.max() >= model.s):
            raise DimensionMismatch("injected mode outside range(s)")
    states = np.empty((horizon + 1, model.n))
    used = np.empty((horizon, model.p))
    states[0] = x0
    x = x0
    for t in range(horizon):
        w = int(modes[t])
        u = _input_at(inputs, t, x, w, model.p)
        used[t] = u
        x = model.A[w] @ x + model.B[w] @ u
        if noise_std > 0.0:
            x = x + noise_std * rng.standard_normal(model.n)
        states[t + 1] = x
    return Trajectory(states=states, modes=modes, inputs=used)


def _batch_modes(
    rng: np.random.Generator,
    model: MjsModel,
    n_traj: int,
    horizon: int,
    init_dist,
) -> np.ndarray:
    modes = np.empty((n_traj, horizon), dtype=int)
    if horizon == 0:
        return modes
    if init_dist is None:
        pi = stationary_distribution(model.T).pi
    elif np.isscalar(init_dist):
        pi = None
        modes[:, 0] = int(init_dist)
    else:
        pi = np.asarray(init_dist, dtype=float)
    if pi is not None:
        cdf0 = np.cumsum(pi)
        cdf0 = cdf0 / cdf0[-1]
        modes[:, 0] = np.minimum(
            np.searchsorted(cdf0, rng.random(n_traj), side="right"), model.s - 1
        )
    cdf = np.cumsum(model.T, axis=1)
    cdf = cdf / cdf[:, -1:]
    for t in range(1, horizon):
        u = rng.random(n_traj)
        rows = cdf[modes[:, t - 1]]
        modes[:, t] = np.minimum((rows < u[:, None]).sum(axis=1), model.s - 1)
    return modes


def simulate_batch(
    model: MjsModel,
    x0,
    horizon: int,
    n_traj: int,
    noise_std: float = 0.0,
    seed=None,
    init_dist=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Many zero-input trajectories at once.

    Returns (states, modes) with shapes (n_traj, H+1, n) and
    (n_traj, H).  Mode paths are drawn column-by-column, states advance
    with one masked matrix product per mode per step.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    modes = _batch_modes(rng, model, n_traj, horizon, init_dist)
    states = np.empty((n_traj, horizon + 1, model.n))
    states[:, 0] = x0
    X = np.tile(x0, (n_traj, 1))
    for t in range(horizon):
        nxt = np.empty_like(X)
        for i in range(model.s):
            mask = modes[:, t] == i
            if np.any(mask):
                nxt[mask] = X[mask] @ model.A[i].T
        if noise_std > 0.0:
            nxt = nxt + noise_std * rng.standard_normal(X.shape)
        X = nxt
        states[:, t + 1] = X
    return states, modes


def simulate_coupled_batch(
    model: MjsModel,
    reduced: MjsModel,
    partition: Partition,
    x0,
    horizon: int,
    n_traj: int,
    noise_std: float = 0.0,
    seed=None,
    init_dist=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched zero-input coupled runs sharing mode paths and noise.

    Returns (states, red_states, modes); state arrays have shape
    (n_traj, H+1, n).
    """
    if partition.s != model.s or partition.r != reduced.s:
        raise PartitionMismatch(
            "partition does not link the two models: "
            f"s={model.s}, r={reduced.s}, partition covers {partition.s} "
            f"in {partition.r} clusters"
        )
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    modes = _batch_modes(rng, model, n_traj, horizon, init_dist)
    states = np.empty((n_traj, horizon + 1, model.n))
    red_states = np.empty_like(states)
    states[:, 0] = x0
    red_states[:, 0] = x0
    X = np.tile(x0, (n_traj, 1))
    Xr = X.copy()
    red_modes = partition.labels[modes] if horizon else modes
    for t in range(horizon):
        nxt = np.empty_like(X)
        nxt_r = np.empty_like(Xr)
        for i in range(model.s):
            mask = modes[:, t] == i
            if np.any(mask):
                nxt[mask] = X[mask] @ model.A[i].T
        for k in range(reduced.s):
            mask = red_modes[:, t] == k
            if np.any(mask):
                nxt_r[mask] = Xr[mask] @ reduced.A[k].T
        if noise_std > 0.0:
            e = noise_std * rng.standard_normal(X.shape)
            nxt = nxt + e
            nxt_r = nxt_r + e
        X, Xr = nxt, nxt_r
        states[:, t + 1] = X
        red_states[:, t + 1] = Xr
    return states, red_states, modes


def simulate_coupled(
    model: MjsModel,
    reduced: MjsModel,
    partition: Partition,
    x0,
    horizon: int,
    inputs=None,
    noise_std: float = 0.0,
    seed=None,
    init_dist=None,
) -> tuple[Trajectory, Trajectory]:
    """Run the original and a reduced system on one shared mode path.

    The original mode sequence w_t is drawn from model.T; the reduced
    system runs on the projected sequence cluster_of(w_t).  Inputs and
    any additive noise are shared between the two systems.
    """
    if partition.s != model.s:
        raise PartitionMismatch(
            f"partition covers {partition.s} modes, model has {model.s}"
        )
    if partition.r != reduced.s:
        raise PartitionMismatch(
            f"partition has {partition.r} clusters, reduced model has {reduced.s} modes"
        )
    if reduced.n != model.n or reduced.p != model.p:
        raise DimensionMismatch("reduced model state/input sizes disagree with model")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise DimensionMismatch(f"x0 must have shape ({model.n},), got {x0.shape}")
    rng = np.random.default_rng(seed)
    modes = _mode_sequence(rng, model, horizon, init_dist)
    red_modes = partition.labels[modes] if horizon else np.empty(0, dtype=int)
    states = np.empty((horizon + 1, model.n))
    red_states = np.empty((horizon + 1, model.n))
    used = np.empty((horizon, model.p))
    states[0] = x0
    red_states[0] = x0
    x, xr = x0, x0
    for t in range(horizon):
        w = int(modes[t])
        k = int(red_modes[t])
        u = _input_at(inputs, t, x, w, model.p)
        used[t] = u
        x = model.A[w] @ x + model.B[w] @ u
        xr = reduced.A[k] @ xr + reduced.B[k] @ u
        if noise_std > 0.0:
            e = noise_std * rng.standard_normal(model.n)
            x = x + e
            xr = xr + e
        states[t + 1] = x
        red_states[t + 1] = xr
    return (
        Trajectory(states=states, modes=modes, inputs=used),
        Trajectory(states=red_states, modes=red_modes, inputs=used),
    )


def expand_reduced(
    reduced: MjsModel, partition: Partition, T_bar: np.ndarray
) -> MjsModel:
    """Lift a reduced system back to the full mode set.

    Every mode in cluster k receives copies of the reduced matrices
    (A_k, B_k); the supplied s x s transition matrix T_bar drives the
    expanded chain.
    """
    if partition.r != reduced.s:
        raise PartitionMismatch(
            f"partition has {partition.r} clusters, reduced model has {reduced.s} modes"
        )
    T_bar = np.asarray(T_bar, dtype=float)
    if T_bar.shape != (partition.s, partition.s):
        raise DimensionMismatch(
            f"T_bar must have shape ({partition.s}, {partition.s}), got {T_bar.shape}"
        )
    labels = partition.labels
    A = reduced.A[labels]
    B = reduced.B[labels]
    return MjsModel(A, B, T_bar)


def model_to_dict(model: MjsModel) -> dict:
    return {
        "n": model.n,
        "p": model.p,
        "s": model.s,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "T": model.T.tolist(),
    }


def model_from_dict(d: dict) -> MjsModel:
    try:
        n, p, s = int(d["n"]), int(d["p"]), int(d["s"])
        A = np.asarray(d["A"], dtype=float)
        # "B": null stands for an all-zero input map of the declared shape.
        B = np.zeros((s, n, p)) if d.get("B") is None else np.asarray(d["B"], dtype=float)
        T = np.asarray(d["T"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed model dictionary: {e}") from e
    if A.shape != (s, n, n) or B.shape != (s, n, p) or T.shape != (s, s):
        raise InputError(
            "model arrays disagree with declared sizes: "
            f"A {A.shape}, B {B.shape}, T {T.shape} for n={n}, p={p}, s={s}"
        )
    model = MjsModel(A, B, T)
    violations = validate_model(model)
    if violations:
        raise InputError("invalid model: " + "; ".join(violations))
    return model


def save_model(model: MjsModel, path) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path) -> MjsModel:
    try:
        with open(path) as f:
            d = json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f"malformed JSON in {path}: {e}") from e
    if not isinstance(d, dict):
        raise InputError(f"model file {path} must hold a JSON object")
    return model_from_dict(d)
