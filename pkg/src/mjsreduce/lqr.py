"""Coupled Riccati synthesis and closed-loop cost evaluation.

The infinite-horizon jump LQR solution is the fixed point of the
coupled Riccati map.  With phi_i(X) = sum_j T(i, j) X_j:

    gain_i(X) = -(R + B_i' phi_i(X) B_i)^{-1} B_i' phi_i(X) A_i
    ricc_i(X) = Q + A_i' phi_i(X) A_i
                - A_i' phi_i(X)' B_i (R + B_i' phi_i(X) B_i)^{-1}
                  B_i' phi_i(X) A_i

iterated from X = (Q, ..., Q) until the gains settle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    Diverged,
    NotMss,
    SingularInnerMatrix,
)
from .model import MjsModel, Partition, stationary_distribution
from .clustering import ReductionResult, reduce_model

__all__ = [
    "LqrSolution",
    "CostReport",
    "SuboptimalityResult",
    "riccati_operators",
    "riccati_solve",
    "lift_gains",
    "closed_loop_average_cost",
    "monte_carlo_cost",
    "cumulative_cost_noisefree",
    "reduced_lqr_suboptimality",
]


def _check_qr(model: MjsModel, Q: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Q.shape != (model.n, model.n):
        raise DimensionMismatch(f"Q must be {model.n} x {model.n}, got {Q.shape}")
    if R.shape != (model.p, model.p):
        raise DimensionMismatch(f"R must be {model.p} x {model.p}, got {R.shape}")
    return Q, R


def riccati_operators(
    model: MjsModel, Q, R, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One evaluation of the coupling, gain, and Riccati maps at X.

    X has shape (s, n, n).  Returns (phi, K, ricc) with shapes
    (s, n, n), (s, p, n), (s, n, n).  Raises SingularInnerMatrix when
    some R + B' phi B cannot be inverted.
    """
    Q, R = _check_qr(model, Q, R)
    X = np.asarray(X, dtype=float)
    phi = np.einsum("ij,jkl->ikl", model.T, X)
    s, n, p = model.s, model.n, model.p
    K = np.empty((s, p, n))
    ricc = np.empty((s, n, n))
    for i in range(s):
        A, B, ph = model.A[i], model.B[i], phi[i]
        if p:
            G = R + B.T @ ph @ B
            rhs = B.T @ ph @ A
            try:
                sol = np.linalg.solve(G, rhs)
            except np.linalg.LinAlgError as e:
                raise SingularInnerMatrix(
                    f"inner matrix R + B' phi B singular at mode {i}"
                ) from e
            K[i] = -sol
            ricc[i] = Q + A.T @ ph @ A - A.T @ ph.T @ B @ sol
        else:
            K[i] = np.zeros((0, n))
            ricc[i] = Q + A.T @ ph @ A
    return phi, K, ricc


@dataclass
class LqrSolution:
    P: np.ndarray
    K: np.ndarray
    iterations: int
    final_gain_delta: float
    converged: bool
    p_deltas: list[float] = field(default_factory=list, repr=False)


def riccati_solve(
    model: MjsModel,
    Q,
    R,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    divergence_cap: float = 1e12,
) -> LqrSolution:
    """Fixed point of the coupled Riccati map, started from X = Q.

    Stops when the largest gain change between consecutive iterations
    drops below tol; raises Diverged when any value matrix norm passes
    divergence_cap (e.g. unstabilizable dynamics).
    """
    Q, R = _check_qr(model, Q, R)
    P = np.tile(Q, (model.s, 1, 1))
    K_prev = None
    K = np.zeros((model.s, model.p, model.n))
    # Identically zero inputs leave nothing for the gain test to see;
    # fall back to the value-delta stop so divergence is still caught.
    track_gains = bool(model.p) and bool(np.any(model.B != 0.0))
    p_deltas: list[float] = []
    for h in range(1, max_iter + 1):
        _, K, P_new = riccati_operators(model, Q, R, P)
        P_new = 0.5 * (P_new + P_new.transpose(0, 2, 1))
        p_deltas.append(
            float(max(np.linalg.norm(P_new[i] - P[i]) for i in range(model.s)))
        )
        P = P_new
        if float(max(np.linalg.norm(P[i]) for i in range(model.s))) > divergence_cap:
            raise Diverged(f"value iteration passed {divergence_cap:.0e} at step {h}")
        if track_gains:
            if K_prev is not None:
                delta = float(
                    max(np.linalg.norm(K[i] - K_prev[i], 2) for i in range(model.s))
                )
                if delta < tol:
                    return LqrSolution(
                        P=P,
                        K=K,
                        iterations=h,
                        final_gain_delta=delta,
                        converged=True,
                        p_deltas=p_deltas,
                    )
            K_prev = K
        elif p_deltas[-1] < tol:
            # No gains to track; settle on the value matrices instead.
            return LqrSolution(
                P=P,
                K=K,
                iterations=h,
                final_gain_delta=0.0,
                converged=True,
                p_deltas=p_deltas,
            )
    return LqrSolution(
        P=P,
        K=K,
        iterations=max_iter,
        final_gain_delta=float("nan"),
        converged=False,
        p_deltas=p_deltas,
    )


def lift_gains(K_reduced: np.ndarray, partition: Partition) -> np.ndarray:
    """Copy each cluster's gain to all of its modes: u_t = K_k x_t
    whenever the active mode lies in cluster k."""
    return np.asarray(K_reduced)[partition.labels]


def _closed_loop(model: MjsModel, K: np.ndarray) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.shape != (model.s, model.p, model.n):
        raise DimensionMismatch(
            f"gains must have shape ({model.s}, {model.p}, {model.n}), got {K.shape}"
        )
    return model.A + np.einsum("ijk,ikl->ijl", model.B, K)


@dataclass
class CostReport:
    value: float
    method: str
    sigma_w: float
    stderr: float | None = None
    diverged: bool = False


def closed_loop_average_cost(
    model: MjsModel, K, Q, R, sigma_w: float
) -> CostReport:
    """Stationary per-step cost of u = K x under iid state noise.

    Solves the stationary per-mode second moments of the closed loop
    (fixed point of the moment recursion, to 1e-12) and returns
    sum_i tr((Q + K_i' R K_i) Moment_i).  Raises NotMss when the closed
    loop is not mean-square stable.
    """
    from .stability import augmented_matrix, spectral_radius

    Q, R = _check_qr(model, Q, R)
    Acl = _closed_loop(model, K)
    closed = MjsModel(Acl, None, model.T)
    rho = spectral_radius(augmented_matrix(closed))
    if rho >= 1.0:
        raise NotMss(f"closed loop has augmented spectral radius {rho:.6f}")
    pi = stationary_distribution(model.T).pi
    s, n = model.s, model.n
    mom = np.zeros((s, n, n))
    noise = sigma_w**2 * pi[:, None, None] * np.eye(n)
    for _ in range(1_000_000):
        pushed = np.einsum("ijk,ikl,iml->ijm", Acl, mom, Acl) + noise
        new = np.einsum("ij,ikl->jkl", model.T, pushed)
        gap = float(np.abs(new - mom).max())
        mom = new
        if gap < 1e-12:
            break
    K = np.asarray(K, dtype=float)
    stage = np.tile(Q, (s, 1, 1)) + np.einsum("ikj,kl,ilm->ijm", K, R, K)
    value = float(np.einsum("ijk,ikj->", stage, mom))
    return CostReport(value=value, method="closed_form", sigma_w=sigma_w)


def monte_carlo_cost(
    model: MjsModel,
    K,
    Q,
    R,
    sigma_w: float,
    horizon: int,
    n_traj: int,
    burn_in: int = 0,
    seed=None,
    x0=None,
    blowup: float = 1e8,
) -> CostReport:
    """Empirical average stage cost of u = K x, batched over n_traj runs.

    Averages x' (Q + K' R K) x over steps burn_in..horizon-1 and over
    trajectories; the reported stderr is across trajectory means.  A
    state norm passing `blowup` marks the estimate diverged (inf).
    """
    from .model import _batch_modes

    Q, R = _check_qr(model, Q, R)
    K = np.asarray(K, dtype=float)
    Acl = _closed_loop(model, K)
    stage = np.tile(Q, (model.s, 1, 1)) + np.einsum("ikj,kl,ilm->ijm", K, R, K)
    rng = np.random.default_rng(seed)
    modes = _batch_modes(rng, model, n_traj, horizon, None)
    X = np.tile(
        np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float), (n_traj, 1)
    )
    totals = np.zeros(n_traj)
    kept = 0
    for t in range(horizon):
        if t >= burn_in:
            for i in range(model.s):
                mask = modes[:, t] == i
                if np.any(mask):
                    totals[mask] += np.einsum(
                        "bj,jk,bk->b", X[mask], stage[i], X[mask]
                    )
            kept += 1
        nxt = np.empty_like(X)
        for i in range(model.s):
            mask = modes[:, t] == i
            if np.any(mask):
                nxt[mask] = X[mask] @ Acl[i].T
        X = nxt + sigma_w * rng.standard_normal(X.shape)
        if not np.all(np.isfinite(X)) or np.abs(X).max() > blowup:
            return CostReport(
                value=float("inf"),
                method="monte_carlo",
                sigma_w=sigma_w,
                diverged=True,
            )
    per_traj = totals / max(kept, 1)
    return CostReport(
        value=float(per_traj.mean()),
        method="monte_carlo",
        sigma_w=sigma_w,
        stderr=float(per_traj.std(ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else None,
    )


def cumulative_cost_noisefree(
    model: MjsModel, K, Q, R, x0, init_dist=None
) -> float:
    """Expected total cost sum_t x' (Q + K' R K) x without noise.

    Uses the closed-loop value matrices: the fixed point of
    V_i = Q + K_i' R K_i + Acl_i' phi_i(V) Acl_i, then
    sum_i P(w_0 = i) x0' V_i x0.  Requires the closed loop MSS.
    """
    from .stability import augmented_matrix, spectral_radius

    Q, R = _check_qr(model, Q, R)
    K = np.asarray(K, dtype=float)
    Acl = _closed_loop(model, K)
    closed = MjsModel(Acl, None, model.T)
    rho = spectral_radius(augmented_matrix(closed))
    if rho >= 1.0:
        raise NotMss(f"closed loop has augmented spectral radius {rho:.6f}")
    stage = np.tile(Q, (model.s, 1, 1)) + np.einsum("ikj,kl,ilm->ijm", K, R, K)
    V = np.zeros((model.s, model.n, model.n))
    for _ in range(1_000_000):
        phi = np.einsum("ij,jkl->ikl", model.T, V)
        new = stage + np.einsum("ikj,ikl,ilm->ijm", Acl, phi, Acl)
        gap = float(np.abs(new - V).max())
        V = new
        if gap < 1e-12:
            break
    x0 = np.asarray(x0, dtype=float)
    if init_dist is None:
        init = stationary_distribution(model.T).pi
    elif np.isscalar(init_dist):
        init = np.zeros(model.s)
        init[int(init_dist)] = 1.0
    else:
        init = np.asarray(init_dist, dtype=float)
    return float(sum(init[i] * x0 @ V[i] @ x0 for i in range(model.s)))


@dataclass
class SuboptimalityResult:
    J_star: float
    J_hat: float
    gap: float
    iters_full: int
    iters_reduced: int
    time_full_ms: float
    time_reduced_ms: float
    reduction: ReductionResult

    def to_dict(self) -> dict:
        return {
            "J_star": self.J_star,
            "J_hat": self.J_hat,
            "gap": self.gap,
            "iters_full": self.iters_full,
            "iters_reduced": self.iters_reduced,
            "time_full_ms": self.time_full_ms,
            "time_reduced_ms": self.time_reduced_ms,
        }


def reduced_lqr_suboptimality(
    model: MjsModel,
    r: int,
    Q,
    R,
    sigma_w: float,
    branch: str | None = None,
    seed=None,
    restarts: int = 50,
    weights=None,
    reduction: ReductionResult | None = None,
) -> SuboptimalityResult:
    """Cost of controlling the full system with cluster-level gains.

    Solves the Riccati fixed point for the full system (J_star via the
    stationary closed-form cost) and for the reduced system, lifts the
    reduced gains over the partition, and evaluates their cost J_hat on
    the full system.  Timing covers the Riccati iterations only.
    """
    if reduction is None:
        reduction = reduce_model(
            model, r, branch=branch, seed=seed, restarts=restarts, weights=weights
        )
    n, p = model.n, model.p
    t0 = time.perf_counter()
    sol_hat = riccati_solve(reduction.reduced, Q, R)
    time_reduced = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    sol_full = riccati_solve(model, Q, R)
    time_full = (time.perf_counter() - t0) * 1e3
    K_lift = lift_gains(sol_hat.K, reduction.partition)
    J_star = closed_loop_average_cost(model, sol_full.K, Q, R, sigma_w).value
    J_hat = closed_loop_average_cost(model, K_lift, Q, R, sigma_w).value
    return SuboptimalityResult(
        J_star=J_star,
        J_hat=J_hat,
        gap=J_hat - J_star,
        iters_full=sol_full.iterations,
        iters_reduced=sol_hat.iterations,
        time_full_ms=time_full,
        time_reduced_ms=time_reduced,
        reduction=reduction,
    )
