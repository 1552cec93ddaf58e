"""Partition perturbation metrics and the misclustering bound.

All pair sums run over ordered pairs (i, i') within a cluster, so each
unordered pair contributes twice; diagonal terms vanish.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import InfeasibleBlock, SizeMismatch
from .clustering import (
    FeatureMatrix,
    build_features_aggregatable,
    build_features_lumpable,
)
from .model import MjsModel, Partition, stationary_distribution

__all__ = [
    "PerturbationTriple",
    "MrBoundReport",
    "perturbations",
    "averaged_feature_matrix",
    "combine_perturbations",
    "bound_from_constants",
    "mr_bound",
    "construct_T0",
]


@dataclass
class PerturbationTriple:
    eps_A: float
    eps_B: float
    eps_T: float
    branch: str


@dataclass
class MrBoundReport:
    branch: str
    weights: tuple[float, float, float]
    eps: PerturbationTriple
    eps_combined: float
    sigma_r_phibar: float
    threshold_nonzero: float
    threshold_zero: float
    bound_value: float
    applicable: bool
    predicted_mr_zero: bool
    kmeans_eps: float
    gamma1: float | None = None
    gamma2: float | None = None
    gamma3: float | None = None

    def to_dict(self) -> dict:
        return {
            "branch": self.branch,
            "weights": list(self.weights),
            "eps_A": self.eps.eps_A,
            "eps_B": self.eps.eps_B,
            "eps_T": self.eps.eps_T,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "gamma3": self.gamma3,
            "sigma_r_phibar": self.sigma_r_phibar,
            "eps_combined": self.eps_combined,
            "threshold_nonzero": self.threshold_nonzero,
            "threshold_zero": self.threshold_zero,
            "bound_value": self.bound_value,
            "applicable": self.applicable,
            "predicted_mr_zero": self.predicted_mr_zero,
        }


def _pair_sum(values: np.ndarray, partition: Partition, dist) -> float:
    """Sum dist(values[i], values[i']) over ordered within-cluster pairs."""
    total = 0.0
    for ck in partition.clusters:
        idx = list(ck)
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                total += 2.0 * dist(values[idx[a]], values[idx[b]])
    return total


def perturbations(
    model: MjsModel, partition: Partition, branch: str
) -> PerturbationTriple:
    """How far (model, partition) is from exact reducibility.

    eps_A and eps_B sum Frobenius distances between the dynamics of
    within-cluster mode pairs.  eps_T depends on the branch:
    "lumpable" compares cluster-block row sums, "aggregatable" compares
    whole transition rows in the l1 norm.
    """
    if partition.s != model.s:
        raise SizeMismatch(
            f"partition covers {partition.s} modes, model has {model.s}"
        )
    fro = lambda X, Y: float(np.linalg.norm(X - Y))
    eps_A = _pair_sum(model.A, partition, fro)
    eps_B = _pair_sum(model.B, partition, fro) if model.p else 0.0
    if branch == "lumpable":
        # Block-sum profile of each row: G[i, l] = sum_{j in C_l} T(i, j).
        G = np.stack(
            [model.T[:, list(cl)].sum(axis=1) for cl in partition.clusters], axis=1
        )
        eps_T = _pair_sum(G, partition, lambda x, y: float(np.abs(x - y).sum()))
    elif branch == "aggregatable":
        eps_T = _pair_sum(
            model.T, partition, lambda x, y: float(np.abs(x - y).sum())
        )
    else:
        raise SizeMismatch(f"unknown branch {branch!r}")
    return PerturbationTriple(eps_A=eps_A, eps_B=eps_B, eps_T=eps_T, branch=branch)


def averaged_feature_matrix(
    feats: FeatureMatrix | np.ndarray, partition: Partition
) -> tuple[np.ndarray, float]:
    """Replace each feature row by its cluster mean; also return sigma_r.

    sigma_r is the r-th singular value of the averaged matrix, r being
    the number of clusters.
    """
    phi = feats.phi if isinstance(feats, FeatureMatrix) else np.asarray(feats, float)
    if phi.shape[0] != partition.s:
        raise SizeMismatch(
            f"feature matrix has {phi.shape[0]} rows, partition covers {partition.s}"
        )
    phibar = np.empty_like(phi)
    for ck in partition.clusters:
        idx = list(ck)
        phibar[idx] = phi[idx].mean(axis=0)
    sv = np.linalg.svd(phibar, compute_uv=False)
    return phibar, float(sv[partition.r - 1])


def combine_perturbations(
    weights, eps: PerturbationTriple, gamma3: float | None = None
) -> float:
    """Weighted combination feeding the misclustering bound.

    Aggregatable: sqrt(aA^2 eA^2 + aB^2 eB^2 + aT^2 eT^2).  The lumpable
    variant passes gamma3, which multiplies the transition term.
    """
    g = 1.0 if gamma3 is None else gamma3
    wa, wb, wt = weights
    return float(
        np.sqrt(
            (wa * eps.eps_A) ** 2
            + (wb * eps.eps_B) ** 2
            + (wt * g * eps.eps_T) ** 2
        )
    )


def bound_from_constants(
    sigma_r: float, eps_combined: float, kmeans_eps: float = 1.0
) -> float:
    """Misclustering bound 64 (2 + eps) sigma_r^{-2} eps_combined^2."""
    if sigma_r <= 0:
        return float("inf")
    return 64.0 * (2.0 + kmeans_eps) * eps_combined**2 / sigma_r**2


def _chain_constants(
    model: MjsModel, r: int, feats: FeatureMatrix
) -> tuple[float, float, float]:
    """(gamma1, gamma2, gamma3) for the lumpable bound."""
    sd = stationary_distribution(model.T)
    eigs = np.linalg.eigvals(model.T)
    perron = int(np.argmin(np.abs(eigs - 1.0)))
    rest = np.delete(eigs, perron)
    gaps = np.abs(1.0 - rest)
    gamma1 = float(np.sum(1.0 / gaps)) if np.all(gaps > 0) else float("inf")
    sv = np.linalg.svd(feats.H, compute_uv=False)
    tail = sv[r] if r < len(sv) else 0.0
    gamma2 = float(min(sv[r - 1] - tail, 1.0))
    if gamma2 <= 0 or not np.isfinite(gamma1):
        gamma3 = float("inf")
    else:
        gamma3 = float(
            16.0
            * gamma1
            * np.sqrt(r * sd.pi_max)
            * np.linalg.norm(model.T)
            / (gamma2 * sd.pi_min**2)
        )
    return gamma1, gamma2, gamma3


def mr_bound(
    model: MjsModel,
    partition: Partition,
    branch: str,
    kmeans_eps: float = 1.0,
    weights=None,
) -> MrBoundReport:
    """Evaluate the misclustering bound for a given partition.

    The bound is 64 (2 + kmeans_eps) sigma_r^{-2} eps_combined^2, where
    sigma_r is the r-th singular value of the cluster-averaged feature
    matrix.  `applicable` records whether the premises hold: full rank
    of the averaged features and eps_combined at most

        sigma_r sqrt(|C_(r)| + |C_(1)|) / (8 sqrt((2+eps) |C_(1)|))

    with an extra sqrt(s) inside the denominator root on the lumpable
    branch, which additionally needs eps_T <= pi_min / gamma1.
    |C_(1)| and |C_(r)| are the largest and smallest cluster sizes.
    predicted_mr_zero records the stronger premise
    eps_combined <= sigma_r / (8 sqrt((2+eps) |C_(1)|)) under which the
    estimated partition is error free.
    """
    r = partition.r
    if branch == "aggregatable":
        feats = build_features_aggregatable(model, weights)
        g1 = g2 = g3 = None
    elif branch == "lumpable":
        feats = build_features_lumpable(model, r, weights)
        g1, g2, g3 = _chain_constants(model, r, feats)
    else:
        raise SizeMismatch(f"unknown branch {branch!r}")
    eps = perturbations(model, partition, branch)
    eps_combined = combine_perturbations(feats.weights, eps, g3)
    phibar, sigma_r = averaged_feature_matrix(feats, partition)
    big = partition.size_largest
    small = partition.size_smallest
    extra = model.s if branch == "lumpable" else 1.0
    denom = 8.0 * np.sqrt(extra * (2.0 + kmeans_eps) * big)
    threshold_nonzero = sigma_r * np.sqrt(small + big) / denom
    threshold_zero = sigma_r / (8.0 * np.sqrt((2.0 + kmeans_eps) * big))
    applicable = sigma_r > 1e-10 and eps_combined <= threshold_nonzero
    if branch == "lumpable":
        pi_min = stationary_distribution(model.T).pi_min
        applicable = applicable and eps.eps_T <= pi_min / g1
    return MrBoundReport(
        branch=branch,
        weights=feats.weights,
        eps=eps,
        eps_combined=eps_combined,
        sigma_r_phibar=sigma_r,
        threshold_nonzero=float(threshold_nonzero),
        threshold_zero=float(threshold_zero),
        bound_value=bound_from_constants(sigma_r, eps_combined, kmeans_eps),
        applicable=bool(applicable),
        predicted_mr_zero=bool(eps_combined <= threshold_zero),
        kmeans_eps=kmeans_eps,
        gamma1=g1,
        gamma2=g2,
        gamma3=g3,
    )


def _lp_row_adjustment(
    row: np.ndarray, partition: Partition, deficits: np.ndarray, i: int
) -> np.ndarray:
    """Feasibility LP fallback for one row's block adjustment."""
    s = len(row)
    A_eq = np.zeros((partition.r, s))
    for l, cl in enumerate(partition.clusters):
        A_eq[l, list(cl)] = 1.0
    res = scipy.optimize.linprog(
        c=np.zeros(s),
        A_eq=A_eq,
        b_eq=deficits,
        bounds=list(zip(-row, 1.0 - row)),
        method="highs",
    )
    if not res.success:
        raise InfeasibleBlock(f"no feasible adjustment for row {i}")
    return res.x


def construct_T0(
    T: np.ndarray, partition: Partition, eps_T: float | None = None, branch: str = "lumpable"
) -> np.ndarray:
    """A nearby chain whose cluster-block sums are cluster-constant.

    Lumpable branch: within each row i and block C_l, mass is shifted
    toward the cluster-average block sum, proportionally to headroom
    (1 - T(i, j)) when adding and to existing mass when removing; every
    adjusted entry moves in the same direction and stays in [0, 1], and
    rows stay stochastic.  If a block defeats the proportional scheme a
    feasibility LP handles that row; if that also fails InfeasibleBlock
    names the row.

    Aggregatable branch: each row is replaced by its cluster-average row.

    When eps_T is given the result is checked against it in both the
    max-absolute-row-sum and Frobenius norms (InfeasibleBlock on
    violation); by construction the distance never exceeds the measured
    branch perturbation of (T, partition).
    """
    T = np.asarray(T, dtype=float)
    if partition.s != T.shape[0]:
        raise SizeMismatch(
            f"partition covers {partition.s} modes, T is {T.shape[0]} x {T.shape[1]}"
        )
    if branch == "aggregatable":
        T0 = np.empty_like(T)
        for ck in partition.clusters:
            idx = list(ck)
            T0[idx] = T[idx].mean(axis=0)
    elif branch == "lumpable":
        block = np.stack(
            [T[:, list(cl)].sum(axis=1) for cl in partition.clusters], axis=1
        )
        target = np.empty_like(block)
        for ck in partition.clusters:
            idx = list(ck)
            target[idx] = block[idx].mean(axis=0)
        deficits = target - block
        delta = np.zeros_like(T)
        for i in range(T.shape[0]):
            ok = True
            for l, cl in enumerate(partition.clusters):
                idx = list(cl)
                d = deficits[i, l]
                if d == 0.0:
                    continue
                if d > 0:
                    room = 1.0 - T[i, idx]
                    total = room.sum()
                    if total < d - 1e-15:
                        ok = False
                        break
                    delta[i, idx] = d * room / total if total > 0 else 0.0
                else:
                    mass = T[i, idx]
                    total = mass.sum()
                    if total < -d - 1e-15:
                        ok = False
                        break
                    delta[i, idx] = d * mass / total if total > 0 else 0.0
            if not ok:
                delta[i] = _lp_row_adjustment(T[i], partition, deficits[i], i)
        T0 = T + delta
    else:
        raise SizeMismatch(f"unknown branch {branch!r}")
    T0 = np.clip(T0, 0.0, 1.0)
    T0 = T0 / T0.sum(axis=1, keepdims=True)
    if eps_T is not None:
        diff = T0 - T
        inf_norm = float(np.abs(diff).sum(axis=1).max())
        fro_norm = float(np.linalg.norm(diff))
        slack = 1e-9
        if inf_norm > eps_T + slack or fro_norm > eps_T + slack:
            raise InfeasibleBlock(
                f"adjusted chain is {inf_norm:.3e} (max row) / {fro_norm:.3e} "
                f"(Frobenius) away, beyond the budget {eps_T:.3e}"
            )
    return T0
