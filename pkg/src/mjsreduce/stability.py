"""Mean-square and uniform stability analysis.

The mean-square side works through the augmented second-moment
propagator: an (s n^2) x (s n^2) block matrix whose (i, j) block is
T(j, i) * kron(A_j, A_j).  Its spectral radius below one is equivalent
to mean-square stability.  The uniform side bounds the joint spectral
radius of the mode matrices by enumerating products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotErgodic, RhoTooSmall, TooLarge, XiTooSmall
from .model import MjsModel, Partition, expand_reduced
from .clustering import ReductionResult

__all__ = [
    "TauEstimate",
    "KappaEstimate",
    "JsrBounds",
    "StabilityReport",
    "StabilityComparison",
    "augmented_matrix",
    "spectral_radius",
    "tau_estimate",
    "jsr_bounds",
    "kappa_estimate",
    "second_moment_evolution",
    "stability_report",
    "stability_comparison",
]

DEFAULT_SIZE_CAP = 4096


@dataclass
class TauEstimate:
    """sup_k ||M^k|| / rho^k over k <= k_max, with the attaining k."""

    value: float
    rho: float
    argmax_k: int
    k_max: int
    unconverged: bool


@dataclass
class KappaEstimate:
    value: float
    xi: float
    argmax_k: int
    k_max: int
    unconverged: bool
    complete: bool


@dataclass
class JsrBounds:
    lower: float
    upper: float
    k_max: int
    levels_completed: int
    complete: bool


def augmented_matrix(model: MjsModel, cap: int = DEFAULT_SIZE_CAP) -> np.ndarray:
    """Second-moment propagator of the autonomous part.

    Block (i, j) equals T(j, i) * kron(A_j, A_j).  Raises TooLarge when
    s * n^2 exceeds the cap.
    """
    s, n = model.s, model.n
    dim = s * n * n
    if dim > cap:
        raise TooLarge(f"augmented matrix would be {dim} x {dim}, cap is {cap}")
    out = np.zeros((dim, dim))
    m = n * n
    for j in range(s):
        K = np.kron(model.A[j], model.A[j])
        for i in range(s):
            if model.T[j, i] != 0.0:
                out[i * m : (i + 1) * m, j * m : (j + 1) * m] = model.T[j, i] * K
    return out


def spectral_radius(M: np.ndarray, cap: int = DEFAULT_SIZE_CAP) -> float:
    M = np.asarray(M)
    if M.shape[0] > cap:
        raise TooLarge(f"matrix is {M.shape[0]} x {M.shape[1]}, cap is {cap}")
    return float(np.abs(np.linalg.eigvals(M)).max()) if M.size else 0.0


def default_level(base: float) -> float:
    """Slightly lifted stability level: 1.01 * base, kept below 1 when
    base is, and floored away from zero."""
    if base <= 0.0:
        return 1e-6
    lifted = 1.01 * base
    if base < 1.0:
        return min(lifted, 0.5 * (1.0 + base))
    return lifted


def tau_estimate(M: np.ndarray, rho: float, k_max: int = 64) -> TauEstimate:
    """Transient growth constant sup_k ||M^k||_2 / rho^k, k = 0..k_max.

    Requires rho >= spectral_radius(M) (RhoTooSmall otherwise; the sup
    would diverge).  The result is flagged unconverged when the argmax
    sits at the sweep horizon.
    """
    M = np.asarray(M, dtype=float)
    sr = spectral_radius(M, cap=M.shape[0])
    if rho < sr - 1e-12:
        raise RhoTooSmall(f"rho = {rho} is below the spectral radius {sr}")
    best, arg = 1.0, 0
    P = np.eye(M.shape[0])
    for k in range(1, k_max + 1):
        P = P @ M
        val = float(np.linalg.norm(P, 2)) / rho**k
        if val > best:
            best, arg = val, k
    return TauEstimate(
        value=best, rho=rho, argmax_k=arg, k_max=k_max, unconverged=arg == k_max
    )


def _prunable(norm_w: float, depth: int, beta: float, lower: float, k_max: int) -> bool:
    # A prefix is useless once no extension can reach the current lower
    # bound at any remaining depth: ||W V|| <= ||W|| beta^(k-d).
    if lower <= 0.0:
        return False
    for k in range(depth + 1, k_max + 1):
        if norm_w * beta ** (k - depth) >= lower**k:
            return False
    return True


def jsr_bounds(A_list, k_max: int = 8, budget: int = 100_000) -> JsrBounds:
    """Bracket the joint spectral radius by product enumeration.

    Level k contributes max rho(W)^{1/k} to the lower bound and
    max ||W||^{1/k} to the upper bound (minimized over levels).
    Prefixes that provably cannot influence either bound are pruned;
    when the product budget runs out the bounds from completed levels
    are returned with complete=False.
    """
    mats = [np.asarray(A, dtype=float) for A in A_list]
    norms = [float(np.linalg.norm(A, 2)) for A in mats]
    beta = max(norms)
    lower = max(spectral_radius(A, cap=A.shape[0]) for A in mats)
    upper = beta
    count = len(mats)
    frontier = [(A, nr) for A, nr in zip(mats, norms)]
    levels = 1
    complete = True
    for k in range(2, k_max + 1):
        frontier = [
            (W, nw)
            for W, nw in frontier
            if not _prunable(nw, k - 1, beta, lower, k_max)
        ]
        need = len(frontier) * len(mats)
        if need == 0:
            break
        if count + need > budget:
            complete = False
            break
        nxt = []
        level_norm = 0.0
        for W, _ in frontier:
            for A in mats:
                V = W @ A
                nv = float(np.linalg.norm(V, 2))
                level_norm = max(level_norm, nv)
                lower = max(lower, spectral_radius(V, cap=V.shape[0]) ** (1.0 / k))
                nxt.append((V, nv))
        count += need
        upper = min(upper, level_norm ** (1.0 / k))
        frontier = nxt
        levels = k
    return JsrBounds(
        lower=lower, upper=upper, k_max=k_max, levels_completed=levels, complete=complete
    )


def kappa_estimate(
    A_list,
    xi: float,
    k_max: int = 12,
    budget: int = 100_000,
    certified_upper: float | None = None,
) -> KappaEstimate:
    """Transient constant sup_k max_{|W|=k} ||W|| / xi^k, k = 0..k_max.

    xi must dominate a certified upper bound on the joint spectral
    radius (XiTooSmall otherwise); pass certified_upper to skip the
    internal jsr_bounds call.  Subtrees that cannot beat the running
    maximum are pruned, so the returned value is exact over the swept
    depths unless the budget aborts the sweep (complete=False).
    """
    mats = [np.asarray(A, dtype=float) for A in A_list]
    if certified_upper is None:
        certified_upper = jsr_bounds(mats, k_max=min(k_max, 6), budget=budget).upper
    if xi < certified_upper - 1e-12:
        raise XiTooSmall(
            f"xi = {xi} is below the certified joint-spectral-radius "
            f"upper bound {certified_upper}"
        )
    norms = [float(np.linalg.norm(A, 2)) for A in mats]
    beta = max(norms)
    best, arg = 1.0, 0
    count = len(mats)
    frontier = list(zip(mats, norms))
    complete = True
    for k in range(1, k_max + 1):
        if k == 1:
            level = frontier
        else:
            keep = []
            for W, nw in frontier:
                ceil_ok = any(
                    nw * beta ** (kk - (k - 1)) / xi**kk > best
                    for kk in range(k, k_max + 1)
                )
                if ceil_ok:
                    keep.append((W, nw))
            need = len(keep) * len(mats)
            if need == 0:
                break
            if count + need > budget:
                complete = False
                break
            level = []
            for W, _ in keep:
                for A in mats:
                    V = W @ A
                    level.append((V, float(np.linalg.norm(V, 2))))
            count += need
        for _, nv in level:
            val = nv / xi**k
            if val > best:
                best, arg = val, k
        frontier = level
    return KappaEstimate(
        value=best,
        xi=xi,
        argmax_k=arg,
        k_max=k_max,
        unconverged=arg == k_max,
        complete=complete,
    )


def second_moment_evolution(
    model: MjsModel, x0, t_max: int, init_dist=None
) -> np.ndarray:
    """Per-mode second moments E[x_t x_t' 1{w_t = i}] for t = 0..t_max.

    Autonomous, noise free.  Returns shape (t_max+1, s, n, n).  Stacking
    the vectorized blocks reproduces powers of the augmented matrix
    acting on the initial stack.
    """
    from .model import stationary_distribution

    x0 = np.asarray(x0, dtype=float)
    if init_dist is None:
        init = stationary_distribution(model.T).pi
    elif np.isscalar(init_dist):
        init = np.zeros(model.s)
        init[int(init_dist)] = 1.0
    else:
        init = np.asarray(init_dist, dtype=float)
    out = np.empty((t_max + 1, model.s, model.n, model.n))
    out[0] = init[:, None, None] * np.outer(x0, x0)
    for t in range(t_max):
        prev = out[t]
        pushed = np.einsum("ijk,ikl,iml->ijm", model.A, prev, model.A)
        out[t + 1] = np.einsum("ij,ikl->jkl", model.T, pushed)
    return out


@dataclass
class StabilityReport:
    rho_aug: float
    is_mss: bool
    rho_used: float
    tau: TauEstimate
    jsr: JsrBounds
    xi_used: float
    kappa: KappaEstimate
    a_bar: float
    b_bar: float
    t_bar: float

    def to_dict(self) -> dict:
        return {
            "rho_aug": self.rho_aug,
            "is_mss": self.is_mss,
            "rho_used": self.rho_used,
            "tau": self.tau.value,
            "tau_argmax_k": self.tau.argmax_k,
            "tau_unconverged": self.tau.unconverged,
            "jsr_lower": self.jsr.lower,
            "jsr_upper": self.jsr.upper,
            "jsr_levels": self.jsr.levels_completed,
            "jsr_complete": self.jsr.complete,
            "xi_used": self.xi_used,
            "kappa": self.kappa.value,
            "kappa_argmax_k": self.kappa.argmax_k,
            "kappa_unconverged": self.kappa.unconverged,
            "a_bar": self.a_bar,
            "b_bar": self.b_bar,
            "t_bar": self.t_bar,
        }


def stability_report(
    model: MjsModel,
    rho: float | None = None,
    xi: float | None = None,
    k_max_tau: int = 64,
    k_max_jsr: int = 8,
    k_max_kappa: int = 12,
    budget: int = 100_000,
    cap: int = DEFAULT_SIZE_CAP,
) -> StabilityReport:
    """All stability diagnostics of one model in a single pass.

    rho defaults to 1.01 * rho_aug (kept below 1 when rho_aug is); the
    same lift applies to xi on top of the certified joint-spectral-
    radius upper bound.
    """
    aug = augmented_matrix(model, cap=cap)
    rho_aug = spectral_radius(aug, cap=cap)
    rho_used = default_level(rho_aug) if rho is None else rho
    tau = tau_estimate(aug, rho_used, k_max=k_max_tau)
    jsr = jsr_bounds(model.A, k_max=k_max_jsr, budget=budget)
    xi_used = default_level(jsr.upper) if xi is None else xi
    kappa = kappa_estimate(
        model.A, xi_used, k_max=k_max_kappa, budget=budget, certified_upper=jsr.upper
    )
    return StabilityReport(
        rho_aug=rho_aug,
        is_mss=rho_aug < 1.0,
        rho_used=rho_used,
        tau=tau,
        jsr=jsr,
        xi_used=xi_used,
        kappa=kappa,
        a_bar=max(float(np.linalg.norm(A, 2)) for A in model.A),
        b_bar=max((float(np.linalg.norm(B, 2)) for B in model.B), default=0.0)
        if model.p
        else 0.0,
        t_bar=float(model.T.max()),
    )


@dataclass
class StabilityComparison:
    report: StabilityReport
    report_reduced: StabilityReport
    eps_rho: float
    rho_gap_forward: float
    rho_gap_reverse: float
    bound_rho_forward: float
    bound_rho_reverse: float
    xi_gap_forward_certified: float
    xi_gap_reverse_certified: float
    bound_xi_forward: float
    bound_xi_reverse: float
    lemma_gap_rho: float

    def to_dict(self) -> dict:
        return {
            "eps_rho": self.eps_rho,
            "rho_gap_forward": self.rho_gap_forward,
            "rho_gap_reverse": self.rho_gap_reverse,
            "bound_rho_forward": self.bound_rho_forward,
            "bound_rho_reverse": self.bound_rho_reverse,
            "xi_gap_forward_certified": self.xi_gap_forward_certified,
            "xi_gap_reverse_certified": self.xi_gap_reverse_certified,
            "bound_xi_forward": self.bound_xi_forward,
            "bound_xi_reverse": self.bound_xi_reverse,
            "lemma_gap_rho": self.lemma_gap_rho,
            "original": self.report.to_dict(),
            "reduced": self.report_reduced.to_dict(),
        }


def stability_comparison(
    model: MjsModel,
    reduction: ReductionResult,
    branch: str | None = None,
    rho: float | None = None,
    rho_hat: float | None = None,
    xi: float | None = None,
    xi_hat: float | None = None,
    cap: int = DEFAULT_SIZE_CAP,
    **sweep_kwargs,
) -> StabilityComparison:
    """Compare stability levels of a model and its reduction.

    Evaluates the two-sided spectral-radius perturbation bounds with
    eps_rho = sqrt(s) ((2 Abar + eps_A) eps_A + Abar^2 eps_T) and the
    analogous joint-spectral-radius bounds with kappa eps_A.  The
    reverse direction uses the transient constants of the expanded
    system (reduced matrices copied over each cluster, transition
    matrix from construct_T0), whose augmented spectral radius agrees
    with the reduced one; lemma_gap_rho records that agreement.
    """
    from .perturbation import construct_T0, perturbations

    branch = branch or reduction.branch
    partition = reduction.partition
    reduced = reduction.reduced
    eps = perturbations(model, partition, branch)
    rep = stability_report(model, rho=rho, xi=xi, cap=cap, **sweep_kwargs)
    rep_hat = stability_report(reduced, rho=rho_hat, xi=xi_hat, cap=cap, **sweep_kwargs)
    eps_rho = float(
        np.sqrt(model.s)
        * ((2.0 * rep.a_bar + eps.eps_A) * eps.eps_A + rep.a_bar**2 * eps.eps_T)
    )
    T_bar = construct_T0(model.T, partition, branch=branch)
    expanded = expand_reduced(reduced, partition, T_bar)
    aug_bar = augmented_matrix(expanded, cap=cap)
    rho_aug_bar = spectral_radius(aug_bar, cap=cap)
    tau_bar = tau_estimate(
        aug_bar, rep_hat.rho_used, k_max=sweep_kwargs.get("k_max_tau", 64)
    )
    kappa_bar = rep_hat.kappa  # expanded mode set equals the reduced one
    return StabilityComparison(
        report=rep,
        report_reduced=rep_hat,
        eps_rho=eps_rho,
        rho_gap_forward=rep_hat.rho_aug - rep.rho_aug,
        rho_gap_reverse=rep.rho_aug - rep_hat.rho_aug,
        bound_rho_forward=rep.tau.value * eps_rho + (rep.rho_used - rep.rho_aug),
        bound_rho_reverse=tau_bar.value * eps_rho
        + (rep_hat.rho_used - rep_hat.rho_aug),
        xi_gap_forward_certified=rep_hat.jsr.lower - rep.jsr.upper,
        xi_gap_reverse_certified=rep.jsr.lower - rep_hat.jsr.upper,
        bound_xi_forward=rep.kappa.value * eps.eps_A + (rep.xi_used - rep.jsr.lower),
        bound_xi_reverse=kappa_bar.value * eps.eps_A
        + (rep_hat.xi_used - rep_hat.jsr.lower),
        lemma_gap_rho=abs(rho_aug_bar - rep_hat.rho_aug),
    )
