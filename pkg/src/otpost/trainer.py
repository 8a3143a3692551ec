"""Stochastic optimization of transport maps.

Training maximizes the Monte Carlo KL objective (mean of per-sample
``log pi~(T(x)) + log det J_T(x)``) with ADAM. Convergence is monitored
through the batch variance of the density-matching residual
``objective - log mu(x)``, which is constant (zero variance) at the exact
transport map. Sinkhorn-divergence pretraining against target draws
provides initialization for multimodal targets.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .potential import (
    AffineMap,
    MaxPotentialMap,
    objective_batch,
    param_grad_detail,
    smooth_batch,
    smooth_param_grads,
)
from .rng import stream
from .samples import SampleMatrix
from .target import LOG_2PI, TargetDensity

__all__ = [
    "SinkhornConfig",
    "StopConfig",
    "TrainConfig",
    "TrainReport",
    "Adam",
    "mc_objective",
    "sinkhorn_divergence",
    "init_by_sinkhorn",
    "train",
    "train_affine",
    "train_mixed",
    "SinkhornNonConvergence",
]


class SinkhornNonConvergence(RuntimeError):
    def __init__(self, violation: float):
        super().__init__(f"sinkhorn iterations did not converge; marginal violation {violation:.3e}")
        self.violation = violation


@dataclass
class SinkhornConfig:
    n_target_samples: int = 512
    epsilon: float | None = None  # None -> 0.05 x median pairwise squared distance
    iters: int = 5000
    tol: float = 1e-4  # marginal tolerance during initialization only
    init_steps: int = 200


@dataclass
class StopConfig:
    window: int = 20
    variance_tol: float = 0.0  # 0 disables variance stopping
    patience: int = 5


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_iters: int = 2000
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    gamma_sharp: float = 10.0
    sinkhorn: SinkhornConfig | None = None
    stop: StopConfig = field(default_factory=StopConfig)
    jitter: float | None = None

    def __post_init__(self):
        b1, b2 = self.adam_betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError("adam_betas must lie in (0, 1)")
        if self.batch_size < 1 or self.max_iters < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")

    def to_json(self) -> str:
        doc = {
            "batch_size": self.batch_size,
            "max_iters": self.max_iters,
            "learning_rate": self.learning_rate,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "gamma_sharp": self.gamma_sharp,
            "sinkhorn": None
            if self.sinkhorn is None
            else vars(self.sinkhorn),
            "stop": vars(self.stop),
            "jitter": self.jitter,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        doc = json.loads(text)
        sk = doc.get("sinkhorn")
        st = doc.get("stop") or {}
        return cls(
            batch_size=doc.get("batch_size", 128),
            max_iters=doc.get("max_iters", 2000),
            learning_rate=doc.get("learning_rate", 1e-3),
            adam_betas=tuple(doc.get("adam_betas", (0.9, 0.999))),
            adam_eps=doc.get("adam_eps", 1e-8),
            seed=doc.get("seed", 0),
            gamma_sharp=doc.get("gamma_sharp", 10.0),
            sinkhorn=None if sk is None else SinkhornConfig(**sk),
            stop=StopConfig(**st),
            jitter=doc.get("jitter"),
        )


@dataclass
class TrainReport:
    objective_trace: list[float] = field(default_factory=list)
    variance_trace: list[float] = field(default_factory=list)
    skipped_singular: int = 0
    final_iter: int = 0
    wall_time_seconds: float = 0.0
    aborted: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "objective_trace": self.objective_trace,
                "variance_trace": self.variance_trace,
                "skipped_singular": self.skipped_singular,
                "final_iter": self.final_iter,
                "wall_time_seconds": self.wall_time_seconds,
                "aborted": self.aborted,
            },
            indent=2,
        )


class Adam(object):
    """Adaptive-moment estimation with bias correction."""

    def __init__(self, n_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Return the parameter increment for a descent step on ``grad``."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def mc_objective(map, target: TargetDensity, batch) -> float:
    """Batch mean of the per-sample objective (larger is better)."""
    X = batch.data if isinstance(batch, SampleMatrix) else np.asarray(batch, dtype=float)
    vals, ok = objective_batch(map, target, X)
    if not np.any(ok):
        raise RuntimeError("all batch points had a singular Jacobian")
    return float(np.mean(vals[ok]))


# ---------------------------------------------------------------------------
# Sinkhorn divergence


def median_sq_dist(A: np.ndarray, B: np.ndarray) -> float:
    C = _sq_dists(A, B)
    return float(np.median(C))


def _sq_dists(A, B):
    return (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )


def _ot_entropic(A, B, epsilon, iters, tol=1e-6):
    """Entropic OT value (dual) and coupling for uniform weights.

    Returns (value, coupling, marginal violation).
    """
    n, m = A.shape[0], B.shape[0]
    C = _sq_dists(A, B)
    f = np.zeros(n)
    g = np.zeros(m)
    loga = -np.log(n)
    logb = -np.log(m)
    for _ in range(iters):
        # f-update: f_i = -eps logsumexp_j[(g_j - C_ij)/eps + log b_j]
        M = (g[None, :] - C) / epsilon + logb
        mx = M.max(axis=1, keepdims=True)
        f = -epsilon * (mx[:, 0] + np.log(np.sum(np.exp(M - mx), axis=1)))
        M = (f[:, None] - C) / epsilon + loga
        mx = M.max(axis=0, keepdims=True)
        g = -epsilon * (mx[0] + np.log(np.sum(np.exp(M - mx), axis=0)))
        logP = loga + logb + (f[:, None] + g[None, :] - C) / epsilon
        P = np.exp(logP)
        viol = max(
            np.abs(P.sum(axis=1) - 1.0 / n).max(),
            np.abs(P.sum(axis=0) - 1.0 / m).max(),
        )
        if viol <= tol:
            break
    value = float(np.mean(f) + np.mean(g))
    return value, P, viol


def sinkhorn_divergence(A, B, epsilon: float, iters: int = 5000, tol: float = 1e-6):
    """Debiased entropic OT divergence and its gradient w.r.t. A's points.

    S(A,B) = OT_eps(A,B) - OT_eps(A,A)/2 - OT_eps(B,B)/2 on uniform weights
    and squared Euclidean cost. The gradient uses the converged couplings
    (envelope theorem on the dual value).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v_ab, P_ab, viol1 = _ot_entropic(A, B, epsilon, iters, tol)
    v_aa, P_aa, viol2 = _ot_entropic(A, A, epsilon, iters, tol)
    v_bb, _, viol3 = _ot_entropic(B, B, epsilon, iters, tol)
    worst = max(viol1, viol2, viol3)
    if worst > tol:
        raise SinkhornNonConvergence(worst)
    value = v_ab - 0.5 * v_aa - 0.5 * v_bb
    return value, _divergence_grad_from(A, B, P_ab, P_aa)


def _divergence_grad_from(A, B, P_ab, P_aa):
    # d/dA_i <P, C>: cross term minus the (doubled, symmetric) self term
    grad = 2.0 * (P_ab.sum(axis=1)[:, None] * A - P_ab @ B)
    grad -= 2.0 * (P_aa.sum(axis=1)[:, None] * A - P_aa @ A)
    return grad


def _divergence_grad(A, B, epsilon, iters, tol):
    """Gradient of the divergence w.r.t. A only; skips the B-B solve,
    which is constant in A."""
    _, P_ab, viol1 = _ot_entropic(A, B, epsilon, iters, tol)
    _, P_aa, viol2 = _ot_entropic(A, A, epsilon, iters, tol)
    worst = max(viol1, viol2)
    if worst > tol:
        raise SinkhornNonConvergence(worst)
    return _divergence_grad_from(A, B, P_ab, P_aa)


def _map_apply_smooth(map, X):
    if isinstance(map, AffineMap):
        return map.apply(X)
    value, _, _, _ = smooth_batch(map, X)
    return value


def _affine_theta(map: AffineMap):
    p = map.dim
    C = map.chol_factor
    off = C[np.tril_indices(p, -1)]
    return np.concatenate([map.m, off, np.log(np.diag(C))])


def _affine_from_theta(theta, p, n_scale):
    m = theta[:p]
    n_off = p * (p - 1) // 2
    C = np.zeros((p, p))
    C[np.tril_indices(p, -1)] = theta[p : p + n_off]
    C[np.diag_indices(p)] = np.exp(theta[p + n_off :])
    return AffineMap(m=m.copy(), chol_factor=C, n_scale=n_scale)


def _affine_value_vjp(map: AffineMap, X, G):
    """Gradient of sum_b <G_b, T(x_b)> w.r.t. (m, offdiag, logdiag)."""
    p = map.dim
    gm = G.sum(axis=0)
    gC = map.scale * G.T @ X  # (p, p) full; keep lower triangle
    goff = gC[np.tril_indices(p, -1)]
    gdiag = np.diag(gC) * np.diag(map.chol_factor)
    return np.concatenate([gm, goff, gdiag])


def init_by_sinkhorn(map, target_samples, config: TrainConfig):
    """Pretrain map parameters by minimizing the Sinkhorn divergence.

    ``target_samples`` are (approximate) draws from the target; accuracy
    requirements are mild since this only initializes the KL training.
    """
    sk = config.sinkhorn or SinkhornConfig()
    if sk.init_steps <= 0:
        return map
    Y = target_samples.data if isinstance(target_samples, SampleMatrix) else np.asarray(target_samples, dtype=float)
    p = map.dim
    n = Y.shape[0]
    if isinstance(map, MaxPotentialMap):
        theta = map.flat_params()
        rebuild = lambda th: map.with_flat_params(th)
    else:
        theta = _affine_theta(map)
        rebuild = lambda th: _affine_from_theta(th, p, map.n_scale)
    opt = Adam(theta.size, lr=config.learning_rate * 10, betas=config.adam_betas, eps=config.adam_eps)
    epsilon = sk.epsilon
    cur = map
    for t in range(sk.init_steps):
        X = stream(config.seed, 7, t).standard_normal((n, p))
        A = _map_apply_smooth(cur, X)
        if epsilon is None:
            epsilon = 0.05 * median_sq_dist(A, Y)
        gA = _divergence_grad(A, Y, epsilon, sk.iters, sk.tol)
        if isinstance(cur, MaxPotentialMap):
            grad = smooth_param_grads(cur, X, gA).sum(axis=0)
        else:
            grad = _affine_value_vjp(cur, X, gA)
        theta = theta + opt.step(grad)
        cur = rebuild(theta)
    return cur


# ---------------------------------------------------------------------------
# training loops


def _reference_logpdf(X):
    return -0.5 * np.sum(X * X, axis=1) - 0.5 * X.shape[1] * LOG_2PI


def _variance_stop(variance_trace, stop: StopConfig, streak: int):
    if stop.variance_tol <= 0 or len(variance_trace) < stop.window:
        return 0, False
    recent = np.mean(variance_trace[-stop.window :])
    streak = streak + 1 if recent < stop.variance_tol else 0
    return streak, streak >= stop.patience


def _run_adam(theta, grad_fn, config: TrainConfig):
    """Shared ascent loop: grad_fn(theta, X) -> (grad, per-sample objectives, skipped)."""
    report = TrainReport()
    opt = Adam(theta.size, config.learning_rate, config.adam_betas, config.adam_eps)
    streak = 0
    t0 = time.perf_counter()
    for t in range(config.max_iters):
        X = stream(config.seed, t).standard_normal((config.batch_size, theta_dim(grad_fn)))
        grad, objs, skipped = grad_fn(theta, X)
        finite = np.isfinite(objs)
        obj = float(np.mean(objs[finite])) if np.any(finite) else np.nan
        residual = objs[finite] - _reference_logpdf(X[finite])
        var = float(np.var(residual)) if residual.size else np.nan
        report.objective_trace.append(obj)
        report.variance_trace.append(var)
        report.skipped_singular += skipped
        if not np.isfinite(obj) or not np.all(np.isfinite(grad)):
            report.aborted = True
            break
        theta = theta + opt.step(-grad)  # ascent
        streak, done = _variance_stop(report.variance_trace, config.stop, streak)
        if done:
            break
    report.final_iter = len(report.objective_trace)
    report.wall_time_seconds = time.perf_counter() - t0
    return theta, report


def theta_dim(grad_fn):
    return grad_fn.input_dim


def train(map: MaxPotentialMap, target: TargetDensity, config: TrainConfig):
    """ADAM ascent on the smooth KL objective; deterministic given the seed."""
    cur = map.with_gamma(config.gamma_sharp)

    def grad_fn(theta, X):
        m = cur.with_flat_params(theta)
        try:
            return param_grad_detail(m, target, X, jitter=config.jitter)
        except Exception:
            return np.full(theta.size, np.nan), np.full(X.shape[0], np.nan), X.shape[0]

    grad_fn.input_dim = map.dim
    theta, report = _run_adam(cur.flat_params(), grad_fn, config)
    return cur.with_flat_params(theta), report


def train_affine(target: TargetDensity, config: TrainConfig, n_scale: int = 1, init: AffineMap | None = None):
    """Fit the affine transport class; diagonal positivity via log-reparameterization."""
    p = target.dim
    if init is None:
        init = AffineMap(m=np.zeros(p), chol_factor=np.eye(p), n_scale=n_scale)
    n_off = p * (p - 1) // 2

    def grad_fn(theta, X):
        m = _affine_from_theta(theta, p, n_scale)
        T = m.apply(X)
        objs = target.log_unnorm(T) + m.logdet()
        G = np.asarray(target.score(T), dtype=float)
        grad = _affine_value_vjp(m, X, G) / X.shape[0]
        grad[p + n_off :] += 1.0  # d/d logdiag of sum log diag
        return grad, objs, 0

    grad_fn.input_dim = p
    theta, report = _run_adam(_affine_theta(init), grad_fn, config)
    return _affine_from_theta(theta, p, n_scale), report


def train_mixed(map, target, config: TrainConfig):
    """ADAM on the mixed-parameter objective (discrete + continuous parts).

    ``map`` is a SemiDiscreteMap or MeanFieldGmmMap, ``target`` a MixedTarget.
    The same reference batch supplies the inner draws for the conditional
    label-probability estimate.
    """
    from . import mixed as mx

    cur = map

    def grad_fn(theta, X):
        m = mx.with_flat_params(cur, theta)
        # maximize -mixed objective (the mixed form is minimized)
        grad, objs, skipped = mx.mixed_objective_grad(m, target, X, config.gamma_sharp, jitter=config.jitter)
        return -grad, -objs, skipped

    grad_fn.input_dim = mx.reference_dim(map)
    theta, report = _run_adam(mx.flat_params(map), grad_fn, config)
    return mx.with_flat_params(cur, theta), report
