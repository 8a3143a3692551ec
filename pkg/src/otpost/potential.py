"""Parameterized convex potentials and their transport maps.

A convex unit is ``F(<alpha,x>+w) + <beta,x> + v`` where ``F`` is the
antiderivative of a bounded increasing activation, so each unit is convex.
A local potential sums M units; the full potential is the max over L local
potentials, smoothed with a softmax of sharpness ``gamma_sharp`` during
training. The transport map is the gradient of the potential, the Jacobian
is its Hessian.

Parameter flattening order (stable, used by training and serialization):
for each local k = 0..L-1, for each unit m = 0..M-1, fields in order
(alpha[0..p-1], beta[0..p-1], w, v).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Activation",
    "ConvexUnit",
    "LocalPotential",
    "MaxPotentialMap",
    "AffineMap",
    "SingularJacobian",
    "activation_value",
    "activation_deriv",
    "activation_second_deriv",
    "activation_antiderivative",
    "unit_value",
    "local_value",
    "local_grad",
    "local_hessian",
    "transport_hard",
    "transport_smooth",
    "objective_sample",
    "param_grad",
    "map_to_json",
    "map_from_json",
]

MAP_FORMAT_VERSION = 1


class SingularJacobian(RuntimeError):
    """Smoothed Jacobian failed its symmetric factorization at a point."""

    def __init__(self, x):
        super().__init__(f"singular transport Jacobian at x={np.asarray(x)}")
        self.x = np.asarray(x)


class Activation(str, enum.Enum):
    TANH = "tanh"
    SOFTSIGN = "softsign"
    SQNL = "sqnl"


def activation_value(activation: Activation, u):
    """phi(u): bounded increasing nonlinearity."""
    u = np.asarray(u, dtype=float)
    if activation == Activation.TANH:
        return np.tanh(u)
    if activation == Activation.SOFTSIGN:
        return u / (1.0 + np.abs(u))
    if activation == Activation.SQNL:
        a = np.abs(u)
        inner = u - np.sign(u) * u * u / 4.0
        return np.where(a > 2.0, np.sign(u), inner)
    raise ValueError(f"unknown activation {activation!r}")


def activation_deriv(activation: Activation, u):
    """phi'(u) >= 0."""
    u = np.asarray(u, dtype=float)
    if activation == Activation.TANH:
        t = np.tanh(u)
        return 1.0 - t * t
    if activation == Activation.SOFTSIGN:
        return 1.0 / (1.0 + np.abs(u)) ** 2
    if activation == Activation.SQNL:
        a = np.abs(u)
        return np.where(a > 2.0, 0.0, 1.0 - a / 2.0)
    raise ValueError(f"unknown activation {activation!r}")


def activation_second_deriv(activation: Activation, u):
    """phi''(u); one-sided value at the Softsign/SQNL kinks."""
    u = np.asarray(u, dtype=float)
    if activation == Activation.TANH:
        t = np.tanh(u)
        return -2.0 * t * (1.0 - t * t)
    if activation == Activation.SOFTSIGN:
        return -2.0 * np.sign(u) / (1.0 + np.abs(u)) ** 3
    if activation == Activation.SQNL:
        a = np.abs(u)
        return np.where(a > 2.0, 0.0, -np.sign(u) / 2.0)
    raise ValueError(f"unknown activation {activation!r}")


def activation_antiderivative(activation: Activation, u):
    """F(u) with F(0) = 0 and F' = phi.

    The divergent lower limit of the defining integral is replaced by the
    normalization F(0) = 0; the constant offset is absorbed by the unit's
    intercept v and does not change the transport map.
    """
    u = np.asarray(u, dtype=float)
    if activation == Activation.TANH:
        # log cosh, overflow-safe
        a = np.abs(u)
        return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
    if activation == Activation.SOFTSIGN:
        a = np.abs(u)
        return a - np.log1p(a)
    if activation == Activation.SQNL:
        a = np.abs(u)
        inner = u * u / 2.0 - np.sign(u) * u ** 3 / 12.0
        return np.where(a > 2.0, a - 2.0 / 3.0, inner)
    raise ValueError(f"unknown activation {activation!r}")


@dataclass(frozen=True)
class ConvexUnit:
    """One convex building block F(<alpha,x>+w) + <beta,x> + v."""

    alpha: np.ndarray
    beta: np.ndarray
    w: float
    v: float
    activation: Activation = Activation.TANH

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1:
            raise ValueError("alpha and beta must be vectors of equal length")

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]


@dataclass(frozen=True)
class LocalPotential:
    """Sum of convex units; convex with PSD Hessian everywhere."""

    units: tuple[ConvexUnit, ...]

    def __post_init__(self):
        units = tuple(self.units)
        if not units:
            raise ValueError("a local potential needs at least one unit")
        if len({u.dim for u in units}) != 1:
            raise ValueError("all units must share the input dimension")
        object.__setattr__(self, "units", units)

    @property
    def dim(self) -> int:
        return self.units[0].dim

    @property
    def n_units(self) -> int:
        return len(self.units)


class _Stacked:
    """Array view of a list of local potentials: all parameters stacked.

    Shapes: alpha, beta (L, M, p); w, v (L, M); act codes (L, M).
    Requires every local to have the same number of units.
    """

    def __init__(self, locals_: tuple[LocalPotential, ...]):
        L = len(locals_)
        M = locals_[0].n_units
        if any(lp.n_units != M for lp in locals_):
            raise ValueError("all local potentials must have the same number of units")
        p = locals_[0].dim
        self.L, self.M, self.p = L, M, p
        self.alpha = np.stack([[u.alpha for u in lp.units] for lp in locals_])
        self.beta = np.stack([[u.beta for u in lp.units] for lp in locals_])
        self.w = np.array([[u.w for u in lp.units] for lp in locals_])
        self.v = np.array([[u.v for u in lp.units] for lp in locals_])
        acts = [[u.activation for u in lp.units] for lp in locals_]
        flat = [a for row in acts for a in row]
        self.acts = acts
        self.uniform_act = flat[0] if len(set(flat)) == 1 else None
        self.beta_sum = self.beta.sum(axis=1)  # (L, p)
        self.v_sum = self.v.sum(axis=1)  # (L,)

    def _apply(self, fn, s):
        if self.uniform_act is not None:
            return fn(self.uniform_act, s)
        out = np.empty_like(s)
        for k in range(self.L):
            for m in range(self.M):
                out[..., k, m] = fn(self.acts[k][m], s[..., k, m])
        return out

    def pre(self, X):
        """<alpha, x> + w for a batch X (B, p) -> (B, L, M)."""
        return np.einsum("bp,lmp->blm", X, self.alpha) + self.w

    def values(self, X, s=None):
        s = self.pre(X) if s is None else s
        F = self._apply(activation_antiderivative, s)
        return F.sum(axis=2) + X @ self.beta_sum.T + self.v_sum  # (B, L)

    def grads(self, X, s=None):
        s = self.pre(X) if s is None else s
        phi = self._apply(activation_value, s)
        return np.einsum("blm,lmp->blp", phi, self.alpha) + self.beta_sum

    def hessians(self, X, s=None):
        s = self.pre(X) if s is None else s
        dphi = self._apply(activation_deriv, s)
        return np.einsum("blm,lmp,lmq->blpq", dphi, self.alpha, self.alpha)


@dataclass(frozen=True)
class MaxPotentialMap:
    """Transport map T = grad(max_k u_k), softmax-smoothed while training."""

    locals: tuple[LocalPotential, ...]
    gamma_sharp: float = 10.0

    def __post_init__(self):
        locals_ = tuple(self.locals)
        if not locals_:
            raise ValueError("need at least one local potential")
        if len({lp.dim for lp in locals_}) != 1:
            raise ValueError("all local potentials must share the input dimension")
        if not self.gamma_sharp > 0:
            raise ValueError("gamma_sharp must be positive")
        object.__setattr__(self, "locals", locals_)
        object.__setattr__(self, "_stack", _Stacked(locals_))

    @property
    def dim(self) -> int:
        return self.locals[0].dim

    @property
    def n_locals(self) -> int:
        return len(self.locals)

    @property
    def n_params(self) -> int:
        st = self._stack
        return st.L * st.M * (2 * st.p + 2)

    def flat_params(self) -> np.ndarray:
        st = self._stack
        blocks = np.concatenate(
            [st.alpha, st.beta, st.w[..., None], st.v[..., None]], axis=2
        )  # (L, M, 2p+2)
        return blocks.ravel()

    def with_flat_params(self, theta: np.ndarray) -> "MaxPotentialMap":
        st = self._stack
        blocks = np.asarray(theta, dtype=float).reshape(st.L, st.M, 2 * st.p + 2)
        locals_ = []
        for k in range(st.L):
            units = []
            for m in range(st.M):
                b = blocks[k, m]
                units.append(
                    ConvexUnit(
                        alpha=b[: st.p],
                        beta=b[st.p : 2 * st.p],
                        w=float(b[2 * st.p]),
                        v=float(b[2 * st.p + 1]),
                        activation=st.acts[k][m],
                    )
                )
            locals_.append(LocalPotential(units=tuple(units)))
        return MaxPotentialMap(locals=tuple(locals_), gamma_sharp=self.gamma_sharp)

    def with_gamma(self, gamma_sharp: float) -> "MaxPotentialMap":
        return MaxPotentialMap(locals=self.locals, gamma_sharp=gamma_sharp)


@dataclass(frozen=True)
class AffineMap:
    """T(x) = m + n^{-1/2} C x with C lower triangular, positive diagonal."""

    m: np.ndarray
    chol_factor: np.ndarray
    n_scale: int = 1

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        C = np.asarray(self.chol_factor, dtype=float)
        if C.shape != (m.shape[0], m.shape[0]):
            raise ValueError("chol_factor must be p x p")
        if not np.allclose(C, np.tril(C)):
            raise ValueError("chol_factor must be lower triangular")
        if np.any(np.diag(C) <= 0):
            raise ValueError("chol_factor needs a strictly positive diagonal")
        if self.n_scale < 1:
            raise ValueError("n_scale must be a positive integer")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "chol_factor", C)

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.n_scale)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.m + self.scale * X @ self.chol_factor.T

    def logdet(self) -> float:
        p = self.dim
        return float(np.sum(np.log(np.diag(self.chol_factor))) - 0.5 * p * np.log(self.n_scale))

    def invert(self, Z: np.ndarray) -> np.ndarray:
        from scipy.linalg import solve_triangular

        Z = np.asarray(Z, dtype=float)
        rhs = (Z - self.m) / self.scale
        return solve_triangular(self.chol_factor, rhs.T, lower=True).T


# ---------------------------------------------------------------------------
# single-point operations


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def unit_value(unit: ConvexUnit, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != unit.dim:
        raise ValueError("dimension mismatch")
    s = x @ unit.alpha + unit.w
    F = activation_antiderivative(unit.activation, s)
    return F + x @ unit.beta + unit.v


def local_value(pot: LocalPotential, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != pot.dim:
        raise ValueError("dimension mismatch")
    return sum(unit_value(u, x) for u in pot.units)


def local_grad(pot: LocalPotential, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != pot.dim:
        raise ValueError("dimension mismatch")
    g = np.zeros_like(x)
    for u in pot.units:
        s = x @ u.alpha + u.w
        g = g + np.multiply.outer(activation_value(u.activation, s), u.alpha) + u.beta
    return g


def local_hessian(pot: LocalPotential, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != pot.dim:
        raise ValueError("dimension mismatch")
    H = np.zeros((pot.dim, pot.dim))
    for u in pot.units:
        s = float(x @ u.alpha + u.w)
        H += activation_deriv(u.activation, s) * np.outer(u.alpha, u.alpha)
    return H


def transport_hard(map: MaxPotentialMap, x) -> tuple[np.ndarray, int]:
    """Gradient of the winning local potential; ties go to the lowest index."""
    X, single = _as_batch(x)
    st = map._stack
    u = st.values(X)
    winners = np.argmax(u, axis=1)
    grads = st.grads(X)
    out = grads[np.arange(X.shape[0]), winners]
    if single:
        return out[0], int(winners[0])
    return out, winners


def _softmax_weights(u: np.ndarray, gamma: float) -> np.ndarray:
    z = gamma * u
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _chol_batch(J: np.ndarray, X: np.ndarray, jitter: float | None):
    """Cholesky factors plus a validity mask; non-PD entries are masked out."""
    B, p = J.shape[0], J.shape[1]
    if jitter:
        J = J + jitter * np.eye(p)
    chol = np.empty_like(J)
    ok = np.ones(B, dtype=bool)
    try:
        chol = np.linalg.cholesky(J)
    except np.linalg.LinAlgError:
        for b in range(B):
            try:
                chol[b] = np.linalg.cholesky(J[b])
            except np.linalg.LinAlgError:
                ok[b] = False
    return chol, ok


def transport_smooth(
    map: MaxPotentialMap, x, jitter: float | None = None
) -> tuple[np.ndarray, np.ndarray, float]:
    """Softmax-weighted transport value, Jacobian and its log-determinant."""
    X, single = _as_batch(x)
    if not single:
        raise ValueError("transport_smooth takes a single point; see smooth_batch")
    value, J, logdet, ok = smooth_batch(map, X, jitter=jitter)
    if not ok[0]:
        raise SingularJacobian(x)
    return value[0], J[0], float(logdet[0])


def smooth_batch(map: MaxPotentialMap, X: np.ndarray, jitter: float | None = None):
    """Batched smooth transport: (value, jac, logdet, valid mask)."""
    st = map._stack
    s = st.pre(X)
    u = st.values(X, s)
    omega = _softmax_weights(u, map.gamma_sharp)
    grads = st.grads(X, s)
    hess = st.hessians(X, s)
    value = np.einsum("bl,blp->bp", omega, grads)
    J = np.einsum("bl,blpq->bpq", omega, hess)
    chol, ok = _chol_batch(J, X, jitter)
    logdet = np.full(X.shape[0], -np.inf)
    diag = np.diagonal(chol, axis1=1, axis2=2)
    with np.errstate(invalid="ignore"):
        logdet[ok] = 2.0 * np.sum(np.log(diag[ok]), axis=1)
    return value, J, logdet, ok


def objective_sample(map, target, x) -> float:
    """log pi~(T(x)) + log det J_T(x), the per-sample training objective."""
    x = np.asarray(x, dtype=float)
    if target.dim != map.dim:
        raise ValueError("target dimension does not match map dimension")
    if isinstance(map, AffineMap):
        return float(target.log_unnorm(map.apply(x)) + map.logdet())
    value, _, logdet = transport_smooth(map, x)
    return float(target.log_unnorm(value) + logdet)


def objective_batch(map, target, X: np.ndarray, jitter: float | None = None):
    """Per-sample objective values plus a validity mask."""
    X = np.asarray(X, dtype=float)
    if isinstance(map, AffineMap):
        vals = target.log_unnorm(map.apply(X)) + map.logdet()
        return vals, np.ones(X.shape[0], dtype=bool)
    value, _, logdet, ok = smooth_batch(map, X, jitter=jitter)
    vals = np.where(ok, target.log_unnorm(value) + logdet, -np.inf)
    return vals, ok


# ---------------------------------------------------------------------------
# analytic parameter derivatives


def _inv_from_spd(J: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(J)
    inv_chol = np.linalg.inv(chol)
    return np.einsum("bqp,bqr->bpr", inv_chol, inv_chol)


def smooth_param_grads(
    map: MaxPotentialMap,
    X: np.ndarray,
    G: np.ndarray,
    with_logdet_of: np.ndarray | None = None,
) -> np.ndarray:
    """Per-sample parameter gradients of <G_b, T(x_b)> (+ logdet if requested).

    ``G`` is a (B, p) cotangent on the transport value (the target score when
    differentiating the training objective). When ``with_logdet_of`` holds the
    per-sample Jacobians, the tr(J^{-1} dJ/dtheta) term is added. Returns
    (B, n_params) in the canonical flattening order.
    """
    st = map._stack
    gamma = map.gamma_sharp
    B = X.shape[0]
    s = st.pre(X)
    u = st.values(X, s)
    omega = _softmax_weights(u, gamma)
    grads = st.grads(X, s)
    phi = st._apply(activation_value, s)
    dphi = st._apply(activation_deriv, s)

    a = np.einsum("bp,blp->bl", G, grads)  # G . grad u_l
    if with_logdet_of is not None:
        A = _inv_from_spd(with_logdet_of)  # (B, p, p)
        hess = st.hessians(X, s)
        c = np.einsum("bpq,blqp->bl", A, hess)
        Aalpha = np.einsum("bpq,lmq->blmp", A, st.alpha)
        quad = np.einsum("lmp,blmp->blm", st.alpha, Aalpha)
        ddphi = st._apply(activation_second_deriv, s)
    else:
        c = np.zeros_like(a)
    score = a + c
    delta = score - np.einsum("bl,bl->b", omega, score)[:, None]  # (B, L)

    galpha = np.einsum("bp,lmp->blm", G, st.alpha)
    wdel = gamma * omega * delta  # (B, L), softmax-coupling weight

    # alpha gradient: (B, L, M, p)
    coef_x = wdel[:, :, None] * phi + omega[:, :, None] * dphi * galpha
    if with_logdet_of is not None:
        coef_x = coef_x + omega[:, :, None] * ddphi * quad
    grad_alpha = coef_x[..., None] * X[:, None, None, :]
    grad_alpha += (omega[:, :, None] * phi)[..., None] * G[:, None, None, :]
    if with_logdet_of is not None:
        grad_alpha += 2.0 * (omega[:, :, None] * dphi)[..., None] * Aalpha

    # beta gradient: (B, L, M, p), identical across units within a local
    grad_beta = wdel[..., None, None] * X[:, None, None, :] + np.broadcast_to(
        (omega[..., None, None] * G[:, None, None, :]),
        (B, st.L, 1, st.p),
    )
    grad_beta = np.broadcast_to(grad_beta, (B, st.L, st.M, st.p))

    grad_w = wdel[:, :, None] * phi + omega[:, :, None] * dphi * galpha
    if with_logdet_of is not None:
        grad_w = grad_w + omega[:, :, None] * ddphi * quad
    grad_v = np.broadcast_to(wdel[:, :, None], (B, st.L, st.M))

    blocks = np.concatenate(
        [grad_alpha, grad_beta, grad_w[..., None], grad_v[..., None]], axis=3
    )
    return blocks.reshape(B, -1)


def param_grad_detail(
    map: MaxPotentialMap, target, X: np.ndarray, jitter: float | None = None
):
    """Batch-mean objective gradient, per-sample objectives, skipped count."""
    X = np.asarray(X, dtype=float)
    value, J, logdet, ok = smooth_batch(map, X, jitter=jitter)
    n_skipped = int(np.sum(~ok))
    if not np.any(ok):
        raise SingularJacobian(X[0])
    Xv, Jv, valv = X[ok], J[ok], value[ok]
    G = np.asarray(target.score(valv), dtype=float)
    per_sample = smooth_param_grads(map, Xv, G, with_logdet_of=Jv)
    grad = per_sample.mean(axis=0)
    objs = np.where(ok, target.log_unnorm(value) + logdet, -np.inf)
    return grad, objs, n_skipped


def param_grad(map: MaxPotentialMap, target, batch, jitter: float | None = None):
    """Analytic gradient of the batch-mean objective w.r.t. all parameters."""
    X = batch.data if hasattr(batch, "data") else np.asarray(batch, dtype=float)
    grad, _, _ = param_grad_detail(map, target, X, jitter=jitter)
    return grad


# ---------------------------------------------------------------------------
# serialization


def map_to_json(map) -> str:
    """Versioned JSON document; floats survive round-trip bit-faithfully."""
    if isinstance(map, AffineMap):
        doc = {
            "version": MAP_FORMAT_VERSION,
            "family": "affine",
            "p": map.dim,
            "m": map.m.tolist(),
            "chol_factor": map.chol_factor.tolist(),
            "n_scale": map.n_scale,
        }
        return json.dumps(doc, indent=2)
    st = map._stack
    doc = {
        "version": MAP_FORMAT_VERSION,
        "family": "maxpot",
        "p": map.dim,
        "L": map.n_locals,
        "gamma_sharp": map.gamma_sharp,
        "locals": [
            {
                "units": [
                    {
                        "activation": u.activation.value,
                        "alpha": u.alpha.tolist(),
                        "beta": u.beta.tolist(),
                        "w": u.w,
                        "v": u.v,
                    }
                    for u in lp.units
                ]
            }
            for lp in map.locals
        ],
    }
    return json.dumps(doc, indent=2)


def map_from_json(text: str):
    doc = json.loads(text)
    if doc.get("version") != MAP_FORMAT_VERSION:
        raise ValueError(f"unsupported map format version {doc.get('version')!r}")
    family = doc.get("family", "maxpot")
    if family == "affine":
        return AffineMap(
            m=np.array(doc["m"], dtype=float),
            chol_factor=np.array(doc["chol_factor"], dtype=float),
            n_scale=int(doc["n_scale"]),
        )
    locals_ = tuple(
        LocalPotential(
            units=tuple(
                ConvexUnit(
                    alpha=np.array(u["alpha"], dtype=float),
                    beta=np.array(u["beta"], dtype=float),
                    w=float(u["w"]),
                    v=float(u["v"]),
                    activation=Activation(u["activation"]),
                )
                for u in lp["units"]
            )
        )
        for lp in doc["locals"]
    )
    return MaxPotentialMap(locals=locals_, gamma_sharp=float(doc["gamma_sharp"]))
