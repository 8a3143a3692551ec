"""Semi-discrete transport for mixed discrete-continuous parameters.

A mixed map takes a reference draw (x1, x2) with x1 in R^r and x2 in R^p
and outputs a category tau = argmax_k {<x1, b_k> + phi_k(x2)} together with
a continuous part zeta = kappa * grad phi_tau(x2). Categories are embedded
as the vectors b_k. The mean-field variant assigns one such argmax per
observation (labels) and averages the continuous gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .potential import (
    LocalPotential,
    SingularJacobian,
    _Stacked,
    activation_deriv,
    activation_second_deriv,
    activation_value,
    local_grad,
    local_hessian,
    local_value,
)
from .rng import stream

__all__ = [
    "Embedding",
    "SemiDiscreteMap",
    "MeanFieldGmmMap",
    "MixedTarget",
    "GmmPrior",
    "push_mixed",
    "conditional_prob_estimate",
    "mixed_logdet",
    "gmm_push",
    "gmm_posterior_logdensity",
    "gmm_mixed_target",
    "discrete_mixture_target",
    "flat_params",
    "with_flat_params",
    "reference_dim",
    "mixed_objective_grad",
    "mixed_map_to_json",
    "mixed_map_from_json",
]


@dataclass(frozen=True)
class Embedding:
    """Category embedding vectors b_k, one row per category."""

    kind: str  # "one_hot" or "ordinal"
    vectors: np.ndarray  # (K, r)

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if self.kind == "one_hot":
            if not np.array_equal(V, np.eye(V.shape[0])):
                raise ValueError("one-hot embedding must be the identity rows")
        elif self.kind == "ordinal":
            if V.shape[1] != 1 or np.any(np.diff(V[:, 0]) <= 0):
                raise ValueError("ordinal levels must be strictly increasing scalars")
        else:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        object.__setattr__(self, "vectors", V)

    @classmethod
    def one_hot(cls, K: int) -> "Embedding":
        if K < 1:
            raise ValueError("K must be positive")
        return cls(kind="one_hot", vectors=np.eye(K))

    @classmethod
    def ordinal(cls, levels) -> "Embedding":
        levels = np.asarray(levels, dtype=float).reshape(-1, 1)
        return cls(kind="ordinal", vectors=levels)

    @property
    def n_categories(self) -> int:
        return self.vectors.shape[0]

    @property
    def r(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class SemiDiscreteMap:
    """One categorical coordinate plus a continuous part of dimension p."""

    embedding: Embedding
    phis: tuple[LocalPotential, ...]
    kappa: float = 1.0

    def __post_init__(self):
        phis = tuple(self.phis)
        if len(phis) != self.embedding.n_categories:
            raise ValueError("need one potential per category")
        if len({ph.dim for ph in phis}) != 1:
            raise ValueError("all potentials must share the continuous dimension")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "_stack", _Stacked(phis))

    @property
    def n_categories(self) -> int:
        return self.embedding.n_categories

    @property
    def phi_dim(self) -> int:
        return self.phis[0].dim


@dataclass(frozen=True)
class MeanFieldGmmMap:
    """Per-observation label maps sharing one continuous block in R^{K d}.

    ``phis[i][k]`` is the potential competing for label k of observation i;
    the continuous output averages the winning gradients with weight kappa
    (default 1/n_obs so identical gradients pass through unchanged).
    """

    n_obs: int
    K: int
    d: int
    phis: tuple[tuple[LocalPotential, ...], ...]
    kappa: float | None = None

    def __post_init__(self):
        phis = tuple(tuple(row) for row in self.phis)
        if len(phis) != self.n_obs or any(len(row) != self.K for row in phis):
            raise ValueError("phis must be a complete n_obs x K grid")
        p = self.K * self.d
        if any(ph.dim != p for row in phis for ph in row):
            raise ValueError("each potential must act on R^{K d}")
        kappa = 1.0 / self.n_obs if self.kappa is None else self.kappa
        if not kappa > 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "kappa", kappa)
        flat = tuple(ph for row in phis for ph in row)
        object.__setattr__(self, "_stack", _Stacked(flat))

    @property
    def phi_dim(self) -> int:
        return self.K * self.d


@dataclass(frozen=True)
class MixedTarget:
    """Unnormalized mixed log-density over (tau, zeta) and its zeta-score."""

    n_cats: int  # number of categorical coordinates
    dim: int  # continuous dimension
    log_unnorm: Callable[[np.ndarray, np.ndarray], np.ndarray]
    score: Callable[[np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# pushes


def push_mixed(map: SemiDiscreteMap, x1, x2):
    """(tau, zeta) for a single reference point; ties go to the lowest index."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != (map.embedding.r,) or x2.shape != (map.phi_dim,):
        raise ValueError("dimension mismatch")
    scores = map.embedding.vectors @ x1 + np.array(
        [local_value(ph, x2) for ph in map.phis]
    )
    tau = int(np.argmax(scores))
    zeta = map.kappa * local_grad(map.phis[tau], x2)
    return tau, zeta


def gmm_push(map: MeanFieldGmmMap, x1_blocks, x2):
    """Per-observation labels and the averaged continuous part."""
    x1 = np.asarray(x1_blocks, dtype=float).reshape(map.n_obs, map.K)
    x2 = np.asarray(x2, dtype=float)
    if x2.shape != (map.phi_dim,):
        raise ValueError("dimension mismatch")
    st = map._stack
    vals = st.values(x2[None, :])[0].reshape(map.n_obs, map.K)
    labels = np.argmax(x1 + vals, axis=1)
    grads = st.grads(x2[None, :])[0].reshape(map.n_obs, map.K, -1)
    zeta = map.kappa * grads[np.arange(map.n_obs), labels].sum(axis=0)
    return labels, zeta


def mixed_logdet(map, tau, x2) -> float:
    """log |det| of the continuous block of the mixed map Jacobian.

    Equals p*log(kappa) + log det of the winning Hessian (summed over
    observations for the mean-field map); the label block contributes no
    volume. Raises SingularJacobian on a non-positive-definite Hessian.
    """
    x2 = np.asarray(x2, dtype=float)
    p = map.phi_dim
    if isinstance(map, SemiDiscreteMap):
        H = local_hessian(map.phis[int(tau)], x2)
    else:
        labels = np.asarray(tau, dtype=int)
        H = sum(
            local_hessian(map.phis[i][labels[i]], x2) for i in range(map.n_obs)
        )
    sign, logdet = np.linalg.slogdet(H)
    if sign <= 0:
        raise SingularJacobian(x2)
    return float(p * np.log(map.kappa) + logdet)


def conditional_prob_estimate(map, tau, x2, n_inner: int, seed: int, gamma: float = 10.0) -> float:
    """Monte Carlo softmax estimate of P(tau | x2) under the reference.

    Averages, over reference draws z on the embedding space, the gamma-softmax
    weight of category tau among the scores <z, b_k> + phi_k(x2). Smooth in
    the map parameters; exact (=1) when there is a single category.
    """
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    x2 = np.asarray(x2, dtype=float)
    if isinstance(map, SemiDiscreteMap):
        vals = map._stack.values(x2[None, :])[0]  # (K,)
        Z = stream(seed, 5).standard_normal((n_inner, map.embedding.r))
        scores = Z @ map.embedding.vectors.T + vals
        W = _softmax(gamma * scores, axis=1)
        return float(np.mean(W[:, int(tau)]))
    labels = np.asarray(tau, dtype=int)
    vals = map._stack.values(x2[None, :])[0].reshape(map.n_obs, map.K)
    Z = stream(seed, 5).standard_normal((n_inner, map.n_obs, map.K))
    W = _softmax(gamma * (Z + vals), axis=2)
    per_obs = W[:, np.arange(map.n_obs), labels].mean(axis=0)
    return float(np.prod(per_obs))


def _softmax(z, axis):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# GMM posterior


@dataclass(frozen=True)
class GmmPrior:
    m0: np.ndarray
    prior_sd: float
    obs_sd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "m0", np.asarray(self.m0, dtype=float))
        if self.prior_sd <= 0 or self.obs_sd <= 0:
            raise ValueError("standard deviations must be positive")


def gmm_posterior_logdensity(labels, means_flat, data, prior: GmmPrior, K: int | None = None) -> float:
    """Joint unnormalized log-density of (labels, cluster means) given data.

    Gaussian prior on each mean, isotropic Gaussian observations, uniform
    label prior (the -n log K term, constant in the parameters, is kept so
    brute-force checks match exactly).
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    labels = np.asarray(labels, dtype=int)
    means = np.asarray(means_flat, dtype=float).reshape(-1, d)
    K = means.shape[0] if K is None else K
    if labels.size != n or np.any(labels < 0) or np.any(labels >= K):
        raise ValueError("labels out of range")
    lp = -0.5 * np.sum((means - prior.m0) ** 2) / prior.prior_sd**2
    resid = data - means[labels]
    ll = -0.5 * np.sum(resid * resid) / prior.obs_sd**2
    return float(lp + ll - n * np.log(K))


def gmm_mixed_target(data, prior: GmmPrior, K: int) -> MixedTarget:
    """Vectorized MixedTarget for the conjugate GMM posterior."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    lam2, sig2 = prior.prior_sd**2, prior.obs_sd**2

    def log_unnorm(tau, zeta):
        tau = np.atleast_2d(np.asarray(tau, dtype=int))
        Z = np.atleast_2d(np.asarray(zeta, dtype=float))
        B = Z.shape[0]
        means = Z.reshape(B, K, d)
        lp = -0.5 * np.sum((means - prior.m0) ** 2, axis=(1, 2)) / lam2
        assigned = means[np.arange(B)[:, None], tau]  # (B, n, d)
        ll = -0.5 * np.sum((data[None] - assigned) ** 2, axis=(1, 2)) / sig2
        return lp + ll - n * np.log(K)

    def score(tau, zeta):
        tau = np.atleast_2d(np.asarray(tau, dtype=int))
        Z = np.atleast_2d(np.asarray(zeta, dtype=float))
        B = Z.shape[0]
        means = Z.reshape(B, K, d)
        g = -(means - prior.m0) / lam2
        assigned = means[np.arange(B)[:, None], tau]
        resid = (data[None] - assigned) / sig2  # (B, n, d)
        for k in range(K):
            mask = (tau == k)[..., None]
            g[:, k] += np.sum(resid * mask, axis=1)
        return g.reshape(B, K * d)

    return MixedTarget(n_cats=n, dim=K * d, log_unnorm=log_unnorm, score=score)


def discrete_mixture_target(weights, means, sds) -> MixedTarget:
    """Mixed target with one categorical coordinate: tau ~ weights,
    zeta | tau ~ N(means[tau], diag(sds[tau]^2))."""
    w = np.asarray(weights, dtype=float)
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    sd = np.atleast_2d(np.asarray(sds, dtype=float))
    if not np.isclose(w.sum(), 1.0) or np.any(w <= 0):
        raise ValueError("weights must be positive and sum to 1")

    def log_unnorm(tau, zeta):
        tau = np.asarray(tau, dtype=int).reshape(-1)
        Z = np.atleast_2d(np.asarray(zeta, dtype=float))
        resid = (Z - mu[tau]) / sd[tau]
        return (
            np.log(w[tau])
            - 0.5 * np.sum(resid * resid, axis=1)
            - np.sum(np.log(sd[tau]), axis=1)
        )

    def score(tau, zeta):
        tau = np.asarray(tau, dtype=int).reshape(-1)
        Z = np.atleast_2d(np.asarray(zeta, dtype=float))
        return -(Z - mu[tau]) / sd[tau] ** 2

    return MixedTarget(n_cats=1, dim=mu.shape[1], log_unnorm=log_unnorm, score=score)


# ---------------------------------------------------------------------------
# parameter flattening and training gradients


def flat_params(map) -> np.ndarray:
    st = map._stack
    blocks = np.concatenate(
        [st.alpha, st.beta, st.w[..., None], st.v[..., None]], axis=2
    )
    return blocks.ravel()


def with_flat_params(map, theta: np.ndarray):
    st = map._stack
    blocks = np.asarray(theta, dtype=float).reshape(st.L, st.M, 2 * st.p + 2)
    from .potential import ConvexUnit

    def rebuild_local(k):
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
        return LocalPotential(units=tuple(units))

    locals_ = [rebuild_local(k) for k in range(st.L)]
    if isinstance(map, SemiDiscreteMap):
        return SemiDiscreteMap(
            embedding=map.embedding, phis=tuple(locals_), kappa=map.kappa
        )
    grid = tuple(
        tuple(locals_[i * map.K + k] for k in range(map.K))
        for i in range(map.n_obs)
    )
    return MeanFieldGmmMap(
        n_obs=map.n_obs, K=map.K, d=map.d, phis=grid, kappa=map.kappa
    )


def reference_dim(map) -> int:
    """Total reference dimension r + p for a mixed map."""
    if isinstance(map, SemiDiscreteMap):
        return map.embedding.r + map.phi_dim
    return map.n_obs * map.K + map.phi_dim


def _phi_param_vjp(st, X2, gval, Gvec, Acoef):
    """Per-sample parameter gradients of a mixed cotangent bundle.

    gval (B,L): cotangent on the potential values phi_l(x2).
    Gvec (B,L,p): cotangent on the gradients grad phi_l(x2), or None.
    Acoef (B,L,p,p): coefficient of the Hessians in a trace pairing, or None.
    Returns (B, n_params) in the canonical flattening order.
    """
    B = X2.shape[0]
    s = st.pre(X2)
    phi = st._apply(activation_value, s)
    coef = gval[:, :, None] * phi  # multiplier of x2 in d/dalpha, and d/dw
    grad_alpha = np.zeros((B, st.L, st.M, st.p))
    grad_beta = np.broadcast_to(
        gval[:, :, None, None] * X2[:, None, None, :], (B, st.L, st.M, st.p)
    ).copy()
    grad_v = np.broadcast_to(gval[:, :, None], (B, st.L, st.M)).copy()
    if Gvec is not None:
        dphi = st._apply(activation_deriv, s)
        ga = np.einsum("blp,lmp->blm", Gvec, st.alpha)
        coef = coef + dphi * ga
        grad_alpha += phi[..., None] * Gvec[:, :, None, :]
        grad_beta += Gvec[:, :, None, :]
    if Acoef is not None:
        dphi = st._apply(activation_deriv, s)
        ddphi = st._apply(activation_second_deriv, s)
        Aalpha = np.einsum("blpq,lmq->blmp", Acoef, st.alpha)
        aAa = np.einsum("lmp,blmp->blm", st.alpha, Aalpha)
        coef = coef + ddphi * aAa
        grad_alpha += 2.0 * dphi[..., None] * Aalpha
    grad_alpha += coef[..., None] * X2[:, None, None, :]
    grad_w = coef
    blocks = np.concatenate(
        [grad_alpha, grad_beta, grad_w[..., None], grad_v[..., None]], axis=3
    )
    return blocks.reshape(B, -1)


def _inv_spd_batch(H):
    chol = np.linalg.cholesky(H)
    inv_chol = np.linalg.inv(chol)
    return np.einsum("bqp,bqr->bpr", inv_chol, inv_chol)


def mixed_objective_grad(map, target: MixedTarget, X, gamma: float, jitter=None):
    """Batch-mean gradient of the minimized mixed objective, plus diagnostics.

    Objective per sample: log Phat(tau|x2) - log pi~(tau, zeta) - logdet.
    The categorical winners are piecewise constant in the parameters, so
    only the smooth softmax probability, the continuous density and the
    log-determinant contribute gradients. The x1 batch doubles as the inner
    Monte Carlo sample for Phat. Returns (grad, per-sample objectives,
    skipped count); samples with a singular winning Hessian are skipped.
    """
    X = np.asarray(X, dtype=float)
    B = X.shape[0]
    st = map._stack
    p = map.phi_dim
    if isinstance(map, SemiDiscreteMap):
        r = map.embedding.r
        X1, X2 = X[:, :r], X[:, r:]
        lin = X1 @ map.embedding.vectors.T  # (B, K)
        vals = st.values(X2)  # (B, K)
        tau = np.argmax(lin + vals, axis=1)
        grads = st.grads(X2)
        hess = st.hessians(X2)
        idx = np.arange(B)
        Htau = hess[idx, tau]
        if jitter:
            Htau = Htau + jitter * np.eye(p)
        sign, logdetH = np.linalg.slogdet(Htau)
        ok = sign > 0
        zeta = map.kappa * grads[idx, tau]
        logpi = target.log_unnorm(tau[:, None], zeta)
        # softmax weights over categories for every (inner j, sample b) pair
        C = lin[:, None, :] + vals[None, :, :]  # (j, b, K)
        W = _softmax(gamma * C, axis=2)
        Wt = W[:, idx, tau]  # (j, b)
        S1 = Wt.sum(axis=0)  # B * Phat
        log_phat = np.log(S1 / B)
        cross = np.einsum("jb,jbk->bk", Wt, W)
        gval = -gamma * cross / S1[:, None]
        gval[idx, tau] += gamma
        Gvec = np.zeros((B, st.L, p))
        Acoef = np.zeros((B, st.L, p, p))
        sc = np.asarray(target.score(tau[:, None], zeta), dtype=float)
        Gvec[idx[ok], tau[ok]] = -map.kappa * sc[ok]
        Acoef[idx[ok], tau[ok]] = -_inv_spd_batch(Htau[ok])
        objs = np.where(
            ok, log_phat - logpi - (p * np.log(map.kappa) + logdetH), np.inf
        )
        per = _phi_param_vjp(st, X2, gval, Gvec, Acoef)
        grad = per[ok].mean(axis=0)
        return grad, objs, int(np.sum(~ok))

    # mean-field grid: per-observation argmax, shared continuous block
    n, K = map.n_obs, map.K
    X1 = X[:, : n * K].reshape(B, n, K)
    X2 = X[:, n * K :]
    vals = st.values(X2).reshape(B, n, K)
    labels = np.argmax(X1 + vals, axis=2)  # (B, n)
    grads = st.grads(X2).reshape(B, n, K, p)
    hess = st.hessians(X2).reshape(B, n, K, p, p)
    idx = np.arange(B)[:, None]
    obs = np.arange(n)[None, :]
    Gsel = grads[idx, obs, labels]  # (B, n, p)
    Hsum = hess[idx, obs, labels].sum(axis=1)  # (B, p, p)
    if jitter:
        Hsum = Hsum + jitter * np.eye(p)
    sign, logdetH = np.linalg.slogdet(Hsum)
    ok = sign > 0
    zeta = map.kappa * Gsel.sum(axis=1)
    logpi = target.log_unnorm(labels, zeta)
    # Phat per observation, chunked over samples to bound memory
    gval = np.zeros((B, n, K))
    log_phat = np.zeros(B)
    chunk = max(1, int(2**22 // max(1, B * n * K)))
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        C = X1[:, None, :, :] + vals[None, lo:hi, :, :]  # (j, b', n, K)
        W = _softmax(gamma * C, axis=3)
        lb = labels[lo:hi]
        Wt = W[:, np.arange(hi - lo)[:, None], obs, lb]  # (j, b', n)
        S1 = Wt.sum(axis=0)
        log_phat[lo:hi] = np.sum(np.log(S1 / B), axis=1)
        cross = np.einsum("jbi,jbik->bik", Wt, W)
        g = -gamma * cross / S1[..., None]
        g[np.arange(hi - lo)[:, None], obs, lb] += gamma
        gval[lo:hi] = g
    Gvec = np.zeros((B, n, K, p))
    Acoef = np.zeros((B, n, K, p, p))
    sc = np.asarray(target.score(labels, zeta), dtype=float)
    Gvec[idx, obs, labels] = -map.kappa * sc[:, None, :]
    Ainv = np.zeros((B, p, p))
    Ainv[ok] = _inv_spd_batch(Hsum[ok])
    Acoef[idx, obs, labels] = -Ainv[:, None, :, :]
    objs = np.where(ok, log_phat - logpi - (p * np.log(map.kappa) + logdetH), np.inf)
    per = _phi_param_vjp(
        st, X2, gval.reshape(B, -1), Gvec.reshape(B, n * K, p), Acoef.reshape(B, n * K, p, p)
    )
    grad = per[ok].mean(axis=0)
    return grad, objs, int(np.sum(~ok))


# ---------------------------------------------------------------------------
# serialization


def _local_doc(lp: LocalPotential) -> dict:
    return {
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


def _local_from_doc(doc) -> LocalPotential:
    from .potential import Activation, ConvexUnit

    return LocalPotential(
        units=tuple(
            ConvexUnit(
                alpha=np.array(u["alpha"], dtype=float),
                beta=np.array(u["beta"], dtype=float),
                w=float(u["w"]),
                v=float(u["v"]),
                activation=Activation(u["activation"]),
            )
            for u in doc["units"]
        )
    )


def mixed_map_to_json(map) -> str:
    """Versioned JSON document for mixed maps (same format version as
    potential.map_to_json)."""
    import json

    from .potential import MAP_FORMAT_VERSION

    if isinstance(map, SemiDiscreteMap):
        doc = {
            "version": MAP_FORMAT_VERSION,
            "family": "semidiscrete",
            "kappa": map.kappa,
            "embedding": {
                "kind": map.embedding.kind,
                "vectors": map.embedding.vectors.tolist(),
            },
            "phis": [_local_doc(ph) for ph in map.phis],
        }
    elif isinstance(map, MeanFieldGmmMap):
        doc = {
            "version": MAP_FORMAT_VERSION,
            "family": "gmm_meanfield",
            "n_obs": map.n_obs,
            "K": map.K,
            "d": map.d,
            "kappa": map.kappa,
            "phis": [[_local_doc(ph) for ph in row] for row in map.phis],
        }
    else:
        raise TypeError(f"not a mixed map: {type(map).__name__}")
    return json.dumps(doc, indent=2)


def mixed_map_from_json(text: str):
    import json

    from .potential import MAP_FORMAT_VERSION

    doc = json.loads(text)
    if doc.get("version") != MAP_FORMAT_VERSION:
        raise ValueError(f"unsupported map format version {doc.get('version')!r}")
    family = doc.get("family")
    if family == "semidiscrete":
        emb = Embedding(
            kind=doc["embedding"]["kind"],
            vectors=np.array(doc["embedding"]["vectors"], dtype=float),
        )
        return SemiDiscreteMap(
            embedding=emb,
            phis=tuple(_local_from_doc(p) for p in doc["phis"]),
            kappa=float(doc["kappa"]),
        )
    if family == "gmm_meanfield":
        return MeanFieldGmmMap(
            n_obs=int(doc["n_obs"]),
            K=int(doc["K"]),
            d=int(doc["d"]),
            phis=tuple(
                tuple(_local_from_doc(p) for p in row) for row in doc["phis"]
            ),
            kappa=float(doc["kappa"]),
        )
    raise ValueError(f"unknown mixed map family {family!r}")


# ---------------------------------------------------------------------------
# constructors


def _random_local(dim, M, seed_path, scale=0.3, activation=None):
    from .potential import Activation, ConvexUnit

    act = activation or Activation.TANH
    rg = stream(*seed_path)
    units = []
    for _ in range(M):
        units.append(
            ConvexUnit(
                alpha=rg.normal(0.0, scale, dim),
                beta=rg.normal(0.0, scale, dim),
                w=float(rg.normal(0.0, scale)),
                v=0.0,
                activation=act,
            )
        )
    return LocalPotential(units=tuple(units))


def random_semidiscrete_map(K, p, M, seed, kappa=1.0, activation=None):
    phis = tuple(_random_local(p, M, (seed, 3, k), activation=activation) for k in range(K))
    return SemiDiscreteMap(embedding=Embedding.one_hot(K), phis=phis, kappa=kappa)


def random_gmm_map(n_obs, K, d, M, seed, kappa=None, block_split=False, activation=None):
    """Random grid initialization; with block_split, the potential for
    label k of each observation only sees the k-th d-block of x2."""
    p = K * d
    grid = []
    for i in range(n_obs):
        row = []
        for k in range(K):
            lp = _random_local(p, M, (seed, 4, i, k), activation=activation)
            if block_split:
                mask = np.zeros(p)
                mask[k * d : (k + 1) * d] = 1.0
                from .potential import ConvexUnit

                lp = LocalPotential(
                    units=tuple(
                        ConvexUnit(
                            alpha=u.alpha * mask,
                            beta=u.beta * mask,
                            w=u.w,
                            v=u.v,
                            activation=u.activation,
                        )
                        for u in lp.units
                    )
                )
            row.append(lp)
        grid.append(tuple(row))
    return MeanFieldGmmMap(n_obs=n_obs, K=K, d=d, phis=tuple(grid), kappa=kappa)
