"""Exact inference for discrete hidden Markov chains of three flavours.

Supported laws (N hidden states, M symbols, sequences of length T):

* order-1 chain, each y_t emitted from x_t;
* order-2 chain (transition depends on the two previous states), same
  per-position emission;
* correlated-noise chain ("cn"): order-1 hidden chain, but y_t is emitted
  from the window (x_{t-1}, x_t, x_{t+1}).

Every flavour comes with three routes to the posterior marginals
p(x_t | y_{1:T}): a brute-force enumeration oracle over all N^T hidden
paths, the classic scaled forward-backward (order-1 only), and the
entropic forward-backward (EFB) family which works purely with the
discriminative parameters pi, a and p(x|y) so that arbitrary observation
features can later replace the lookup tables. The unnormalized
joint-probability recursions used to prove the order-2 and cn variants
are implemented as well, as test oracles for the scaling relations
alpha_t = alpha'_t / prod_{s<=t} p(y_s).

Array index conventions:

* ``pi[i]``                     stationary state marginal
* ``trans[i, j]``               p(x_{t+1}=j | x_t=i)
* ``emit[i, y]``                p(y | x_t=i)
* ``trans2[i, j, k]``           p(x_{t+2}=k | x_t=i, x_{t+1}=j)
* ``interior[j, k, l, y]``      p(y_t=y | x_{t-1}=j, x_t=k, x_{t+1}=l)
* ``obs_post[y, i]``            p(x_t=i | y_t=y)
* ``trans_given_obs[j, y, i]``  p(x_{t+1}=i | x_t=j, y_t=y)
* ``rev_trans_given_obs[j, y, i]``  p(x_t=i | x_{t+1}=j, y_{t+1}=y)
"""

import itertools
from dataclasses import dataclass

import numpy as np


class InferenceError(RuntimeError):
    """Forward/backward mass vanished; the model cannot explain the data."""


class CapExceededError(ValueError):
    """Sequence too long for an exponential-cost oracle."""


@dataclass
class CnEmission:
    """Correlated-noise emission tables, boundaries included.

    Boundary positions condition only on the neighbours that exist; the
    tables are expected to be the virtual-neighbour marginalizations of
    ``interior`` under the stationary chain, which keeps the law an exact
    window of a stationary process (the EFB parameters are then
    time-invariant).
    """

    interior: np.ndarray  # (N, N, N, M): [prev, cur, next, y]
    first: np.ndarray     # (N, N, M):    [cur, next, y]
    last: np.ndarray      # (N, N, M):    [prev, cur, y]
    single: np.ndarray    # (N, M):       [cur, y], for T == 1


@dataclass
class GenerativeHmmParams:
    """Generative parameterization (pi, a, b); optional higher-order parts."""

    pi: np.ndarray
    trans: np.ndarray
    emit: np.ndarray | None = None
    trans2: np.ndarray | None = None
    cn_emit: CnEmission | None = None

    @property
    def n_states(self):
        return self.pi.shape[0]

    @property
    def n_obs(self):
        if self.cn_emit is not None:
            return self.cn_emit.single.shape[1]
        return self.emit.shape[1]

    @property
    def kind(self):
        if self.cn_emit is not None:
            return "hmm-cn"
        if self.trans2 is not None:
            return "hmm2"
        return "hmm"


@dataclass
class EntropicHmmParams:
    """Discriminative parameterization driving the EFB recursions."""

    pi: np.ndarray
    trans: np.ndarray
    obs_post: np.ndarray                     # (M, N) rows p(x | y)
    trans_given_obs: np.ndarray | None = None      # (N, M, N), cn only
    rev_trans_given_obs: np.ndarray | None = None  # (N, M, N), cn only

    @property
    def n_states(self):
        return self.pi.shape[0]


def stationary_distribution(trans):
    """Stationary row vector of a stochastic matrix (least-squares solve)."""
    n = trans.shape[0]
    m = np.vstack([trans.T - np.eye(n), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def _dirichlet_rows(rng, shape, smooth=0.1):
    """Row-stochastic draws bounded away from zero."""
    rows = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    return (rows + smooth) / (1.0 + smooth * shape[-1])


def random_hmm(rng, n_states=3, n_obs=2):
    trans = _dirichlet_rows(rng, (n_states, n_states))
    emit = _dirichlet_rows(rng, (n_states, n_obs))
    return GenerativeHmmParams(pi=stationary_distribution(trans), trans=trans, emit=emit)


def random_hmm2(rng, n_states=3, n_obs=2):
    """Order-2 model whose initial law sits on the pair-chain stationary.

    The pair process (x_t, x_{t+1}) is a first-order chain on N^2 states;
    its stationary distribution mu fixes p(x_1) = row marginal of mu and
    p(x_2 | x_1) = mu / p(x_1), making every per-position marginal equal
    to pi, which the entropic parameters assume.
    """
    n = n_states
    trans2 = _dirichlet_rows(rng, (n, n, n))
    pair = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            pair[i * n + j, j * n: (j + 1) * n] = trans2[i, j]
    mu = stationary_distribution(pair).reshape(n, n)
    pi = mu.sum(axis=1)
    trans = mu / pi[:, None]
    emit = _dirichlet_rows(rng, (n, n_obs))
    return GenerativeHmmParams(pi=pi, trans=trans, emit=emit, trans2=trans2)


def reverse_transition(pi, trans):
    """Time-reversed transition: p(x_{t-1}=j | x_t=k) under stationarity."""
    return (pi[None, :] * trans.T) / pi[:, None]


def random_hmm_cn(rng, n_states=3, n_obs=2, sides=None):
    """Correlated-noise model with per-state neighbour dependence.

    Each state k emits from exactly one of three kernels: conditioned on
    the left neighbour, on the right neighbour, or on k alone. This is the
    family for which conditioning on (x_t, y_t) really separates past from
    future, i.e. for which the cn EFB recursion is exact; a generic
    p(y | x_{t-1}, x_t, x_{t+1}) table is not (the observation is a
    collider coupling the two neighbours). Boundary tables marginalize a
    virtual neighbour so the law is a stationary window.
    """
    n, m = n_states, n_obs
    trans = _dirichlet_rows(rng, (n, n))
    pi = stationary_distribution(trans)
    rev = reverse_transition(pi, trans)
    if sides is None:
        sides = [str(rng.choice(["left", "center", "right"])) for _ in range(n)]
        if "left" not in sides and "right" not in sides:
            sides[rng.integers(0, n)] = str(rng.choice(["left", "right"]))
    interior = np.zeros((n, n, n, m))
    first = np.zeros((n, n, m))
    last = np.zeros((n, n, m))
    single = np.zeros((n, m))
    for k in range(n):
        if sides[k] == "left":
            kernel = _dirichlet_rows(rng, (n, m))  # rows over y per left state
            interior[:, k, :, :] = kernel[:, None, :]
            first[k] = (rev[k] @ kernel)[None, :]
            last[:, k, :] = kernel
            single[k] = rev[k] @ kernel
        elif sides[k] == "right":
            kernel = _dirichlet_rows(rng, (n, m))
            interior[:, k, :, :] = kernel[None, :, :]
            first[k] = kernel
            last[:, k, :] = (trans[k] @ kernel)[None, :]
            single[k] = trans[k] @ kernel
        else:
            kernel = _dirichlet_rows(rng, (m,))
            interior[:, k, :, :] = kernel
            first[k] = kernel[None, :]
            last[:, k, :] = kernel[None, :]
            single[k] = kernel
    return GenerativeHmmParams(
        pi=pi, trans=trans,
        cn_emit=CnEmission(interior=interior, first=first, last=last, single=single))


def random_model(kind, rng, n_states=3, n_obs=2):
    if kind == "hmm":
        return random_hmm(rng, n_states, n_obs)
    if kind == "hmm2":
        return random_hmm2(rng, n_states, n_obs)
    if kind == "hmm-cn":
        return random_hmm_cn(rng, n_states, n_obs)
    raise ValueError(f"unknown model kind {kind!r}")


def symbol_marginals(params):
    """Stationary per-position symbol distribution p(y)."""
    if params.kind == "hmm-cn":
        e = params.cn_emit.interior
        return np.einsum("j,jk,kl,jkly->y", params.pi, params.trans, params.trans, e)
    return params.pi @ params.emit


def _path_probability(params, path, obs):
    kind = params.kind
    T = len(obs)
    pi = params.pi
    trans = params.trans
    p = pi[path[0]]
    if kind == "hmm":
        p *= params.emit[path[0], obs[0]]
        for t in range(1, T):
            p *= trans[path[t - 1], path[t]] * params.emit[path[t], obs[t]]
    elif kind == "hmm2":
        if T >= 2:
            p *= trans[path[0], path[1]]
        for t in range(2, T):
            p *= params.trans2[path[t - 2], path[t - 1], path[t]]
        for t in range(T):
            p *= params.emit[path[t], obs[t]]
    else:
        for t in range(1, T):
            p *= trans[path[t - 1], path[t]]
        ce = params.cn_emit
        if T == 1:
            p *= ce.single[path[0], obs[0]]
        else:
            p *= ce.first[path[0], path[1], obs[0]]
            for t in range(1, T - 1):
                p *= ce.interior[path[t - 1], path[t], path[t + 1], obs[t]]
            p *= ce.last[path[T - 2], path[T - 1], obs[T - 1]]
    return p


def enumerate_posteriors(params, obs, cap=8):
    """Posterior marginals by summation over every hidden path.

    The independent oracle for all forward-backward implementations:
    nothing here shares code with the recursions. Exponential cost, hence
    the length cap.
    """
    T = len(obs)
    if T > cap:
        raise CapExceededError(f"sequence length {T} exceeds enumeration cap {cap}")
    if T == 0:
        raise ValueError("empty observation sequence")
    n = params.n_states
    post = np.zeros((T, n))
    for path in itertools.product(range(n), repeat=T):
        p = _path_probability(params, path, obs)
        for t in range(T):
            post[t, path[t]] += p
    total = post.sum(axis=1)
    if np.any(total <= 0.0):
        raise InferenceError("observation sequence has zero probability")
    return post / total[:, None]


def classic_fb(params, obs):
    """Scaled forward-backward posterior marginals for the order-1 chain."""
    if params.kind != "hmm":
        raise ValueError("classic_fb applies to the order-1 chain only")
    T = len(obs)
    n = params.n_states
    emit = params.emit
    alpha = np.zeros((T, n))
    alpha[0] = params.pi * emit[:, obs[0]]
    if alpha[0].sum() <= 0.0:
        raise InferenceError("observation sequence has zero probability")
    alpha[0] /= alpha[0].sum()
    for t in range(1, T):
        alpha[t] = (alpha[t - 1] @ params.trans) * emit[:, obs[t]]
        s = alpha[t].sum()
        if s <= 0.0:
            raise InferenceError("observation sequence has zero probability")
        alpha[t] /= s
    beta = np.ones((T, n))
    for t in range(T - 2, -1, -1):
        beta[t] = params.trans @ (emit[:, obs[t + 1]] * beta[t + 1])
        beta[t] /= beta[t].sum()
    post = alpha * beta
    return post / post.sum(axis=1, keepdims=True)


def derive_entropic(params):
    """Bayes-invert a generative model into its EFB parameterization.

    Requires pi to be the per-position marginal (stationary chain); the
    posterior tables are then position-independent. For the cn flavour,
    p(x|y), p(next|cur, y_cur) and p(cur|next, y_next) are computed by
    exact marginalization of the stationary three-state window.
    """
    pi, trans = params.pi, params.trans
    if np.max(np.abs(pi @ trans - pi)) > 1e-8:
        raise ValueError("pi is not stationary under trans; entropic tables would drift over time")
    if params.kind in ("hmm", "hmm2"):
        p_y = pi @ params.emit
        if np.any(p_y <= 0.0):
            raise ValueError("some symbol has zero marginal probability")
        obs_post = (params.emit * pi[:, None]).T / p_y[:, None]
        return EntropicHmmParams(pi=pi, trans=trans, obs_post=obs_post)
    e = params.cn_emit.interior
    n, m = params.n_states, params.n_obs
    window = np.einsum("j,jk,kl->jkl", pi, trans, trans)
    joint = window[..., None] * e  # p(x_{t-1}, x_t, x_{t+1}, y_t)
    p_y = joint.sum(axis=(0, 1, 2))
    if np.any(p_y <= 0.0):
        raise ValueError("some symbol has zero marginal probability")
    obs_post = joint.sum(axis=(0, 2)).T / p_y[:, None]
    cur_next = joint.sum(axis=0)   # p(x_t, x_{t+1}, y_t)
    prev_cur = joint.sum(axis=2)   # p(x_t, x_{t+1}, y_{t+1}): window shifted
    tgo = np.zeros((n, m, n))
    rtgo = np.zeros((n, m, n))
    for y in range(m):
        tgo[:, y, :] = cur_next[:, :, y] / cur_next[:, :, y].sum(axis=1, keepdims=True)
        rtgo[:, y, :] = prev_cur[:, :, y].T / prev_cur[:, :, y].sum(axis=0)[:, None]
    return EntropicHmmParams(pi=pi, trans=trans, obs_post=obs_post,
                             trans_given_obs=tgo, rev_trans_given_obs=rtgo)


def _normalize(v, what):
    s = v.sum()
    if not np.isfinite(s) or s <= 0.0:
        raise InferenceError(f"{what} vanished or diverged")
    return v / s


def efb_tables(params, obs, normalize=True):
    """Entropic forward/backward tables for the order-1 chain.

    alpha_1 = p(x|y_1); alpha_{t+1}(i) = (p(x_i|y_{t+1})/pi_i) sum_j alpha_t(j) a_{ji};
    beta_T = 1; beta_t(i) = sum_j (p(x_j|y_{t+1})/pi_j) beta_{t+1}(j) a_{ij}.
    Per-step sum-normalization is a pure rescaling: the posterior combiner
    divides it out again.
    """
    if np.any(params.pi <= 0.0):
        raise ValueError("pi must be strictly positive")
    T = len(obs)
    n = params.n_states
    lp = params.obs_post / params.pi[None, :]
    alpha = np.zeros((T, n))
    beta = np.ones((T, n))
    alpha[0] = params.obs_post[obs[0]]
    if normalize:
        alpha[0] = _normalize(alpha[0], "entropic forward mass")
    for t in range(1, T):
        alpha[t] = lp[obs[t]] * (alpha[t - 1] @ params.trans)
        if normalize:
            alpha[t] = _normalize(alpha[t], "entropic forward mass")
    for t in range(T - 2, -1, -1):
        beta[t] = params.trans @ (lp[obs[t + 1]] * beta[t + 1])
        if normalize:
            beta[t] = _normalize(beta[t], "entropic backward mass")
    return alpha, beta


def posterior_from_tables(alpha, beta):
    """Combine pointwise tables into row-stochastic posterior marginals."""
    post = alpha * beta
    total = post.sum(axis=1, keepdims=True)
    if np.any(total <= 0.0):
        raise InferenceError("posterior mass vanished")
    return post / total


def efb(params, obs):
    """Posterior marginals of the order-1 chain from entropic parameters."""
    alpha, beta = efb_tables(params, obs)
    return posterior_from_tables(alpha, beta)


def efb2_tables(params, trans2, obs, normalize=True):
    """Pairwise entropic tables for the order-2 chain.

    Entry s of each returned block is the (N, N) table at position t = s+2,
    indexed [previous state, current state]. Defined for T >= 2.
    """
    T = len(obs)
    if T < 2:
        raise ValueError("order-2 recursion needs T >= 2")
    if np.any(params.pi <= 0.0):
        raise ValueError("pi must be strictly positive")
    n = params.n_states
    lp = params.obs_post / params.pi[None, :]
    alpha2 = np.zeros((T - 1, n, n))
    beta2 = np.ones((T - 1, n, n))
    alpha2[0] = params.obs_post[obs[0]][:, None] * params.trans * lp[obs[1]][None, :]
    if normalize:
        alpha2[0] = _normalize(alpha2[0], "entropic forward mass")
    for t in range(2, T):  # table at position t+1
        alpha2[t - 1] = np.einsum("kj,kji,i->ji", alpha2[t - 2], trans2, lp[obs[t]])
        if normalize:
            alpha2[t - 1] = _normalize(alpha2[t - 1], "entropic forward mass")
    for t in range(T - 1, 1, -1):  # table at position t
        beta2[t - 2] = np.einsum("ik,jik,k->ji", beta2[t - 1], trans2, lp[obs[t]])
        if normalize:
            beta2[t - 2] = _normalize(beta2[t - 2], "entropic backward mass")
    return alpha2, beta2


def efb2_posterior_from_tables(alpha2, beta2):
    """Marginals from pairwise tables.

    Position 1 sums the t=2 table over its second index (the pair there is
    (x_1, x_2)); positions t >= 2 sum the position-t table over its first.
    """
    T = alpha2.shape[0] + 1
    n = alpha2.shape[1]
    post = np.zeros((T, n))
    g = alpha2[0] * beta2[0]
    post[0] = g.sum(axis=1)
    for t in range(2, T + 1):
        g = alpha2[t - 2] * beta2[t - 2]
        post[t - 1] = g.sum(axis=0)
    total = post.sum(axis=1, keepdims=True)
    if np.any(total <= 0.0):
        raise InferenceError("posterior mass vanished")
    return post / total


def efb2(params, trans2, obs):
    """Posterior marginals of the order-2 chain from entropic parameters."""
    alpha2, beta2 = efb2_tables(params, trans2, obs)
    return efb2_posterior_from_tables(alpha2, beta2)


def _cn_step_weights(params, obs):
    """Per-step (N, N) weight matrices of the cn recursion.

    weights[t][j, i] multiplies alpha_t(j) into alpha_{t+1}(i) and
    beta_{t+1}(i) into beta_t(j); both recursions share the same matrix.
    """
    pi, trans = params.pi, params.trans
    if np.any(pi <= 0.0) or np.any(trans <= 0.0):
        raise ValueError("cn recursion needs strictly positive pi and trans")
    tgo = params.trans_given_obs
    rtgo = params.rev_trans_given_obs
    if tgo is None or rtgo is None:
        raise ValueError("cn tables missing from entropic parameters")
    weights = []
    for t in range(len(obs) - 1):
        w = (tgo[:, obs[t], :] * params.obs_post[obs[t + 1]][None, :]
             * rtgo[:, obs[t + 1], :].T) / (pi[:, None] * trans)
        weights.append(w)
    return weights


def efb_cn_tables(params, obs, normalize=True):
    """Entropic forward/backward tables for the correlated-noise chain."""
    T = len(obs)
    n = params.n_states
    weights = _cn_step_weights(params, obs)
    alpha = np.zeros((T, n))
    beta = np.ones((T, n))
    alpha[0] = params.obs_post[obs[0]]
    if normalize:
        alpha[0] = _normalize(alpha[0], "entropic forward mass")
    for t in range(1, T):
        alpha[t] = alpha[t - 1] @ weights[t - 1]
        if normalize:
            alpha[t] = _normalize(alpha[t], "entropic forward mass")
    for t in range(T - 2, -1, -1):
        beta[t] = weights[t] @ beta[t + 1]
        if normalize:
            beta[t] = _normalize(beta[t], "entropic backward mass")
    return alpha, beta


def efb_cn(params, obs):
    """Posterior marginals of the correlated-noise chain."""
    alpha, beta = efb_cn_tables(params, obs)
    return posterior_from_tables(alpha, beta)


def unnormalized_recursions(params, obs, cap=20):
    """Joint-probability forward/backward tables (order-2 and cn flavours).

    These are the primed recursions over generative quantities:
    alpha'_t carries p(..., y_{1:t}) and beta'_t carries p(y_{t+1:T} | ...).
    They differ from the entropic tables exactly by running products of the
    symbol marginals, which is what the relation tests check. Products of
    p(y_s) underflow for long sequences, hence the cap.
    """
    T = len(obs)
    if T > cap:
        raise CapExceededError(f"sequence length {T} exceeds unnormalized-recursion cap {cap}")
    kind = params.kind
    n = params.n_states
    if kind == "hmm2":
        if T < 2:
            raise ValueError("order-2 recursion needs T >= 2")
        emit = params.emit
        alpha_p = np.zeros((T - 1, n, n))
        beta_p = np.ones((T - 1, n, n))
        alpha_p[0] = (params.pi * emit[:, obs[0]])[:, None] * params.trans * emit[:, obs[1]][None, :]
        for t in range(2, T):
            alpha_p[t - 1] = np.einsum("kj,kji,i->ji", alpha_p[t - 2], params.trans2, emit[:, obs[t]])
        for t in range(T - 1, 1, -1):
            beta_p[t - 2] = np.einsum("ik,jik,k->ji", beta_p[t - 1], params.trans2, emit[:, obs[t]])
        return alpha_p, beta_p
    if kind == "hmm-cn":
        ce = params.cn_emit
        ent = derive_entropic(params)
        tgo = ent.trans_given_obs
        alpha_p = np.zeros((T, n))
        beta_p = np.ones((T, n))
        if T == 1:
            alpha_p[0] = params.pi * ce.single[:, obs[0]]
            return alpha_p, beta_p
        alpha_p[0] = params.pi * np.einsum("kl,kl->k", params.trans, ce.first[:, :, obs[0]])
        # pair_emit[t][j, i] = p(y_{t+1} | x_t=j, x_{t+1}=i), next neighbour marginalized
        pair_emit = []
        for t in range(T - 1):
            if t + 1 == T - 1:
                pair_emit.append(ce.last[:, :, obs[t + 1]])
            else:
                pair_emit.append(np.einsum("il,jil->ji", params.trans, ce.interior[:, :, :, obs[t + 1]]))
        for t in range(T - 1):
            alpha_p[t + 1] = np.einsum("j,ji,ji->i", alpha_p[t], tgo[:, obs[t], :], pair_emit[t])
        for t in range(T - 2, -1, -1):
            beta_p[t] = np.einsum("ij,ij,j->i", tgo[:, obs[t], :], pair_emit[t], beta_p[t + 1])
        return alpha_p, beta_p
    raise ValueError("unnormalized recursions exist for the order-2 and cn flavours only")


def posterior(params, obs):
    """EFB posterior for a generative model, deriving entropic parameters."""
    ent = derive_entropic(params)
    kind = params.kind
    if kind == "hmm":
        return efb(ent, obs)
    if kind == "hmm2":
        return efb2(ent, params.trans2, obs)
    return efb_cn(ent, obs)


def sample_path(params, rng, length):
    """Draw (states, symbols) from a generative model (order-1 flavours)."""
    if params.kind != "hmm":
        raise ValueError("sampling implemented for the order-1 chain only")
    states = [int(rng.choice(params.n_states, p=params.pi))]
    for _ in range(length - 1):
        states.append(int(rng.choice(params.n_states, p=params.trans[states[-1]])))
    symbols = [int(rng.choice(params.n_obs, p=params.emit[s])) for s in states]
    return states, symbols
