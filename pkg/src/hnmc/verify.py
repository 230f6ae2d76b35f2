"""Oracle verification suite: every inference path against an independent check.

Four families of checks, all seeded and deterministic:

* posterior equivalence: each entropic forward-backward variant against
  brute-force enumeration over all hidden paths, on grids of random
  stationary models;
* appendix scaling relations: entropic tables times running products of
  symbol marginals against the unnormalized joint-probability recursions;
* per-step rescaling invariance of the combined posterior;
* autodiff gradients of every model kind and architecture against central
  finite differences.

The CLI's verify subcommand drives run_all() and turns failures into a
nonzero exit code; the acceptance tests assert the same tolerances.
"""

from dataclasses import dataclass

import numpy as np

from . import hmm as hh
from .layers import MODEL_KINDS, ArchitectureSpec, build_model
from .tensor import Tensor, backward, fresh_tape, sequence_cross_entropy


@dataclass
class CheckResult:
    name: str
    worst_error: float
    tolerance: float

    @property
    def passed(self):
        return self.worst_error < self.tolerance


def _draw_obs(rng, n_obs, length):
    return [int(rng.integers(0, n_obs)) for _ in range(length)]


def check_oracle_hmm(n_models=100, seed=0, max_states=4, max_length=6, efb_impl=None):
    """EFB posterior vs enumeration on random stationary order-1 chains."""
    rng = np.random.default_rng([seed, 1])
    impl = efb_impl if efb_impl is not None else hh.efb
    worst = 0.0
    for _ in range(n_models):
        n = int(rng.integers(2, max_states + 1))
        m = int(rng.integers(2, 4))
        t = int(rng.integers(1, max_length + 1))
        params = hh.random_hmm(rng, n, m)
        obs = _draw_obs(rng, m, t)
        got = impl(hh.derive_entropic(params), obs)
        want = hh.enumerate_posteriors(params, obs)
        worst = max(worst, float(np.abs(got - want).max()))
    return CheckResult("efb vs enumeration (order 1)", worst, 1e-10)


def check_oracle_hmm2(n_models=100, seed=0, max_states=4, max_length=6):
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for _ in range(n_models):
        n = int(rng.integers(2, max_states + 1))
        m = int(rng.integers(2, 4))
        t = int(rng.integers(2, max_length + 1))
        params = hh.random_hmm2(rng, n, m)
        obs = _draw_obs(rng, m, t)
        got = hh.efb2(hh.derive_entropic(params), params.trans2, obs)
        want = hh.enumerate_posteriors(params, obs)
        worst = max(worst, float(np.abs(got - want).max()))
    return CheckResult("efb vs enumeration (order 2)", worst, 1e-10)


def check_oracle_cn(n_models=100, seed=0, max_states=3, max_length=5):
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for _ in range(n_models):
        n = int(rng.integers(2, min(max_states, 3) + 1))
        t = int(rng.integers(1, max_length + 1))
        params = hh.random_hmm_cn(rng, n, 2)
        obs = _draw_obs(rng, 2, t)
        got = hh.efb_cn(hh.derive_entropic(params), obs)
        want = hh.enumerate_posteriors(params, obs)
        worst = max(worst, float(np.abs(got - want).max()))
    return CheckResult("efb vs enumeration (correlated noise)", worst, 1e-10)


def check_appendix_relations(n_models=20, seed=0):
    """alpha_t * prod_{s<=t} p(y_s) == alpha'_t (and the backward mirror)."""
    rng = np.random.default_rng([seed, 4])
    worst = 0.0
    for k in range(n_models):
        kind = "hmm2" if k % 2 == 0 else "hmm-cn"
        params = hh.random_model(kind, rng, 3, 2)
        t_len = int(rng.integers(2, 7))
        obs = _draw_obs(rng, 2, t_len)
        ent = hh.derive_entropic(params)
        p_y = hh.symbol_marginals(params)
        alpha_p, beta_p = hh.unnormalized_recursions(params, obs)
        if kind == "hmm2":
            alpha, beta = hh.efb2_tables(ent, params.trans2, obs, normalize=False)
            offset = 2
        else:
            alpha, beta = hh.efb_cn_tables(ent, obs, normalize=False)
            offset = 1
        for t in range(offset, t_len + 1):
            prod_le = float(np.prod([p_y[obs[s]] for s in range(t)]))
            prod_gt = float(np.prod([p_y[obs[s]] for s in range(t, t_len)]))
            worst = max(worst, float(np.abs(alpha[t - offset] * prod_le - alpha_p[t - offset]).max()))
            worst = max(worst, float(np.abs(beta[t - offset] * prod_gt - beta_p[t - offset]).max()))
    return CheckResult("unnormalized-recursion scaling relations", worst, 1e-10)


def check_scaling_invariance(n_models=20, seed=0):
    """Multiplying any per-step table by a positive constant leaves posteriors put."""
    rng = np.random.default_rng([seed, 5])
    worst = 0.0
    for k in range(n_models):
        kind = ("hmm", "hmm2", "hmm-cn")[k % 3]
        params = hh.random_model(kind, rng, 3, 2)
        t_len = int(rng.integers(2, 7))
        obs = _draw_obs(rng, 2, t_len)
        ent = hh.derive_entropic(params)
        if kind == "hmm2":
            alpha, beta = hh.efb2_tables(ent, params.trans2, obs)
            ref = hh.efb2_posterior_from_tables(alpha, beta)
            c = rng.uniform(0.1, 10.0, size=(alpha.shape[0], 1, 1))
            d = rng.uniform(0.1, 10.0, size=(alpha.shape[0], 1, 1))
            got = hh.efb2_posterior_from_tables(alpha * c, beta * d)
        else:
            tables = hh.efb_tables(ent, obs) if kind == "hmm" else hh.efb_cn_tables(ent, obs)
            alpha, beta = tables
            ref = hh.posterior_from_tables(alpha, beta)
            c = rng.uniform(0.1, 10.0, size=(alpha.shape[0], 1))
            d = rng.uniform(0.1, 10.0, size=(alpha.shape[0], 1))
            got = hh.posterior_from_tables(alpha * c, beta * d)
        worst = max(worst, float(np.abs(got - ref).max()))
    return CheckResult("per-step rescaling invariance", worst, 1e-12)


def gradient_check_model(model, emb, labels, step=1e-5):
    """Worst relative error between backprop and central differences.

    The relative error is |ad - fd| / max(|ad|, |fd|, 1e-6); the floor keeps
    finite-difference noise on near-zero gradients from dominating.
    """

    def loss_tensor():
        fresh_tape()
        logits = model.forward(Tensor(emb))
        return sequence_cross_entropy(logits, labels) * (1.0 / len(labels))

    params = model.parameters()
    for p in params:
        p.zero_grad()
    backward(loss_tensor())
    grads = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_tensor().item()
            flat[i] = keep - step
            dn = loss_tensor().item()
            flat[i] = keep
            fd = (up - dn) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(fd), 1e-6)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst


def check_gradients(seed=0, kinds=MODEL_KINDS, archs=(1, 2, 3),
                    seq_len=5, embedding_dim=4, n_labels=3):
    rng = np.random.default_rng([seed, 6])
    worst = 0.0
    for kind in kinds:
        for arch in archs:
            spec = ArchitectureSpec(kind, arch, n_labels, embedding_dim, hidden_size=3)
            model = build_model(spec, rng)
            emb = rng.normal(size=(seq_len, embedding_dim))
            labels = [int(rng.integers(0, n_labels)) for _ in range(seq_len)]
            worst = max(worst, gradient_check_model(model, emb, labels))
    return CheckResult("autodiff vs finite differences", worst, 1e-4)


def run_all(n_models=100, seed=0, max_states=4, max_length=6,
            efb_impl=None, include_gradients=True):
    results = [
        check_oracle_hmm(n_models, seed, max_states, max_length, efb_impl),
        check_oracle_hmm2(n_models, seed, max_states, max_length),
        check_oracle_cn(n_models, seed, min(max_states, 3), min(max_length, 5)),
        check_appendix_relations(20, seed),
        check_scaling_invariance(20, seed),
    ]
    if include_gradients:
        results.append(check_gradients(seed))
    return results
