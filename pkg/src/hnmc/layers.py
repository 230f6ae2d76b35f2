"""Differentiable sequence layers and the architecture builder.

The entropic layers run the forward-backward recursions of hnmc.hmm with a
positive-output kernel network in place of the probability-ratio tables:
the kernel eats an observation embedding concatenated with a one-hot state
encoding and emits one positive value per successor state. A layer's
output at position t therefore depends on the whole input sequence, unlike
a left-to-right recurrent cell. Recurrent baselines (tanh RNN and its
bidirectional concatenation) live here too, plus build_model() assembling
the three benchmark architectures:

1. a single model layer sized to the label set;
2. model layer at a chosen hidden size followed by an affine head;
3. two stacked model layers, the first layer's per-position features
   acting as the observation sequence of the second.
"""

import numpy as np

from . import tensor as tt
from .hmm import InferenceError
from .tensor import Tensor, matmul, melu, mul, reshape, row, stack, transpose, tsum

_ACTIVATIONS = {"melu": melu, "exp": tt.exp, "sigmoid": tt.sigmoid}


def _init_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _normalized(v):
    return v / tsum(v)


def _check_finite(k):
    if not np.all(np.isfinite(k.data)):
        raise InferenceError("non-finite kernel output")
    return k


class AffineKernel:
    """Single affine map + positive activation over (embedding, one-hot state).

    matrix(e) returns the (n_states_in, n_out) table the recursions consume;
    entry [j, i] is the network output i for input (e, one-hot(j)). The
    one-hot part of the weight enters as a per-(j, i) additive term, so the
    whole table comes out of one broadcast add.
    """

    def __init__(self, embedding_dim, n_states_in, n_out, activation="melu", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = embedding_dim + n_states_in
        self.obs_weight = _init_uniform(rng, (n_out, embedding_dim), fan_in)
        self.state_weight = _init_uniform(rng, (n_out, n_states_in), fan_in)
        self.bias = _init_uniform(rng, (n_out,), fan_in)
        self.activation = _ACTIVATIONS[activation]

    def matrix(self, emb):
        base = matmul(self.obs_weight, emb) + self.bias
        return self.activation(transpose(self.state_weight) + base)

    def named_parameters(self):
        return [("obs_weight", self.obs_weight), ("state_weight", self.state_weight),
                ("bias", self.bias)]


class TableKernel:
    """Exact lookup kernel over a finite one-hot observation alphabet.

    table[y] is the (n_states_in, n_out) slice returned for symbol y; a
    one-hot embedding selects it by contraction, so the lookup stays
    differentiable with respect to upstream features.
    """

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)
        m, n_in, n_out = self.table.shape
        self._flat = Tensor(self.table.reshape(m, n_in * n_out))
        self._shape = (n_in, n_out)

    def matrix(self, emb):
        return reshape(matmul(emb, self._flat), self._shape)

    def named_parameters(self):
        return []


class HnmcLayer:
    """Entropic forward-backward layer over an order-1 state chain."""

    def __init__(self, embedding_dim, n_states, activation="melu", rng=None,
                 kernel=None, initial_state=None):
        self.n_states = n_states
        self.out_width = n_states
        self.kernel = kernel if kernel is not None else AffineKernel(
            embedding_dim, n_states, n_states, activation, rng)
        init = np.ones(n_states) if initial_state is None else np.asarray(initial_state, float)
        if np.any(init <= 0.0):
            raise ValueError("initial state must be strictly positive")
        self.initial_state = Tensor(init)

    def forward(self, emb):
        T = emb.shape[0]
        ks = [_check_finite(self.kernel.matrix(row(emb, t))) for t in range(T)]
        alphas = [_normalized(matmul(self.initial_state, ks[0]))]
        for t in range(1, T):
            alphas.append(_normalized(matmul(alphas[-1], ks[t])))
        betas = [None] * T
        betas[T - 1] = Tensor(np.ones(self.n_states))
        for t in range(T - 2, -1, -1):
            betas[t] = _normalized(matmul(ks[t + 1], betas[t + 1]))
        return stack([_normalized(mul(a, b)) for a, b in zip(alphas, betas)])

    def named_parameters(self):
        return [("kernel." + n, p) for n, p in self.kernel.named_parameters()]


class Hnmc2Layer:
    """Entropic forward-backward layer over an order-2 state chain.

    Tables are pairwise: the kernel maps (embedding, one-hot state pair) to
    positive scores over the next state. Position marginals follow the
    order-2 combination rule: position 1 sums the first pair table over its
    second index, later positions sum their table over the first.
    """

    def __init__(self, embedding_dim, n_states, activation="melu", rng=None,
                 kernel=None, initial_pair=None):
        self.n_states = n_states
        self.out_width = n_states
        self.kernel = kernel if kernel is not None else AffineKernel(
            embedding_dim, n_states * n_states, n_states, activation, rng)
        init = np.ones((n_states, n_states)) if initial_pair is None else np.asarray(initial_pair, float)
        if np.any(init <= 0.0):
            raise ValueError("initial pair state must be strictly positive")
        self.initial_pair = Tensor(init)

    def _cube(self, emb_row):
        n = self.n_states
        return reshape(_check_finite(self.kernel.matrix(emb_row)), (n, n, n))

    @staticmethod
    def _step_forward(pair, cube):
        # out[j, i] = sum_k pair[k, j] * cube[k, j, i]
        n = cube.shape[0]
        return tsum(mul(reshape(pair, (n, n, 1)), cube), axis=0)

    @staticmethod
    def _step_backward(pair_next, cube_next):
        # out[j, i] = sum_k cube[j, i, k] * pair_next[i, k]
        return tsum(mul(cube_next, pair_next), axis=2)

    def forward(self, emb):
        T = emb.shape[0]
        n = self.n_states
        cubes = [self._cube(row(emb, t)) for t in range(T)]
        if T == 1:
            flat = tsum(mul(reshape(self.initial_pair, (n, n, 1)), cubes[0]), axis=(0, 1))
            return stack([_normalized(flat)])
        fwd = [_normalized(self._step_forward(self.initial_pair, cubes[0]))]
        for t in range(1, T):
            fwd.append(_normalized(self._step_forward(fwd[-1], cubes[t])))
        bwd = [None] * T  # bwd[t] pairs with position t+1; positions 2..T live at 1..T-1
        bwd[T - 1] = Tensor(np.ones((n, n)))
        for t in range(T - 2, 0, -1):
            bwd[t] = _normalized(self._step_backward(bwd[t + 1], cubes[t + 1]))
        feats = [_normalized(tsum(mul(fwd[1], bwd[1]), axis=1))]
        for t in range(1, T):
            feats.append(_normalized(tsum(mul(fwd[t], bwd[t]), axis=0)))
        return stack(feats)

    def named_parameters(self):
        return [("kernel." + n, p) for n, p in self.kernel.named_parameters()]


class HnmcCnLayer:
    """Entropic forward-backward layer with correlated-noise kernels.

    Two kernel networks, both mapping (embedding, one-hot source state) to
    positive scores over the target state: kernel_in consumes the current
    observation, kernel_out the next one. Their elementwise product is the
    per-step transition weight, used identically by the forward and
    backward recursions; the first forward vector contracts kernel_out over
    the initial state. Putting the target state on both kernels' output
    side is what lets a single affine map carry the observation-to-state
    affinity (output weights give a full observation/target interaction;
    an input one-hot only enters additively).
    """

    def __init__(self, embedding_dim, n_states, activation="melu", rng=None,
                 kernel_in=None, kernel_out=None, initial_state=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_states = n_states
        self.out_width = n_states
        self.kernel_in = kernel_in if kernel_in is not None else AffineKernel(
            embedding_dim, n_states, n_states, activation, rng)
        self.kernel_out = kernel_out if kernel_out is not None else AffineKernel(
            embedding_dim, n_states, n_states, activation, rng)
        init = np.ones(n_states) if initial_state is None else np.asarray(initial_state, float)
        if np.any(init <= 0.0):
            raise ValueError("initial state must be strictly positive")
        self.initial_state = Tensor(init)

    def forward(self, emb):
        T = emb.shape[0]
        kis = [_check_finite(self.kernel_in.matrix(row(emb, t))) for t in range(T)]
        kjs = [_check_finite(self.kernel_out.matrix(row(emb, t))) for t in range(T)]
        weights = [mul(kis[t], kjs[t + 1]) for t in range(T - 1)]
        alphas = [_normalized(matmul(self.initial_state, kjs[0]))]
        for t in range(1, T):
            alphas.append(_normalized(matmul(alphas[-1], weights[t - 1])))
        betas = [None] * T
        betas[T - 1] = Tensor(np.ones(self.n_states))
        for t in range(T - 2, -1, -1):
            betas[t] = _normalized(matmul(weights[t], betas[t + 1]))
        return stack([_normalized(mul(a, b)) for a, b in zip(alphas, betas)])

    def named_parameters(self):
        return ([("kernel_in." + n, p) for n, p in self.kernel_in.named_parameters()]
                + [("kernel_out." + n, p) for n, p in self.kernel_out.named_parameters()])


class RnnLayer:
    """Left-to-right tanh recurrence; output at t sees only positions <= t."""

    def __init__(self, embedding_dim, hidden_size, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = embedding_dim + hidden_size
        self.hidden_size = hidden_size
        self.out_width = hidden_size
        self.in_weight = _init_uniform(rng, (hidden_size, embedding_dim), fan_in)
        self.rec_weight = _init_uniform(rng, (hidden_size, hidden_size), fan_in)
        self.bias = _init_uniform(rng, (hidden_size,), fan_in)

    def _run(self, emb, order):
        h = Tensor(np.zeros(self.hidden_size))
        out = {}
        for t in order:
            h = tt.tanh(matmul(self.in_weight, row(emb, t)) + matmul(self.rec_weight, h) + self.bias)
            out[t] = h
        return [out[t] for t in range(len(order))]

    def forward(self, emb):
        return stack(self._run(emb, range(emb.shape[0])))

    def named_parameters(self):
        return [("in_weight", self.in_weight), ("rec_weight", self.rec_weight),
                ("bias", self.bias)]


class BiRnnLayer:
    """Two independent recurrences, one per direction, concatenated."""

    def __init__(self, embedding_dim, hidden_size, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hidden_size = hidden_size
        self.out_width = 2 * hidden_size
        self.fwd = RnnLayer(embedding_dim, hidden_size, rng)
        self.bwd = RnnLayer(embedding_dim, hidden_size, rng)

    def forward(self, emb):
        T = emb.shape[0]
        left = self.fwd._run(emb, range(T))
        right = self.bwd._run(emb, range(T - 1, -1, -1))
        return tt.concat(stack(left), stack(right), axis=1)

    def named_parameters(self):
        return ([("fwd." + n, p) for n, p in self.fwd.named_parameters()]
                + [("bwd." + n, p) for n, p in self.bwd.named_parameters()])


class AffineMap:
    """Position-wise affine head mapping (T, in) features to (T, out) scores."""

    def __init__(self, in_dim, out_dim, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.out_width = out_dim
        self.weight = _init_uniform(rng, (out_dim, in_dim), in_dim)
        self.bias = _init_uniform(rng, (out_dim,), in_dim)

    def forward(self, x):
        return matmul(x, transpose(self.weight)) + self.bias

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Stage:
    """A model layer plus an optional affine sizing projection."""

    def __init__(self, layer, proj=None):
        self.layer = layer
        self.proj = proj
        self.out_width = proj.out_width if proj is not None else layer.out_width

    def forward(self, x):
        y = self.layer.forward(x)
        return self.proj.forward(y) if self.proj is not None else y

    def named_parameters(self):
        named = [("layer." + n, p) for n, p in self.layer.named_parameters()]
        if self.proj is not None:
            named += [("proj." + n, p) for n, p in self.proj.named_parameters()]
        return named


MODEL_KINDS = ("rnn", "birnn", "hnmc", "hnmc2", "hnmc-cn")


class ArchitectureSpec:
    """What to build: model kind, architecture 1/2/3, widths."""

    def __init__(self, model_kind, arch, n_labels, embedding_dim,
                 hidden_size=None, activation="melu"):
        if model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {model_kind!r}")
        if arch not in (1, 2, 3):
            raise ValueError(f"architecture must be 1, 2 or 3, got {arch!r}")
        if arch in (2, 3) and not hidden_size:
            raise ValueError(f"architecture {arch} needs a hidden size")
        self.model_kind = model_kind
        self.arch = arch
        self.n_labels = n_labels
        self.embedding_dim = embedding_dim
        self.hidden_size = hidden_size
        self.activation = activation

    def to_dict(self):
        return {"model_kind": self.model_kind, "arch": self.arch,
                "n_labels": self.n_labels, "embedding_dim": self.embedding_dim,
                "hidden_size": self.hidden_size, "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _make_layer(kind, in_dim, width, activation, rng):
    if kind == "rnn":
        return RnnLayer(in_dim, width, rng)
    if kind == "birnn":
        return BiRnnLayer(in_dim, width, rng)
    if kind == "hnmc":
        return HnmcLayer(in_dim, width, activation, rng)
    if kind == "hnmc2":
        return Hnmc2Layer(in_dim, width, activation, rng)
    return HnmcCnLayer(in_dim, width, activation, rng)


def _sized_stage(kind, in_dim, width, activation, rng):
    """A stage whose output width is exactly `width`.

    The bidirectional layer concatenates two directions and cannot match an
    arbitrary width natively, so it gets an affine projection; every other
    kind sizes itself.
    """
    layer = _make_layer(kind, in_dim, width, activation, rng)
    proj = AffineMap(layer.out_width, width, rng) if layer.out_width != width else None
    return Stage(layer, proj)


class LabeledModel:
    """A stack of stages mapping (T, D) embeddings to (T, n_labels) logits.

    Class probabilities are softmax(logits); training feeds the logits to
    the cross-entropy, prediction takes the row argmax (which softmax does
    not change).
    """

    def __init__(self, spec, blocks):
        self.spec = spec
        self.blocks = blocks

    def forward(self, emb):
        x = emb if isinstance(emb, Tensor) else Tensor(emb)
        for block in self.blocks:
            x = block.forward(x)
        return x

    def predict(self, emb):
        """Argmax label per position; first index wins ties."""
        logits = self.forward(emb)
        return [int(i) for i in np.argmax(logits.data, axis=1)]

    def parameter_groups(self):
        return [[p for _, p in block.named_parameters()] for block in self.blocks]

    def parameters(self):
        return [p for group in self.parameter_groups() for p in group]

    def named_parameters(self):
        out = []
        for i, block in enumerate(self.blocks):
            out += [(f"stage{i}.{n}", p) for n, p in block.named_parameters()]
        return out

    def n_parameters(self):
        return sum(p.data.size for p in self.parameters())


def build_model(spec, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    kind, act = spec.model_kind, spec.activation
    if spec.arch == 1:
        blocks = [_sized_stage(kind, spec.embedding_dim, spec.n_labels, act, rng)]
    elif spec.arch == 2:
        layer = _make_layer(kind, spec.embedding_dim, spec.hidden_size, act, rng)
        head = AffineMap(layer.out_width, spec.n_labels, rng)
        blocks = [Stage(layer), head]
    else:
        first = _make_layer(kind, spec.embedding_dim, spec.hidden_size, act, rng)
        second = _sized_stage(kind, first.out_width, spec.n_labels, act, rng)
        blocks = [Stage(first), second]
    return LabeledModel(spec, blocks)


def hnmc_table_layer(ent):
    """Order-1 layer whose kernel looks up exact entropic ratio tables.

    For symbol y the kernel slice is p(x_i|y)/pi_i * a_{ji}; seeding the
    recursion with pi reproduces the probabilistic base case because
    sum_j pi_j a_{ji} = pi_i. Feeding one-hot symbol embeddings then makes
    the layer output equal the exact posterior marginals.
    """
    m, n = ent.obs_post.shape
    table = np.zeros((m, n, n))
    for y in range(m):
        table[y] = ent.trans * (ent.obs_post[y] / ent.pi)[None, :]
    return HnmcLayer(embedding_dim=m, n_states=n, kernel=TableKernel(table),
                     initial_state=ent.pi)


def hnmc2_table_layer(ent, trans2):
    """Order-2 lookup layer; seeded with the stationary pair distribution."""
    m, n = ent.obs_post.shape
    table = np.zeros((m, n * n, n))
    for y in range(m):
        cube = trans2 * (ent.obs_post[y] / ent.pi)[None, None, :]
        table[y] = cube.reshape(n * n, n)
    pair = ent.pi[:, None] * ent.trans
    return Hnmc2Layer(embedding_dim=m, n_states=n, kernel=TableKernel(table),
                      initial_pair=pair)


def hnmc_cn_table_layer(ent):
    """Correlated-noise lookup layer.

    kernel_in carries p(next|cur, y_cur)/a at [cur, next]; kernel_out
    carries the observation posterior of the next state times the reversed
    conditional over pi, also at [cur, next] (the factor tied to the next
    symbol rides with the kernel that sees it).
    """
    m, n = ent.obs_post.shape
    table_in = np.zeros((m, n, n))
    table_out = np.zeros((m, n, n))
    for y in range(m):
        table_in[y] = ent.trans_given_obs[:, y, :] / ent.trans
        table_out[y] = (ent.rev_trans_given_obs[:, y, :].T * ent.obs_post[y][None, :]
                        / ent.pi[:, None])
    return HnmcCnLayer(embedding_dim=m, n_states=n,
                       kernel_in=TableKernel(table_in),
                       kernel_out=TableKernel(table_out),
                       initial_state=ent.pi)
