"""Mini-batch gradient training, evaluation and checkpointing.

Batches group whole sequences; each sequence runs individually (no padding)
and the batch loss is the token-level mean of the summed cross-entropies,
so short and long sequences weigh their tokens equally. Per-stage parameter
groups get their own learning rates (first layer, then head/second layer).

Checkpoint file layout (all integers little-endian, documented here and
stable across versions):

    magic   8 bytes  b"HNMCCKP1"
    version uint32   currently 1
    config  uint32 length + UTF-8 JSON (sorted keys): model spec, training
            config echo, label names, embedding info, epoch, rng state
    count   uint32   number of tensors
    then per tensor, in named_parameters() order:
            uint32 name length + UTF-8 name
            uint32 ndim, uint32 per dimension
            float64 little-endian values, row-major

Loading rebuilds the model from the config echo and copies values back in,
which reproduces forward outputs bit-for-bit.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import metrics as mm
from .layers import ArchitectureSpec, build_model
from .tensor import Tensor, backward, fresh_tape, sequence_cross_entropy

CHECKPOINT_MAGIC = b"HNMCCKP1"
FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    lr_model: float = 0.005          # single-group architectures
    lr_layers: tuple = (0.05, 0.005)  # first layer, then head / second layer
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    optimizer: str = "adam"
    clip_norm: float | None = None
    metric: str = "accuracy"
    stop_at_dev: float | None = None  # early exit once dev metric reaches this

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # zero is allowed so a parameter group can be frozen
        if self.lr_model < 0 or any(lr < 0 for lr in self.lr_layers):
            raise ValueError("learning rates must not be negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self):
        d = self.__dict__.copy()
        d["lr_layers"] = list(self.lr_layers)
        return d


class Adam:
    """Adam with bias correction, one moment pair per parameter."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [(list(params), lr) for params, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.moments = [[(np.zeros_like(p.data), np.zeros_like(p.data)) for p in params]
                        for params, _ in self.groups]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for (params, lr), moms in zip(self.groups, self.moments):
            for p, (m, v) in zip(params, moms):
                g = p.grad
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params:
                p.zero_grad()


class Sgd:
    """Plain gradient descent: theta <- theta - lr * grad."""

    def __init__(self, groups):
        self.groups = [(list(params), lr) for params, lr in groups]
        self.t = 0

    def step(self):
        self.t += 1
        for params, lr in self.groups:
            for p in params:
                p.data -= lr * p.grad

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params:
                p.zero_grad()


def make_optimizer(model, config):
    groups = model.parameter_groups()
    if len(groups) == 1:
        lrs = [config.lr_model]
    else:
        lrs = list(config.lr_layers)
        if len(lrs) != len(groups):
            raise ValueError(
                f"{len(groups)} parameter groups need {len(groups)} learning rates, "
                f"got {len(lrs)}")
    paired = list(zip(groups, lrs))
    if config.optimizer == "sgd":
        return Sgd(paired)
    return Adam(paired, config.beta1, config.beta2, config.eps)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    dev_score: float | None


@dataclass
class TrainResult:
    log: list
    best_params: dict
    best_epoch: int
    best_score: float | None
    rng_state: dict = field(default_factory=dict)


def _grad_norm(params):
    return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))


def _clip_gradients(params, max_norm):
    norm = _grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale


def _snapshot(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


def _restore(model, params):
    for name, p in model.named_parameters():
        p.data[...] = params[name]


def train(model, train_data, dev_data, config):
    """Epoch loop over shuffled sequence batches; returns the best-dev state.

    The model is left holding the best parameters. Non-finite losses abort
    with epoch/batch diagnostics rather than training through NaNs.
    """
    if not train_data:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(model, config)
    all_params = model.parameters()
    log = []
    best_params, best_epoch, best_score = _snapshot(model), 0, None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_data)) if config.shuffle else np.arange(len(train_data))
        loss_total, token_total = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            fresh_tape()
            loss_sum = None
            n_tokens = 0
            for idx in batch:
                seq = train_data[int(idx)]
                logits = model.forward(Tensor(seq.embeddings))
                piece = sequence_cross_entropy(logits, seq.labels)
                loss_sum = piece if loss_sum is None else loss_sum + piece
                n_tokens += len(seq.labels)
            loss = loss_sum * (1.0 / n_tokens)
            if not np.isfinite(loss.item()):
                norms = {f"group{i}": float(np.sqrt(sum((p.data ** 2).sum() for p in g)))
                         for i, g in enumerate(model.parameter_groups())}
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}; "
                    f"parameter norms {norms}")
            opt.zero_grad()
            backward(loss)
            if config.clip_norm is not None:
                _clip_gradients(all_params, config.clip_norm)
            opt.step()
            loss_total += loss.item() * n_tokens
            token_total += n_tokens
        dev_score = None
        if dev_data:
            dev_score = evaluate(model, dev_data, config.metric)
        log.append(EpochStats(epoch, loss_total / token_total, dev_score))
        if dev_score is None:
            best_params, best_epoch = _snapshot(model), epoch
        elif best_score is None or dev_score > best_score:
            best_params, best_epoch, best_score = _snapshot(model), epoch, dev_score
        if (config.stop_at_dev is not None and dev_score is not None
                and dev_score >= config.stop_at_dev):
            break
    _restore(model, best_params)
    state = rng.bit_generator.state
    return TrainResult(log=log, best_params=best_params, best_epoch=best_epoch,
                       best_score=best_score, rng_state=state)


def evaluate(model, data, metric_kind, label_names=None):
    """Score argmax predictions; accuracy over tokens or span F1 over BIO tags."""
    if not data:
        raise ValueError("empty evaluation set")
    if metric_kind == "accuracy":
        pred_flat, gold_flat = [], []
        for seq in data:
            pred_flat += model.predict(seq.embeddings)
            gold_flat += list(seq.labels)
        return mm.token_accuracy(pred_flat, gold_flat)
    if metric_kind == "span_f1":
        if label_names is None:
            raise ValueError("span_f1 needs label names to read BIO tags")
        pred_seqs, gold_seqs = [], []
        for seq in data:
            pred_seqs.append([label_names[i] for i in model.predict(seq.embeddings)])
            gold_seqs.append([label_names[i] for i in seq.labels])
        return mm.span_f1(pred_seqs, gold_seqs)[2]
    raise ValueError(f"unknown metric {metric_kind!r}")


def save_checkpoint(path, model, config_extra):
    """Write the binary checkpoint documented in the module docstring."""
    config = dict(config_extra)
    config["format_version"] = FORMAT_VERSION
    config["model"] = model.spec.to_dict()
    payload = json.dumps(config, sort_keys=True).encode("utf-8")
    named = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", p.data.ndim))
            for dim in p.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    config: dict
    params: dict


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(clen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack("<" + "I" * ndim, fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            params[name] = data.astype(np.float64)
    return Checkpoint(config=config, params=params)


def model_from_checkpoint(ckpt):
    """Rebuild the architecture from the config echo and load its weights."""
    spec = ArchitectureSpec.from_dict(ckpt.config["model"])
    model = build_model(spec, np.random.default_rng(0))
    names = dict(model.named_parameters())
    if set(names) != set(ckpt.params):
        raise ValueError("checkpoint parameters do not match the declared architecture")
    for name, value in ckpt.params.items():
        if names[name].data.shape != value.shape:
            raise ValueError(f"shape mismatch for {name}: "
                             f"{names[name].data.shape} vs {value.shape}")
        names[name].data[...] = value
    return model
