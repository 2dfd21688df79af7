"""Shared-trunk MLP with policy, value and transition-classifier heads.

All parameters live in one flat float64 vector; layers are numpy views
into it. Gradients are computed analytically, one row per sample, and
folded into the accumulators in sample order so that accumulating a
batch is bit-identical to accumulating its samples one at a time.

Block layout (in order)::

    trunk.{i}.W, trunk.{i}.b        shared feature extractor phi(s)
    pi.W, pi.b [, pi.log_std]       policy head (logits or Gaussian mean)
    v.W, v.b                        value head
    ctrunk.{i}.W, ctrunk.{i}.b      classifier trunk (separate variant only)
    c.{j}.W, c.{j}.b                classifier head on [phi(s), phi(s')]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import InvalidInputError, Transition

LOG_STD_BOUNDS = (-3.0, 0.0)
LOGIT_CLIP = 30.0


@dataclass(frozen=True)
class Layout:
    obs_dim: int
    hidden: tuple[int, ...]
    n_actions: int
    shared: bool = True
    clf_hidden: int = 32
    policy: str = "categorical"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.obs_dim < 1 or self.n_actions < 1:
            raise InvalidInputError("obs_dim and n_actions must be >= 1")
        if any(h < 1 for h in self.hidden) or self.clf_hidden < 0:
            raise InvalidInputError("layer widths must be positive")
        if self.policy not in ("categorical", "gaussian"):
            raise InvalidInputError(f"unknown policy kind {self.policy!r}")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1] if self.hidden else self.obs_dim

    def _trunk_blocks(self, prefix):
        widths = (self.obs_dim,) + self.hidden
        out = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            out += [(f"{prefix}.{i}.W", (a, b)), (f"{prefix}.{i}.b", (b,))]
        return out

    @cached_property
    def blocks(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        """Map block name -> (offset, shape)."""
        f = self.feature_dim
        spec = self._trunk_blocks("trunk")
        spec += [("pi.W", (f, self.n_actions)), ("pi.b", (self.n_actions,))]
        if self.policy == "gaussian":
            spec.append(("pi.log_std", (self.n_actions,)))
        spec += [("v.W", (f, 1)), ("v.b", (1,))]
        if not self.shared:
            spec += self._trunk_blocks("ctrunk")
        widths = [2 * f] + ([self.clf_hidden] if self.clf_hidden else []) + [1]
        for j, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            spec += [(f"c.{j}.W", (a, b)), (f"c.{j}.b", (b,))]
        out, off = {}, 0
        for name, shape in spec:
            out[name] = (off, shape)
            off += math.prod(shape)
        return out

    @cached_property
    def size(self) -> int:
        off, shape = list(self.blocks.values())[-1]
        return off + math.prod(shape)

    @property
    def n_trunk_layers(self) -> int:
        return len(self.hidden)

    @property
    def n_clf_layers(self) -> int:
        return 2 if self.clf_hidden else 1

    def trunk_size(self) -> int:
        return sum(math.prod(s) for n, (_, s) in self.blocks.items() if n.startswith("trunk."))


class ModelParams:
    """Flat parameter vector plus the layout that gives it structure."""

    def __init__(self, layout: Layout, values=None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.size)
        values = np.array(values, dtype=np.float64)
        if values.shape != (layout.size,):
            raise InvalidInputError(
                f"parameter vector has {values.size} entries, layout needs {layout.size}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("parameters contain non-finite entries")
        self.values = values
        self._views: dict[str, np.ndarray] = {}

    def block(self, name: str) -> np.ndarray:
        v = self._views.get(name)
        if v is None:
            off, shape = self.layout.blocks[name]
            v = self._views[name] = self.values[off : off + math.prod(shape)].reshape(shape)
        return v

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.values.copy())

    def __repr__(self):
        return f"ModelParams({self.layout}, n={self.values.size})"


class GradAccumulator:
    """Separate accumulators for the policy objective and the two losses.

    ``policy`` holds an ascent direction; ``value`` and ``classifier`` hold
    loss gradients that are descended when applied.
    """

    def __init__(self, params: ModelParams):
        n = params.layout.size
        self.policy = np.zeros(n)
        self.value = np.zeros(n)
        self.classifier = np.zeros(n)

    def reset(self):
        self.policy[:] = 0.0
        self.value[:] = 0.0
        self.classifier[:] = 0.0


def init_params(
    seed: int,
    obs_dim: int,
    hidden=(64, 64),
    n_actions: int = 4,
    shared: bool = True,
    clf_hidden: int = 32,
    policy: str = "categorical",
    init_log_std: float = -0.5,
) -> ModelParams:
    layout = Layout(obs_dim, tuple(hidden), n_actions, shared, clf_hidden, policy)
    p = ModelParams(layout)
    rng = np.random.default_rng(seed)
    last_clf = f"c.{layout.n_clf_layers - 1}.W"
    for name, (_, shape) in layout.blocks.items():
        if not name.endswith(".W"):
            continue
        bound = math.sqrt(6.0 / (shape[0] + shape[1]))
        w = p.block(name)
        w[...] = rng.uniform(-bound, bound, size=shape)
        # near-uniform initial policy and c close to 0.5
        if name == "pi.W" or name == last_clf:
            w *= 0.01
    if policy == "gaussian":
        p.block("pi.log_std")[...] = init_log_std
    return p


# -- forward -------------------------------------------------------------------


def _affine(x, w, b):
    # einsum without BLAS: each row is computed independently of batch size
    return np.einsum("bi,io->bo", x, w, optimize=False) + b


def _mlp(p: ModelParams, x: np.ndarray, prefix: str, n_layers: int, relu_last=True, fast=False):
    """Return the list of layer inputs/outputs [x, a1, ..., an].

    ``fast`` uses BLAS matmul; fine for inference, but rows may then depend
    on batch composition in the last bit, so gradient code never sets it.
    """
    acts = [x]
    for i in range(n_layers):
        w, b = p.block(f"{prefix}.{i}.W"), p.block(f"{prefix}.{i}.b")
        z = acts[-1] @ w + b if fast else _affine(acts[-1], w, b)
        if relu_last or i < n_layers - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def _batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InvalidInputError(f"expected states of length {dim}, got shape {x.shape}")
    return x


def features(p: ModelParams, states, prefix: str = "trunk") -> np.ndarray:
    x = _batch(states, p.layout.obs_dim)
    return _mlp(p, x, prefix, p.layout.n_trunk_layers, fast=True)[-1]


def _heads(p, phi):
    head = phi @ p.block("pi.W") + p.block("pi.b")
    value = (phi @ p.block("v.W") + p.block("v.b"))[:, 0]
    return head, value


def policy_value_batch(p: ModelParams, states) -> tuple[np.ndarray, np.ndarray]:
    """Policy head outputs (logits or Gaussian means) and values for a batch."""
    return _heads(p, features(p, states))


def policy_value_forward(p: ModelParams, s) -> tuple[np.ndarray, float]:
    head, value = policy_value_batch(p, _batch(s, p.layout.obs_dim)[:1])
    return head[0], float(value[0])


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def _clf_trunk(layout: Layout) -> str:
    return "trunk" if layout.shared else "ctrunk"


def classifier_logits(p: ModelParams, states, next_states) -> np.ndarray:
    lay = p.layout
    x1, x2 = _batch(states, lay.obs_dim), _batch(next_states, lay.obs_dim)
    if x1.shape != x2.shape:
        raise InvalidInputError("state batches differ in shape")
    prefix = _clf_trunk(lay)
    both = features(p, np.concatenate([x1, x2]), prefix)
    return _clf_head(p, both[: len(x1)], both[len(x1) :])


def _clf_head(p, f1, f2):
    h = np.concatenate([f1, f2], axis=1)
    return _mlp(p, h, "c", p.layout.n_clf_layers, relu_last=False, fast=True)[-1][:, 0]


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def classify_batch(p: ModelParams, states, next_states) -> np.ndarray:
    """Estimated probability that each transition was produced by the expert."""
    return sigmoid(classifier_logits(p, states, next_states))


def classify_transition(p: ModelParams, t: Transition) -> float:
    return float(classify_batch(p, t.s, t.s_next)[0])


def step_outputs(p: ModelParams, s, candidates) -> tuple[np.ndarray, float, np.ndarray]:
    """Policy head, value and candidate-transition scores from one trunk pass.

    ``candidates`` holds the possible next states of ``s``, one per action.
    """
    lay = p.layout
    x = np.vstack([s, candidates])
    if x.shape[1] != lay.obs_dim:
        raise InvalidInputError(f"expected states of length {lay.obs_dim}")
    phi = _mlp(p, x, "trunk", lay.n_trunk_layers, fast=True)[-1]
    head, value = _heads(p, phi[:1])
    f = phi if lay.shared else _mlp(p, x, "ctrunk", lay.n_trunk_layers, fast=True)[-1]
    n = len(x) - 1
    scores = sigmoid(_clf_head(p, np.broadcast_to(f[0], (n, f.shape[1])), f[1:]))
    return head[0], float(value[0]), scores


# -- per-sample gradients ------------------------------------------------------


def _backprop_mlp(p, acts, d_out, prefix, n_layers, grads, relu_last=True):
    """Backpropagate ``d_out`` through an MLP, adding per-sample grads into ``grads``.

    Returns the gradient with respect to the MLP input.
    """
    lay = p.layout
    d = d_out
    for i in reversed(range(n_layers)):
        if relu_last or i < n_layers - 1:
            d = d * (acts[i + 1] > 0.0)
        w_off, w_shape = lay.blocks[f"{prefix}.{i}.W"]
        b_off, b_shape = lay.blocks[f"{prefix}.{i}.b"]
        n_w = w_shape[0] * w_shape[1]
        grads[:, w_off : w_off + n_w] += np.einsum("bi,bo->bio", acts[i], d).reshape(len(d), n_w)
        grads[:, b_off : b_off + b_shape[0]] += d
        d = np.einsum("bo,io->bi", d, p.block(f"{prefix}.{i}.W"), optimize=False)
    return d


def _head_grads(p, phi, d_head, name, grads):
    off, shape = p.layout.blocks[f"{name}.W"]
    n_w = shape[0] * shape[1]
    grads[:, off : off + n_w] += np.einsum("bi,bo->bio", phi, d_head).reshape(len(phi), n_w)
    boff, bshape = p.layout.blocks[f"{name}.b"]
    grads[:, boff : boff + bshape[0]] += d_head
    return np.einsum("bo,io->bi", d_head, p.block(f"{name}.W"), optimize=False)


def gaussian_log_prob(mean, log_std, actions):
    var = np.exp(2.0 * log_std)
    return np.sum(-0.5 * (actions - mean) ** 2 / var - log_std - 0.5 * math.log(2 * math.pi), axis=-1)


def gaussian_entropy(log_std):
    return float(np.sum(log_std + 0.5 * math.log(2 * math.pi * math.e)))


def policy_grads(p, states, actions, advantages, entropy_coef) -> np.ndarray:
    """Per-sample gradients of log pi(a|s) * A + beta * H(pi(.|s))."""
    lay = p.layout
    x = _batch(states, lay.obs_dim)
    adv = np.broadcast_to(np.asarray(advantages, dtype=np.float64), (len(x),))
    acts = _mlp(p, x, "trunk", lay.n_trunk_layers)
    head = _affine(acts[-1], p.block("pi.W"), p.block("pi.b"))
    grads = np.zeros((len(x), lay.size))
    if lay.policy == "categorical":
        a = np.asarray(actions, dtype=np.int64).reshape(len(x))
        if np.any(a < 0) or np.any(a >= lay.n_actions):
            raise InvalidInputError("action id out of range")
        probs = softmax(head)
        logp = np.log(np.maximum(probs, 1e-300))
        ent = -np.sum(probs * logp, axis=1)
        d_head = -probs * adv[:, None]
        d_head[np.arange(len(x)), a] += adv
        d_head -= entropy_coef * probs * (logp + ent[:, None])
    else:
        a = np.asarray(actions, dtype=np.float64).reshape(len(x), lay.n_actions)
        log_std = p.block("pi.log_std")
        inv_var = np.exp(-2.0 * log_std)
        diff = a - head
        d_head = diff * inv_var * adv[:, None]
        off, _ = lay.blocks["pi.log_std"]
        grads[:, off : off + lay.n_actions] += (diff**2 * inv_var - 1.0) * adv[:, None] + entropy_coef
    d_phi = _head_grads(p, acts[-1], d_head, "pi", grads)
    _backprop_mlp(p, acts, d_phi, "trunk", lay.n_trunk_layers, grads)
    return grads


def value_grads(p, states, targets) -> np.ndarray:
    """Per-sample gradients of 0.5 * (target - v(s))**2."""
    lay = p.layout
    x = _batch(states, lay.obs_dim)
    targets = np.broadcast_to(np.asarray(targets, dtype=np.float64), (len(x),))
    acts = _mlp(p, x, "trunk", lay.n_trunk_layers)
    v = _affine(acts[-1], p.block("v.W"), p.block("v.b"))[:, 0]
    grads = np.zeros((len(x), lay.size))
    d_phi = _head_grads(p, acts[-1], (v - targets)[:, None], "v", grads)
    _backprop_mlp(p, acts, d_phi, "trunk", lay.n_trunk_layers, grads)
    return grads


def classifier_grads(p, states, next_states, labels) -> np.ndarray:
    """Per-sample gradients of the binary cross-entropy (expert label 1)."""
    lay = p.layout
    x1, x2 = _batch(states, lay.obs_dim), _batch(next_states, lay.obs_dim)
    n = len(x1)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.float64), (n,))
    prefix = _clf_trunk(lay)
    t1 = _mlp(p, x1, prefix, lay.n_trunk_layers)
    t2 = _mlp(p, x2, prefix, lay.n_trunk_layers)
    h = np.concatenate([t1[-1], t2[-1]], axis=1)
    cacts = _mlp(p, h, "c", lay.n_clf_layers, relu_last=False)
    z = cacts[-1][:, 0]
    d_z = (0.5 * (1.0 + np.tanh(0.5 * z)) - labels)[:, None]
    grads = np.zeros((n, lay.size))
    d_h = _backprop_mlp(p, cacts, d_z, "c", lay.n_clf_layers, grads, relu_last=False)
    f = lay.feature_dim
    _backprop_mlp(p, t1, d_h[:, :f], prefix, lay.n_trunk_layers, grads)
    _backprop_mlp(p, t2, d_h[:, f:], prefix, lay.n_trunk_layers, grads)
    return grads


def _fold(acc: np.ndarray, rows: np.ndarray):
    for row in rows:
        acc += row


def accumulate_policy_grad(p, g: GradAccumulator, s, a, advantage, entropy_coef: float):
    _fold(g.policy, policy_grads(p, s, a, advantage, entropy_coef))


def accumulate_value_grad(p, g: GradAccumulator, s, target):
    _fold(g.value, value_grads(p, s, target))


def accumulate_classifier_grad(p, g: GradAccumulator, t, label):
    """``t`` is a Transition or a pair of state batches ``(states, next_states)``."""
    s, s_next = (t.s, t.s_next) if isinstance(t, Transition) else t
    _fold(g.classifier, classifier_grads(p, s, s_next, label))


def _clipped(v: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm > 0.0:
        norm = float(np.sqrt(np.dot(v, v)))
        if norm > max_norm:
            return v * (max_norm / norm)
    return v


def apply_grads(p: ModelParams, g: GradAccumulator, learning_rate: float, max_norm: float = 0.0):
    """Ascend the policy objective, descend value and classifier losses, reset ``g``.

    ``max_norm > 0`` caps the norm of each of the three directions separately.
    """
    step = (
        _clipped(g.policy, max_norm)
        - _clipped(g.value, max_norm)
        - _clipped(g.classifier, max_norm)
    )
    p.values += learning_rate * step
    if p.layout.policy == "gaussian":
        # projected step: keeps exploration noise within the action range
        np.clip(p.block("pi.log_std"), *LOG_STD_BOUNDS, out=p.block("pi.log_std"))
    g.reset()


# -- losses for telemetry ------------------------------------------------------


def value_loss(p, states, targets) -> float:
    _, v = policy_value_batch(p, states)
    return float(np.mean(0.5 * (np.asarray(targets) - v) ** 2))


def classifier_loss(p, states, next_states, labels) -> float:
    z = classifier_logits(p, states, next_states)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - labels * z))


# -- gradient verification -----------------------------------------------------


def _reference_losses(layout: Layout, theta: np.ndarray, sample: dict, heads=(0, 1, 2)) -> tuple:
    """Plain extended-precision forward pass returning the three scalar objectives.

    Written independently of the vectorized code above; only the block
    layout is shared. Objectives not listed in ``heads`` come back as 0.
    """

    def blk(name):
        off, shape = layout.blocks[name]
        return theta[off : off + math.prod(shape)].reshape(shape)

    def trunk(x, prefix):
        for i in range(layout.n_trunk_layers):
            x = np.maximum(x @ blk(f"{prefix}.{i}.W") + blk(f"{prefix}.{i}.b"), 0)
        return x

    pol = val = clf = 0.0
    if 0 in heads or 1 in heads:
        phi = trunk(sample["s"], "trunk")
    if 0 in heads:
        out = phi @ blk("pi.W") + blk("pi.b")
        if layout.policy == "categorical":
            m = out.max()
            logz = m + np.log(np.sum(np.exp(out - m)))
            logp = out - logz
            pol = logp[sample["a"]] * sample["adv"] - sample["beta"] * np.sum(np.exp(logp) * logp)
        else:
            ls = blk("pi.log_std")
            a = sample["a"]
            logp = np.sum(-0.5 * (a - out) ** 2 / np.exp(2 * ls) - ls - 0.5 * np.log(2 * np.pi))
            pol = logp * sample["adv"] + sample["beta"] * np.sum(ls + 0.5 * np.log(2 * np.pi * np.e))
    if 1 in heads:
        v = (phi @ blk("v.W") + blk("v.b"))[0]
        val = 0.5 * (sample["target"] - v) ** 2
    if 2 in heads:
        prefix = "trunk" if layout.shared else "ctrunk"
        h = np.concatenate([trunk(sample["s"], prefix), trunk(sample["s2"], prefix)])
        if layout.clf_hidden:
            h = np.maximum(h @ blk("c.0.W") + blk("c.0.b"), 0)
            z = (h @ blk("c.1.W") + blk("c.1.b"))[0]
        else:
            z = (h @ blk("c.0.W") + blk("c.0.b"))[0]
        y = sample["label"]
        clf = np.logaddexp(0, z) - y * z
    return pol, val, clf


def _dependent_heads(layout: Layout, name: str) -> tuple[int, ...]:
    """Objectives (policy 0, value 1, classifier 2) that read block ``name``."""
    if name.startswith("trunk."):
        return (0, 1, 2) if layout.shared else (0, 1)
    if name.startswith("pi."):
        return (0,)
    if name.startswith("v."):
        return (1,)
    return (2,)


def _analytic_grads(p: ModelParams, sample: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g = GradAccumulator(p)
    accumulate_policy_grad(p, g, sample["s"], sample["a"], sample["adv"], sample["beta"])
    accumulate_value_grad(p, g, sample["s"], sample["target"])
    accumulate_classifier_grad(p, g, (sample["s"], sample["s2"]), sample["label"])
    return g.policy, g.value, g.classifier


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max |a - n| / max(|a|, |n|) over entries where both exceed ``floor``.

    Entries where only one side is tiny must agree to ``floor`` absolutely.
    """
    a, n = np.abs(analytic), np.abs(numeric)
    both = (a > floor) & (n > floor)
    err = 0.0
    if np.any(both):
        err = float(np.max(np.abs(analytic - numeric)[both] / np.maximum(a, n)[both]))
    rest = ~both
    if np.any(rest) and np.max(np.abs(analytic - numeric)[rest]) > floor:
        err = max(err, 1.0)
    return err


def grad_check(
    seed: int,
    epsilon: float = 1e-5,
    obs_dim: int = 8,
    hidden=(16, 16),
    n_actions: int = 4,
    shared: bool = True,
    clf_hidden: int = 8,
    policy: str = "categorical",
) -> float:
    """Compare analytic gradients of all three heads with central differences.

    Returns the maximum relative error over every parameter.
    """
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    p = init_params(seed, obs_dim, hidden, n_actions, shared, clf_hidden, policy)
    p.values[:] = rng.normal(0.0, 0.5, size=p.values.size)
    if policy == "gaussian":
        a = rng.normal(size=n_actions)
    else:
        a = int(rng.integers(n_actions))
    sample = dict(
        s=rng.normal(size=obs_dim),
        s2=rng.normal(size=obs_dim),
        a=a,
        adv=float(rng.normal()),
        beta=float(rng.uniform(0.0, 0.1)),
        target=float(rng.normal()),
        label=float(rng.integers(2)),
    )
    analytic = _analytic_grads(p, sample)

    ext = {k: (np.asarray(v, dtype=np.longdouble) if k in ("s", "s2") or policy == "gaussian" and k == "a" else v)
           for k, v in sample.items()}
    theta = p.values.astype(np.longdouble)
    eps = np.longdouble(epsilon)
    numeric = np.zeros((3, theta.size))
    # blocks an objective cannot read keep a numeric gradient of exactly 0,
    # so a stray analytic entry there still registers as an error
    for name, (off, shape) in p.layout.blocks.items():
        heads = _dependent_heads(p.layout, name)
        for i in range(off, off + math.prod(shape)):
            old = theta[i]
            theta[i] = old + eps
            plus = _reference_losses(p.layout, theta, ext, heads)
            theta[i] = old - eps
            minus = _reference_losses(p.layout, theta, ext, heads)
            theta[i] = old
            for h in heads:
                numeric[h, i] = float((plus[h] - minus[h]) / (2 * eps))
    return max(relative_error(analytic[h], numeric[h]) for h in range(3))
