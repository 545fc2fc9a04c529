"""Dense layer math with hand-written gradients, optimizers, and a gradient checker.

Everything runs in float64. Inputs may be single vectors (n,) or batches
(B, n); parameter gradients are summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class Layer:
    """One affine layer: y = act(x @ w.T + b), w is (out, in)."""

    w: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.ndim != 1 or self.b.shape[0] != self.w.shape[0]:
            raise ShapeError(
                f"layer wants w (out, in) and b (out,), got {self.w.shape} / {self.b.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MlpParams:
    """A stack of Layers with matching inner dimensions."""

    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.w.shape[0] != nxt.w.shape[1]:
                raise ShapeError(
                    f"layer widths disagree: {prev.w.shape[0]} feeds {nxt.w.shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[0]

    def param_arrays(self) -> list[np.ndarray]:
        """Flat view of all parameter arrays (shared memory, update in place)."""
        out = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers]
        )


def init_mlp(sizes, activations=None, rng=None) -> MlpParams:
    """Xavier/Glorot-uniform initialized MLP; `sizes` includes input width.

    activations defaults to relu on hidden layers and identity on the last.
    """
    rng = np.random.default_rng(rng)
    n_layers = len(sizes) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    layers = []
    for i in range(n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), activations[i]))
    return MlpParams(layers)


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(name, z, a):
    # a is the already-computed activation of z
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class MlpCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # per layer, (B, in)
    pre: list[np.ndarray] = field(default_factory=list)  # per layer, (B, out)
    post: list[np.ndarray] = field(default_factory=list)  # per layer, (B, out)
    single: bool = False


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, MlpCache]:
    """Forward pass; returns (output, cache) where cache supports backward."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.ndim != 2 or a.shape[1] != params.in_dim:
        raise ShapeError(f"input width {a.shape[-1]} != first layer width {params.in_dim}")
    cache = MlpCache(single=single)
    for layer in params.layers:
        z = a @ layer.w.T + layer.b
        post = _activate(layer.activation, z)
        cache.inputs.append(a)
        cache.pre.append(z)
        cache.post.append(post)
        a = post
    return (a[0] if single else a), cache


def mlp_backward(params: MlpParams, cache: MlpCache, grad_output):
    """Backprop through a cached forward pass.

    Returns (param_grads, grad_input) with param_grads a list of (dw, db)
    per layer, summed over the batch.
    """
    g = np.atleast_2d(np.asarray(grad_output, dtype=np.float64))
    if len(cache.pre) != len(params.layers):
        raise ShapeError("cache layer count does not match params")
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(
            f"grad_output shape {g.shape} != forward output shape {cache.pre[-1].shape}"
        )
    grads = [None] * len(params.layers)
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        g = g * _activate_grad(layer.activation, cache.pre[i], cache.post[i])
        grads[i] = (g.T @ cache.inputs[i], g.sum(axis=0))
        g = g @ layer.w
    return grads, (g[0] if cache.single else g)


def grads_to_arrays(param_grads) -> list[np.ndarray]:
    out = []
    for dw, db in param_grads:
        out.append(dw)
        out.append(db)
    return out


def accumulate_grads(total, part, scale=1.0):
    """total += scale * part, elementwise over a (dw, db) grad list."""
    if total is None:
        return [(dw * scale, db * scale) for dw, db in part]
    return [
        (tw + dw * scale, tb + db * scale)
        for (tw, tb), (dw, db) in zip(total, part)
    ]


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    """State for sgd/adam over a fixed list of parameter arrays."""

    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None

    def ensure_moments(self, params):
        if self.algorithm == "adam" and self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def adam_step(params: list, grads: list, state: OptimizerState) -> list:
    """One Adam update, in place. Returns params for convenience."""
    state.ensure_moments(params)
    if len(grads) != len(params):
        raise ShapeError("grads and params length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(p)):
            raise NumericError("adam_step produced non-finite parameters")
    return params


def sgd_step(params: list, grads: list, state: OptimizerState) -> list:
    if len(grads) != len(params):
        raise ShapeError("grads and params length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to sgd_step")
    state.step += 1
    for p, g in zip(params, grads):
        p -= state.lr * g
    return params


def make_optimizer(params, algorithm="adam", lr=1e-3) -> OptimizerState:
    state = OptimizerState(algorithm=algorithm, lr=lr)
    state.ensure_moments(params)
    return state


def optimizer_step(params, grads, state: OptimizerState):
    if state.algorithm == "adam":
        return adam_step(params, grads, state)
    if state.algorithm == "sgd":
        return sgd_step(params, grads, state)
    raise ValueError(f"unknown optimizer {state.algorithm!r}")


# ---------------------------------------------------------------------------
# normalization and gradient checking


def l2_normalize(v, eps: float = 1e-12) -> np.ndarray:
    """Unit-normalize v; inputs with norm <= eps map to the fixed basis vector e1."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= eps:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / n


def l2_normalize_rows(x, eps: float = 1e-12) -> np.ndarray:
    """Row-wise l2_normalize with the same degenerate rule."""
    x = np.asarray(np.atleast_2d(x), dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    dead = norms <= eps
    safe = np.where(dead, 1.0, norms)
    out = x / safe[:, None]
    if np.any(dead):
        out[dead] = 0.0
        out[dead, 0] = 1.0
    return out


def l2_normalize_rows_backward(x, grad_out, eps: float = 1e-12) -> np.ndarray:
    """Backprop through xi = x / ||x|| row-wise.

    Degenerate rows (norm <= eps) produce a constant output, so their
    gradient is zero.
    """
    x = np.asarray(np.atleast_2d(x), dtype=np.float64)
    g = np.atleast_2d(grad_out)
    norms = np.linalg.norm(x, axis=1)
    dead = norms <= eps
    safe = np.where(dead, 1.0, norms)
    xi = x / safe[:, None]
    dots = np.sum(xi * g, axis=1, keepdims=True)
    grad = (g - xi * dots) / safe[:, None]
    grad[dead] = 0.0
    return grad


def finite_diff_check(fn, theta, epsilon: float = 1e-5) -> float:
    """Max relative error between fn's analytic gradient and central differences.

    fn(theta) must return (loss, grad) for a flat float64 vector theta.
    Relative error per coordinate is |a - fd| / max(|a|, |fd|, 1e-8).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    theta = np.asarray(theta, dtype=np.float64).copy()
    loss, grad = fn(theta)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("loss_fn returned non-finite values")
    if grad.shape != theta.shape:
        raise ShapeError("analytic gradient shape != parameter shape")
    worst = 0.0
    for i in range(theta.size):
        t = theta.copy()
        t[i] += epsilon
        lp, _ = fn(t)
        t[i] -= 2.0 * epsilon
        lm, _ = fn(t)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError("loss_fn returned non-finite values during probing")
        fd = (lp - lm) / (2.0 * epsilon)
        err = abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst


def pack_arrays(arrays) -> tuple[np.ndarray, list]:
    """Flatten a list of arrays into one vector; returns (flat, shapes)."""
    shapes = [a.shape for a in arrays]
    flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    return flat, shapes


def unpack_arrays(flat, shapes) -> list[np.ndarray]:
    out = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        out.append(np.asarray(flat[offset : offset + size]).reshape(shape))
        offset += size
    return out
