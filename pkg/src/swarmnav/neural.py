"""Small dense networks with hand-written backprop, a Gaussian actor-critic and Adam.

All parameters of a :class:`Policy` live in one flat float64 vector; each
layer's weight and bias are views into it. Optimisers and gradient
clipping operate on the flat vector directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ContractViolation

LOG_2PI = math.log(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple = (64,)
    output_gain: float = 1.0
    hidden_gain: float = math.sqrt(2.0)

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if min(dims) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")

    @property
    def layer_shapes(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


def orthogonal(rng, rows, cols, gain=1.0):
    """Orthogonal matrix (QR of a Gaussian, sign-corrected), scaled by ``gain``."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


@dataclass
class Tape:
    owner: int
    version: int
    inputs: list = field(default_factory=list)  # input to each affine layer
    hidden: list = field(default_factory=list)  # tanh outputs


class ParamVector:
    """Flat parameter storage with a version stamp bumped on every update."""

    def __init__(self, size: int):
        self.data = np.zeros(size)
        self.version = 0

    def bump(self):
        self.version += 1


class Mlp:
    """``affine -> tanh -> ... -> affine`` over views of a flat parameter buffer."""

    def __init__(self, spec: MlpSpec, store: ParamVector, offset: int = 0):
        self.spec = spec
        self.store = store
        self.offset = offset
        self.weights, self.biases = [], []
        pos = offset
        for i, o in spec.layer_shapes:
            self.weights.append(store.data[pos : pos + i * o].reshape(i, o))
            pos += i * o
            self.biases.append(store.data[pos : pos + o])
            pos += o
        self.stop = pos

    def init(self, rng):
        n = len(self.weights)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            gain = self.spec.output_gain if k == n - 1 else self.spec.hidden_gain
            w[...] = orthogonal(rng, *w.shape, gain=gain)
            b[...] = 0.0

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.spec.input_dim:
            raise ContractViolation(f"input dim {x.shape[-1]} != {self.spec.input_dim}")
        if not np.isfinite(x).all():
            raise NonFiniteError("non-finite network input")
        tape = Tape(owner=id(self), version=self.store.version)
        h = np.atleast_2d(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            tape.inputs.append(h)
            h = h @ w + b
            if k < last:
                h = np.tanh(h)
                tape.hidden.append(h)
        return h, tape

    def predict(self, x):
        """Forward pass without recording a tape."""
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.tanh(h)
        return h

    def backward(self, tape: Tape, out_grad, grad=None):
        """Accumulate parameter gradients into ``grad`` (a flat vector laid out
        like the store) and return it."""
        if tape.owner != id(self) or tape.version != self.store.version:
            raise ContractViolation("tape does not match current parameters")
        if grad is None:
            grad = np.zeros_like(self.store.data)
        g = np.atleast_2d(out_grad)
        pos = self.stop
        for k in range(len(self.weights) - 1, -1, -1):
            w = self.weights[k]
            i, o = w.shape
            pos -= o
            grad[pos : pos + o] += g.sum(axis=0)
            pos -= i * o
            grad[pos : pos + i * o] += (tape.inputs[k].T @ g).ravel()
            if k:
                g = (g @ w.T) * (1.0 - tape.hidden[k - 1] ** 2)
        return grad


def gaussian_logprob(mean, log_std, action):
    z = (action - mean) * math.exp(-log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def gaussian_entropy(log_std):
    return 0.5 + 0.5 * LOG_2PI + log_std


def gaussian_logprob_entropy(mean, log_std, action):
    return gaussian_logprob(mean, log_std, action), gaussian_entropy(log_std)


class Policy:
    """Gaussian actor with a state-independent log-std, and a value critic."""

    def __init__(self, obs_dim: int, hidden_dims=(64,), seed=None, rng=None):
        self.obs_dim = obs_dim
        self.hidden_dims = tuple(hidden_dims)
        actor_spec = MlpSpec(obs_dim, 1, self.hidden_dims, output_gain=0.01)
        critic_spec = MlpSpec(obs_dim, 1, self.hidden_dims, output_gain=1.0)
        self.params = ParamVector(actor_spec.num_params + critic_spec.num_params + 1)
        self.actor = Mlp(actor_spec, self.params, 0)
        self.critic = Mlp(critic_spec, self.params, self.actor.stop)
        self.log_std_index = self.critic.stop
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.actor.init(rng)
        self.critic.init(rng)
        self.params.data[self.log_std_index] = 0.0

    @property
    def log_std(self) -> float:
        return float(self.params.data[self.log_std_index])

    @property
    def num_params(self) -> int:
        return len(self.params.data)

    def action_mean(self, obs):
        return self.actor.predict(np.atleast_2d(obs))[:, 0]

    def value(self, obs):
        return self.critic.predict(np.atleast_2d(obs))[:, 0]

    def act(self, obs, rng, deterministic=False):
        """Sample actions for a batch of (normalised) observations.

        Returns ``(actions, logprobs, values)``.
        """
        mean = self.action_mean(obs)
        log_std = self.log_std
        if deterministic:
            action = mean.copy()
        else:
            action = mean + math.exp(log_std) * rng.standard_normal(mean.shape)
        return action, gaussian_logprob(mean, log_std, action), self.value(obs)


class Adam:
    def __init__(self, size, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> bool:
        """In-place bias-corrected update. Returns False (and leaves everything
        untouched) if ``grad`` has non-finite entries."""
        if not np.isfinite(grad).all():
            return False
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return True

    def state_dict(self):
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t, "lr": self.lr}

    def load_state_dict(self, d):
        if np.shape(d["m"]) != self.m.shape:
            raise ContractViolation("optimizer state shape mismatch")
        self.m = np.array(d["m"], dtype=np.float64)
        self.v = np.array(d["v"], dtype=np.float64)
        self.t = int(d["t"])
        self.lr = float(d["lr"])


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> float:
    """Scale ``grad`` in place so its L2 norm is at most ``max_norm``; return the
    pre-clip norm."""
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        grad *= max_norm / (norm + 1e-6)
    return norm
