"""Temporal basis functions beta_u(t) on t in [0, 1].

Four interchangeable families: a learned MLP trajectory basis plus fixed
DCT, Fourier and Bernstein bases.  Only the neural family has trainable
parameters; its reverse-mode gradients are hand-derived and checked against
finite differences in the test suite.
"""

from dataclasses import dataclass
from enum import Enum
from math import comb

import numpy as np

from .errors import ContractError


class BasisKind(str, Enum):
    NEURAL = "neural"
    DCT = "dct"
    FOURIER = "fourier"
    BERNSTEIN = "bernstein"


def positional_embed(t, num_freqs: int) -> np.ndarray:
    """[t, sin(2^0 pi t), cos(2^0 pi t), ..., sin(2^(L-1) pi t), cos(2^(L-1) pi t)].

    Accepts a scalar or a 1D array of times; returns (..., 2L+1).
    """
    t = np.asarray(t, dtype=np.float64)
    freqs = (2.0 ** np.arange(num_freqs)) * np.pi
    angles = t[..., None] * freqs
    parts = np.empty(t.shape + (2 * num_freqs + 1,))
    parts[..., 0] = t
    parts[..., 1::2] = np.sin(angles)
    parts[..., 2::2] = np.cos(angles)
    return parts


@dataclass
class NeuralBasisParams:
    """3 hidden ReLU layers, linear head: (2L+1) -> H -> H -> H -> W."""

    embed_freqs: int
    hidden_width: int
    output_dim: int
    weights: list  # per layer, (fan_out, fan_in)
    biases: list   # per layer, (fan_out,)

    NUM_HIDDEN_LAYERS = 3

    def layer_sizes(self):
        ins = [2 * self.embed_freqs + 1] + [self.hidden_width] * 3
        outs = [self.hidden_width] * 3 + [self.output_dim]
        return list(zip(outs, ins))

    def validate(self):
        expected = self.layer_sizes()
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ContractError(f"MLP layer shapes {got} do not chain as {expected}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[0],):
                raise ContractError("bias shape mismatch")


class TimeBasisEvaluator:
    """Evaluates beta(t) in R^W for one of the four basis families."""

    def __init__(self, kind: BasisKind, output_dim: int,
                 neural: NeuralBasisParams | None = None):
        self.kind = kind
        self.output_dim = output_dim
        self.neural = neural
        if kind == BasisKind.NEURAL:
            if neural is None:
                raise ContractError("neural basis requires NeuralBasisParams")
            if neural.output_dim != output_dim:
                raise ContractError("neural output_dim disagrees with basis width")
            neural.validate()

    # -- forward -----------------------------------------------------------

    def eval_many(self, ts: np.ndarray) -> np.ndarray:
        """beta for a batch of times: (R,) -> (R, W)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        w = self.output_dim
        if self.kind == BasisKind.NEURAL:
            return self._mlp_forward(ts)[0]
        if self.kind == BasisKind.DCT:
            return np.cos(np.pi * np.arange(w) * ts[:, None])
        if self.kind == BasisKind.FOURIER:
            out = np.empty((ts.shape[0], w))
            out[:, 0] = 1.0
            for m in range(1, w):
                harmonic = (m + 1) // 2
                ang = 2.0 * np.pi * harmonic * ts
                out[:, m] = np.cos(ang) if m % 2 == 1 else np.sin(ang)
            return out
        # Bernstein: C(W-1, u) t^u (1-t)^(W-1-u)
        n = w - 1
        u = np.arange(w)
        coefs = np.array([comb(n, k) for k in u], dtype=np.float64)
        return coefs * ts[:, None] ** u * (1.0 - ts[:, None]) ** (n - u)

    def eval(self, t: float) -> np.ndarray:
        return self.eval_many(np.array([t]))[0]

    def _mlp_forward(self, ts: np.ndarray):
        p = self.neural
        z = positional_embed(ts, p.embed_freqs)
        cache = [z]
        for i in range(3):
            a = z @ p.weights[i].T + p.biases[i]
            z = np.maximum(a, 0.0)
            cache.append(a)
            cache.append(z)
        out = z @ p.weights[3].T + p.biases[3]
        return out, cache

    # -- backward (neural only) ---------------------------------------------

    def forward_with_cache(self, ts: np.ndarray):
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if self.kind == BasisKind.NEURAL:
            return self._mlp_forward(ts)
        return self.eval_many(ts), None

    def backward(self, cache, upstream: np.ndarray):
        """Parameter gradients for a batch: upstream (R, W) -> [(dW, db), ...].

        Fixed bases have no parameters and return an empty list.  The ReLU
        subgradient at exactly 0 is taken as 0.
        """
        if self.kind != BasisKind.NEURAL:
            return []
        p = self.neural
        upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        z0 = cache[0]
        acts = [z0] + [cache[2 + 2 * i] for i in range(3)]  # inputs to each layer
        grads = [None] * 4
        delta = upstream
        for layer in (3, 2, 1, 0):
            grads[layer] = (delta.T @ acts[layer], delta.sum(axis=0))
            if layer > 0:
                delta = delta @ p.weights[layer]
                delta = delta * (cache[1 + 2 * (layer - 1)] > 0.0)
        return grads

    def parameters(self):
        if self.kind != BasisKind.NEURAL:
            return []
        out = []
        for i, (w, b) in enumerate(zip(self.neural.weights, self.neural.biases)):
            out.append((f"layer{i}.weight", w))
            out.append((f"layer{i}.bias", b))
        return out


def init_neural_basis(output_dim: int, seed: int, embed_freqs: int = 6,
                      hidden_width: int = 64, dtype=np.float64) -> TimeBasisEvaluator:
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    params = NeuralBasisParams(embed_freqs, hidden_width, output_dim, [], [])
    for fan_out, fan_in in params.layer_sizes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)).astype(dtype))
        params.biases.append(np.zeros(fan_out, dtype=dtype))
    return TimeBasisEvaluator(BasisKind.NEURAL, output_dim, params)


def make_basis(kind: BasisKind, output_dim: int, seed: int = 0,
               embed_freqs: int = 6, hidden_width: int = 64,
               dtype=np.float64) -> TimeBasisEvaluator:
    if kind == BasisKind.NEURAL:
        return init_neural_basis(output_dim, seed, embed_freqs, hidden_width, dtype)
    return TimeBasisEvaluator(kind, output_dim)


def eval_basis(basis: TimeBasisEvaluator, t: float) -> np.ndarray:
    return basis.eval(t)


_HP_KERNELS = (np.array([-1.0, 1.0]), np.array([-1.0, 2.0, -1.0]))


def highpass_penalty(samples: np.ndarray) -> float:
    """Mean |valid-mode convolution| of each column with [-1,1] and [-1,2,-1],
    summed over the two kernels.  Both kernels annihilate constants; the
    second also annihilates linear ramps.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 3:
        raise ContractError("need a (N_t, W) sample matrix with N_t >= 3")
    total = 0.0
    for kern in _HP_KERNELS:
        resp = [np.convolve(samples[:, j], kern, mode="valid")
                for j in range(samples.shape[1])]
        total += float(np.mean(np.abs(np.stack(resp))))
    return total


def highpass_penalty_grad(samples: np.ndarray) -> np.ndarray:
    """d(highpass_penalty)/d(samples); sign subgradient 0 at exact zeros."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 3:
        raise ContractError("need a (N_t, W) sample matrix with N_t >= 3")
    grad = np.zeros_like(samples)
    n_t, w = samples.shape
    for kern in _HP_KERNELS:
        m = kern.shape[0]
        n_out = n_t - m + 1
        scale = 1.0 / (n_out * w)
        for j in range(w):
            resp = np.convolve(samples[:, j], kern, mode="valid")
            s = np.sign(resp) * scale
            # valid conv: resp[i] = sum_q samples[i+q, j] * kern[m-1-q]
            for q in range(m):
                grad[q:q + n_out, j] += s * kern[m - 1 - q]
    return grad
