"""Channel-independent patch-encoder forecaster hosting either attention kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autograd as ag
from ..attention import AttentionConfig, AttentionOutput, AttentionWeights, attention_forward
from ..autograd import Tensor
from ..errors import ConfigError
from .patching import PatchConfig, patchify

TOKEN_MODES = ("patch", "variate")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 1
    ff_dim: int = 256
    token_mode: str = "patch"

    def __post_init__(self):
        if self.n_layers < 1 or self.ff_dim < 1:
            raise ConfigError("n_layers and ff_dim must be positive")
        if self.token_mode not in TOKEN_MODES:
            raise ConfigError(f"unknown token_mode {self.token_mode!r}; choose from {TOKEN_MODES}")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = ag.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ag.mean(xc * xc, axis=-1, keepdims=True)
    return xc / ag.sqrt(var + eps) * gamma + beta


class ForecastModel:
    """Encoder-only forecaster.

    In ``patch`` mode each variable's lookback is cut into N patches that
    become tokens (weights shared across variables); in ``variate`` mode each
    variable's whole lookback is one token. Each block is post-norm
    attention followed by a GELU feed-forward, both residual. A linear head
    maps the flattened tokens to the horizon.
    """

    def __init__(self, attn_cfg: AttentionConfig, patch_cfg: PatchConfig, model_cfg: ModelConfig | None = None,
                 n_vars: int = 1, seed: int = 0):
        self.attn_cfg = attn_cfg
        self.patch_cfg = patch_cfg
        self.model_cfg = model_cfg or ModelConfig()
        self.n_vars = n_vars
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.last_attention: list[AttentionOutput] = []
        self._init(np.random.default_rng(seed))

    def _add(self, name, data):
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _init(self, rng):
        D = self.attn_cfg.model_dim
        F = self.model_cfg.ff_dim
        pc = self.patch_cfg
        if self.model_cfg.token_mode == "patch":
            self._add("embed.W", _uniform(rng, pc.patch_len, (pc.patch_len, D)))
            self._add("embed.b", np.zeros(D))
            self._add("embed.pos", rng.uniform(-0.02, 0.02, size=(pc.patch_count, D)))
            head_in = pc.patch_count * D
        else:
            self._add("embed.W", _uniform(rng, pc.lookback, (pc.lookback, D)))
            self._add("embed.b", np.zeros(D))
            head_in = D
        for i in range(self.model_cfg.n_layers):
            w = AttentionWeights.init(D, rng)
            for k, t in w.as_dict().items():
                self._add(f"block{i}.attn.{k}", t.data)
            self._add(f"block{i}.ln1.g", np.ones(D))
            self._add(f"block{i}.ln1.b", np.zeros(D))
            self._add(f"block{i}.ff.W1", _uniform(rng, D, (D, F)))
            self._add(f"block{i}.ff.b1", np.zeros(F))
            self._add(f"block{i}.ff.W2", _uniform(rng, F, (F, D)))
            self._add(f"block{i}.ff.b2", np.zeros(D))
            self._add(f"block{i}.ln2.g", np.ones(D))
            self._add(f"block{i}.ln2.b", np.zeros(D))
        self._add("head.W", _uniform(rng, head_in, (head_in, pc.horizon)))
        self._add("head.b", np.zeros(pc.horizon))

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ConfigError(f"state dict keys differ from model parameters: {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigError(f"{k}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.copy()

    def tokens(self, x: np.ndarray) -> Tensor:
        """Embed a ``(B, T, C)`` batch into attention tokens.

        Patch mode gives ``(B * C, N, D)``: each variable is its own sequence
        of patches. Variate mode gives ``(B, C, D)``: one token per variable,
        so attention mixes variables instead of time.
        """
        b, t, c = x.shape
        series = np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(b * c, t)
        p = self.params
        if self.model_cfg.token_mode == "patch":
            z = ag.matmul(patchify(series, self.patch_cfg), p["embed.W"]) + p["embed.b"]
            return z + p["embed.pos"]
        return (ag.matmul(Tensor(series), p["embed.W"]) + p["embed.b"]).reshape(b, c, -1)

    def encode(self, z: Tensor, keep_attention: bool = False) -> Tensor:
        p = self.params
        self.last_attention = []
        for i in range(self.model_cfg.n_layers):
            pre = f"block{i}."
            weights = {k: p[pre + "attn." + k] for k in ("W_Q", "W_K", "W_V", "W_O")}
            att = attention_forward(z, weights, self.attn_cfg)
            if keep_attention:
                self.last_attention.append(att)
            z = layer_norm(z + att.output, p[pre + "ln1.g"], p[pre + "ln1.b"])
            h = ag.gelu(ag.matmul(z, p[pre + "ff.W1"]) + p[pre + "ff.b1"])
            z = layer_norm(z + ag.matmul(h, p[pre + "ff.W2"]) + p[pre + "ff.b2"], p[pre + "ln2.g"], p[pre + "ln2.b"])
        return z

    def forward(self, x, keep_attention: bool = False) -> Tensor:
        """Map a ``(B, T, C)`` lookback batch to a ``(B, H, C)`` forecast."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.patch_cfg.lookback:
            raise ConfigError(f"expected (B, {self.patch_cfg.lookback}, C) input, got {x.shape}")
        b, _, c = x.shape
        z = self.encode(self.tokens(x), keep_attention)
        y = ag.matmul(z.reshape(b * c, -1), self.params["head.W"]) + self.params["head.b"]
        return y.reshape(b, c, self.patch_cfg.horizon).transpose(0, 2, 1)

    __call__ = forward


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad**2).sum()) for p in params.values() if p.grad is not None)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
