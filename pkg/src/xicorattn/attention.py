"""Attention with differentiable Chatterjee-xi scores, plus the dot-product baseline.

For a query row ``q`` and key row ``k`` (head dimension ``d``) the score is

    xi(q, k) = 1 - 3 * sum_l |r_{l+1} - r_l| / (d^2 - 1)

where ``k`` is reordered by the ascending order of ``q`` (straight-through
SoftSort) and ``r`` are the soft ranks of the reordered key. The query's sort
structure is computed once per row and reused against every key.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .errors import ConfigError, DimensionError
from .softrank import pav_margin, soft_rank
from .softsort import soft_sort, sort_keys_by_queries

KERNELS = ("xicor", "dot_product")
SCORE_MODES = ("softmax_xi", "raw_xi_rownorm")
RANK_MODES = ("soft", "hard_forward")


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int = 128
    n_head: int = 2
    tau: float = 1.0
    epsilon: float = 0.1
    score_mode: str = "softmax_xi"
    kernel: str = "xicor"
    rank_mode: str = "soft"
    score_temperature: float = 1.0
    straight_through: bool = True

    def __post_init__(self):
        if self.model_dim <= 0 or self.n_head <= 0:
            raise ConfigError("model_dim and n_head must be positive")
        if self.model_dim % self.n_head:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by n_head {self.n_head}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}; choose from {KERNELS}")
        if self.score_mode not in SCORE_MODES:
            raise ConfigError(f"unknown score_mode {self.score_mode!r}; choose from {SCORE_MODES}")
        if self.rank_mode not in RANK_MODES:
            raise ConfigError(f"unknown rank_mode {self.rank_mode!r}; choose from {RANK_MODES}")
        if not (self.tau > 0 and self.epsilon > 0 and self.score_temperature > 0):
            raise ConfigError("tau, epsilon and score_temperature must be > 0")
        if self.kernel == "xicor" and self.head_dim < 3:
            raise ConfigError(f"xicor scores need head_dim >= 3, got {self.head_dim}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_head

    def replace(self, **changes) -> "AttentionConfig":
        return AttentionConfig(**{**asdict(self), **changes})


def xi_of_ranks(r: Tensor) -> Tensor:
    """Chatterjee's formula applied to rank vectors along the last axis."""
    d = r.shape[-1]
    gaps = ag.tabs(r[..., 1:] - r[..., :-1])
    return 1.0 - ag.tsum(gaps, axis=-1) * (3.0 / (d * d - 1.0))


def _xi_scores(q: Tensor, k: Tensor, tau, epsilon, straight_through, rank_mode) -> Tensor:
    need_soft = not straight_through or (ag.grad_enabled() and (q.requires_grad or k.requires_grad))
    sp = soft_sort(ag.neg(q), tau, need_soft=need_soft)
    k_sorted = sort_keys_by_queries(sp, k, straight_through=straight_through)
    r = soft_rank(k_sorted, epsilon, hard_forward=rank_mode == "hard_forward")
    return xi_of_ranks(r)


def xi_soft(q, k, tau: float = 1.0, epsilon: float = 0.1, straight_through: bool = True,
            rank_mode: str = "soft") -> Tensor:
    """Differentiable xi_d(q, k) of two length-d vectors; returns a scalar tensor."""
    q, k = as_tensor(q), as_tensor(k)
    if q.ndim != 1 or q.shape != k.shape:
        raise ConfigError(f"xi_soft needs two equal-length vectors, got {q.shape} and {k.shape}")
    if q.shape[0] < 3:
        raise ConfigError(f"xi_soft needs d >= 3, got {q.shape[0]}")
    s = _xi_scores(q.reshape(1, -1), k.reshape(1, -1), tau, epsilon, straight_through, rank_mode)
    return s.reshape(())


def score_matrix(Q, K, cfg: AttentionConfig) -> Tensor:
    """Pairwise scores ``S[..., i, j]`` between query rows and key rows."""
    Q, K = as_tensor(Q), as_tensor(K)
    if Q.shape[-1] != K.shape[-1] or Q.shape[:-2] != K.shape[:-2]:
        raise ConfigError(f"query shape {Q.shape} and key shape {K.shape} do not match")
    if cfg.kernel == "dot_product":
        return ag.matmul(Q, ag.swap_last(K)) * (1.0 / np.sqrt(Q.shape[-1]))
    if Q.shape[-1] < 3:
        raise ConfigError(f"xicor scores need d >= 3, got {Q.shape[-1]}")
    return _xi_scores(Q, K, cfg.tau, cfg.epsilon, cfg.straight_through, cfg.rank_mode)


def normalize_scores(S: Tensor, cfg: AttentionConfig) -> Tensor:
    if cfg.kernel == "dot_product" or cfg.score_mode == "softmax_xi":
        if cfg.kernel == "xicor" and cfg.score_temperature != 1.0:
            S = S * (1.0 / cfg.score_temperature)
        return ag.softmax(S, axis=-1)
    pos = ag.relu(S) + 1e-12
    return pos / ag.tsum(pos, axis=-1, keepdims=True)


@dataclass
class AttentionWeights:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    W_O: Tensor

    @classmethod
    def init(cls, model_dim: int, rng: np.random.Generator, requires_grad: bool = True) -> "AttentionWeights":
        bound = np.sqrt(6.0 / (2 * model_dim))
        mats = [rng.uniform(-bound, bound, size=(model_dim, model_dim)) for _ in range(4)]
        return cls(*(Tensor(m, requires_grad=requires_grad) for m in mats))

    @classmethod
    def coerce(cls, weights) -> "AttentionWeights":
        if isinstance(weights, AttentionWeights):
            return weights
        return cls(*(as_tensor(weights[k]) for k in ("W_Q", "W_K", "W_V", "W_O")))

    def as_dict(self) -> dict[str, Tensor]:
        return {"W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V, "W_O": self.W_O}


@dataclass
class AttentionOutput:
    output: Tensor
    scores: Tensor
    weights: Tensor


def _split_heads(x: Tensor, n_head: int) -> Tensor:
    b, l, dm = x.shape
    return x.reshape(b, l, n_head, dm // n_head).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * d)


def attention_forward(X, weights, cfg: AttentionConfig) -> AttentionOutput:
    """Multi-head self-attention over ``X`` of shape ``(L, D)`` or ``(B, L, D)``."""
    X = as_tensor(X)
    w = AttentionWeights.coerce(weights)
    unbatched = X.ndim == 2
    if unbatched:
        X = X.reshape(1, *X.shape)
    if X.ndim != 3 or X.shape[-1] != cfg.model_dim:
        raise ConfigError(f"input shape {X.shape} does not match model_dim {cfg.model_dim}")
    for name, mat in w.as_dict().items():
        if mat.shape != (cfg.model_dim, cfg.model_dim):
            raise ConfigError(f"{name} has shape {mat.shape}, expected {(cfg.model_dim,) * 2}")

    Q = _split_heads(ag.matmul(X, w.W_Q), cfg.n_head)
    K = _split_heads(ag.matmul(X, w.W_K), cfg.n_head)
    V = _split_heads(ag.matmul(X, w.W_V), cfg.n_head)
    S = score_matrix(Q, K, cfg)
    A = normalize_scores(S, cfg)
    heads = ag.matmul(A, V)
    out = ag.matmul(_merge_heads(heads), w.W_O)
    if unbatched:
        return AttentionOutput(out.reshape(out.shape[1:]), S.reshape(S.shape[1:]), A.reshape(A.shape[1:]))
    return AttentionOutput(out, S, A)


def reference_dot_attention(X: np.ndarray, weights: dict, n_head: int) -> np.ndarray:
    """Plain-numpy multi-head scaled dot-product attention, no tape."""
    X = np.asarray(X, dtype=np.float64)
    w = {k: as_tensor(v).data for k, v in weights.items()}
    L, D = X.shape
    d = D // n_head
    Q, K, V = X @ w["W_Q"], X @ w["W_K"], X @ w["W_V"]
    out = np.zeros((L, D))
    for h in range(n_head):
        sl = slice(h * d, (h + 1) * d)
        s = Q[:, sl] @ K[:, sl].T / np.sqrt(d)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        s /= s.sum(axis=1, keepdims=True)
        out[:, sl] = s @ V[:, sl]
    return out @ w["W_O"]


# ----------------------------------------------------------------------------
# gradient checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise ``|a - f| / max(|a|, |f|, floor * max|f|, 1e-12)``.

    The floor keeps entries that are tiny relative to the tensor's overall
    gradient scale from dominating with meaningless ratios.
    """
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(f), initial=0.0)) * floor, 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), scale)
    return float(np.max(np.abs(a - f) / denom, initial=0.0))


def finite_difference(fn, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``fn()`` w.r.t. each array (perturbed in place)."""
    grads = []
    for arr in arrays:
        if not arr.flags.c_contiguous:
            raise ValueError("finite_difference perturbs in place and needs C-contiguous arrays")
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


@dataclass
class GradCheckReport:
    kernel: str
    max_rel_error: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def _min_gap(values: np.ndarray) -> float:
    s = np.sort(values, axis=-1)
    return float(np.min(np.diff(s, axis=-1)))


def grad_check_attention(cfg: AttentionConfig, seed: int = 0, seq_len: int = 6, h: float = 1e-5,
                         upstream_scale: float = 1.0) -> GradCheckReport:
    """Analytic vs central-difference gradients of a scalar loss w.r.t. W_Q, W_K, W_V.

    The xicor kernel is checked on its soft path (``straight_through=False``)
    so forward and backward describe the same function. Points near a kink
    (query or key near-ties, or a PAV pool about to merge or split) are
    resampled.
    """
    if seq_len > 8 or cfg.head_dim > 16:
        raise ConfigError("grad_check_attention is meant for small instances (L <= 8, d <= 16)")
    if cfg.kernel == "xicor":
        cfg = cfg.replace(straight_through=False)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        X = rng.standard_normal((seq_len, cfg.model_dim))
        w = AttentionWeights.init(cfg.model_dim, rng)
        with ag.no_grad():
            Q = _split_heads(Tensor(X[None]) @ w.W_Q, cfg.n_head).data
            K = _split_heads(Tensor(X[None]) @ w.W_K, cfg.n_head).data
        if cfg.kernel == "dot_product":
            break
        if _min_gap(Q) >= 1e-3 and _min_gap(K) >= 1e-3:
            with ag.no_grad():
                sp = soft_sort(ag.neg(Tensor(Q)), cfg.tau)
                ks = sort_keys_by_queries(sp, Tensor(K), straight_through=False)
            if pav_margin(ks.data, cfg.epsilon) >= 1e-2:
                break
    R = rng.standard_normal((seq_len, cfg.model_dim)) * upstream_scale

    for t in w.as_dict().values():
        t.zero_grad()
    out = attention_forward(X, w, cfg).output
    ag.backward(ag.tsum(out * R))

    params = [w.W_Q, w.W_K, w.W_V]

    def loss_value():
        with ag.no_grad():
            return float((attention_forward(X, w, cfg).output.data * R).sum())

    numeric = finite_difference(loss_value, [p.data for p in params], h)
    report = GradCheckReport(cfg.kernel, seed=seed)
    for name, p, g in zip(("W_Q", "W_K", "W_V"), params, numeric):
        report.max_rel_error[name] = relative_error(p.grad, g)
    return report
