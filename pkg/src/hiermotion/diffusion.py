"""Transformer DDPM with x0-prediction and an optional sequence-length head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .nn import Adam, Standardizer, TransformerBlock, mlp, timestep_embedding


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Schedule arrays indexed by ``t - 1`` for ``t`` in ``1..T``."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) == 0:
            raise ValueError("betas must be a non-empty vector")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar(self, t) -> np.ndarray:
        """``alpha_bar_t`` with ``alpha_bar_0 = 1``."""
        ab = np.concatenate([[1.0], self.alpha_bars])
        return ab[np.asarray(t)]


def make_schedule(T: int = 100, beta_start: float = 1e-3, beta_end: float = 0.2) -> DiffusionSchedule:
    """Linear beta schedule."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return DiffusionSchedule(np.linspace(beta_start, beta_end, T))


def _check_t(t, sched: DiffusionSchedule):
    ta = np.asarray(t)
    if np.any(ta < 1) or np.any(ta > sched.T):
        raise ValueError(f"timestep outside [1, {sched.T}]")
    return ta


def _expand(coef, like: torch.Tensor) -> torch.Tensor:
    c = torch.as_tensor(np.asarray(coef, dtype=np.float64), dtype=like.dtype)
    return c.reshape(c.shape + (1,) * (like.dim() - c.dim()))


def q_sample(x0, t, eps, sched: DiffusionSchedule):
    """Draw ``x_t ~ q(x_t | x_0)`` with explicit noise ``eps``.

    ``t`` is an int or one timestep per leading batch entry.
    """
    ta = _check_t(t, sched)
    if tuple(eps.shape) != tuple(x0.shape):
        raise ValueError("noise and data shapes differ")
    ab = sched.alpha_bar(ta)
    if isinstance(x0, np.ndarray):
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return _expand(np.sqrt(ab), x0) * x0 + _expand(np.sqrt(1.0 - ab), x0) * eps


def posterior_coefficients(alpha_bar_prev, alpha_bar_t, beta_t):
    """Mean coefficients on (x0, x_t) and variance of ``q(x_{t-1} | x_t, x0)``."""
    alpha_t = 1.0 - beta_t
    denom = 1.0 - alpha_bar_t
    c0 = np.sqrt(alpha_bar_prev) * beta_t / denom
    ct = np.sqrt(alpha_t) * (1.0 - alpha_bar_prev) / denom
    var = (1.0 - alpha_bar_prev) / denom * beta_t
    return c0, ct, var


def posterior_step(x_t: torch.Tensor, x0_hat: torch.Tensor, t: int, sched: DiffusionSchedule,
                   rng: np.random.Generator) -> torch.Tensor:
    """Sample ``x_{t-1}`` from the DDPM posterior given the predicted ``x0``.

    No noise is added at ``t = 1``.
    """
    _check_t(t, sched)
    c0, ct, var = posterior_coefficients(sched.alpha_bar(t - 1), sched.alpha_bar(t), sched.betas[t - 1])
    mean = float(c0) * x0_hat + float(ct) * x_t
    if t == 1:
        return mean
    noise = torch.from_numpy(rng.standard_normal(tuple(x_t.shape))).to(x_t.dtype)
    return mean + float(np.sqrt(var)) * noise


class DenoiserTransformer(nn.Module):
    """Predicts clean data ``x0`` from ``(x_t, t, C)``.

    Each named global condition becomes one token; per-frame conditions are
    projected and added to the matching data tokens. The timestep embedding
    is added to every token at the input of every block. With ``n_max > 0``
    a length head classifies the sequence length in ``1..n_max`` from a
    dedicated length token and the pooled condition tokens.
    """

    def __init__(self, data_dim: int, cond_dims: dict, frame_cond_dim: int = 0, max_len: int = 61,
                 dim: int = 128, heads: int = 4, blocks: int = 4, ff_mult: int = 2, n_max: int = 0):
        super().__init__()
        self.config = dict(data_dim=data_dim, cond_dims=dict(cond_dims), frame_cond_dim=frame_cond_dim,
                           max_len=max_len, dim=dim, heads=heads, blocks=blocks, ff_mult=ff_mult,
                           n_max=n_max)
        self.cond_names = list(cond_dims)
        self.dim = dim
        self.x_in = nn.Linear(data_dim, dim)
        self.cond_in = nn.ModuleDict({k: nn.Linear(v, dim) for k, v in cond_dims.items()})
        self.cond_type = nn.Parameter(0.02 * torch.randn(max(len(cond_dims), 1), dim))
        self.frame_in = nn.Linear(frame_cond_dim, dim) if frame_cond_dim else None
        self.pos = nn.Parameter(0.02 * torch.randn(max_len, dim))
        self.time_mlp = mlp([dim, dim, dim])
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads, ff_mult) for _ in range(blocks))
        self.norm_out = nn.LayerNorm(dim)
        self.out = nn.Linear(dim, data_dim)
        self.n_max = n_max
        if n_max:
            self.len_token = nn.Parameter(0.02 * torch.randn(dim))
            self.len_head = mlp([2 * dim, dim, n_max])
        self.x_norm = Standardizer(data_dim)
        self.cond_norm = nn.ModuleDict({k: Standardizer(v) for k, v in cond_dims.items()})
        self.frame_norm = Standardizer(frame_cond_dim) if frame_cond_dim else None

    def _cond_tokens(self, cond: dict) -> torch.Tensor:
        toks = [self.cond_in[k](self.cond_norm[k](cond[k])) + self.cond_type[i]
                for i, k in enumerate(self.cond_names)]
        return torch.stack(toks, 1)

    def forward(self, x_t, t, cond: dict, frame_cond=None, key_mask=None):
        b, n, _ = x_t.shape
        if n > self.pos.shape[0]:
            raise ValueError(f"sequence length {n} exceeds max_len {self.pos.shape[0]}")
        h = self.x_in(x_t) + self.pos[:n]
        if self.frame_in is not None:
            if frame_cond is None or frame_cond.shape[1] != n:
                raise ValueError("per-frame condition count must equal the sequence length")
            h = h + self.frame_in(self.frame_norm(frame_cond))
        g = len(self.cond_names)
        if g:
            h = torch.cat([self._cond_tokens(cond), h], 1)
        mask = None
        if key_mask is not None:
            keys = torch.cat([torch.ones(b, g, dtype=torch.bool), key_mask], 1)
            mask = keys[:, None, :]
        temb = self.time_mlp(timestep_embedding(t, self.dim).to(h.dtype))[:, None]
        for blk in self.blocks:
            h = blk(h + temb, mask)
        return self.out(self.norm_out(h[:, g:]))

    def length_logits(self, cond: dict):
        if not self.n_max:
            raise ValueError("model has no length head")
        c = self._cond_tokens(cond)
        h = torch.cat([self.len_token.expand(c.shape[0], 1, -1), c], 1)
        for blk in self.blocks:
            h = blk(h)
        h = self.norm_out(h)
        return self.len_head(torch.cat([h[:, 0], h[:, 1:].mean(1)], -1))


def x0_loss(model: DenoiserTransformer, x0, cond: dict, t, eps, sched: DiffusionSchedule,
            frame_cond=None, key_mask=None):
    """Mean squared error between ``x0`` and the model's prediction from ``x_t``."""
    x_t = q_sample(x0, t, eps, sched)
    pred = model(x_t, torch.as_tensor(np.asarray(t)).reshape(-1).expand(x0.shape[0]), cond,
                 frame_cond, key_mask)
    err = (pred - x0) ** 2
    if key_mask is None:
        loss = err.mean()
    else:
        m = key_mask[..., None].to(err.dtype)
        loss = (err * m).sum() / (m.sum() * err.shape[-1])
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite diffusion loss")
    return loss


def _to_tensor(a, dtype):
    return None if a is None else torch.as_tensor(np.array(a), dtype=dtype)


@torch.no_grad()
def sample(model: DenoiserTransformer, cond: dict, length: int, sched: DiffusionSchedule,
           rng: np.random.Generator, frame_cond=None, progress=None) -> np.ndarray:
    """Ancestral sampling; returns de-normalized ``x0`` of shape (B, length, D).

    ``cond`` holds (B, dim) arrays; ``frame_cond`` is (B, length, Df).
    """
    if length <= 0:
        raise ValueError("sample length must be positive")
    dtype = next(model.parameters()).dtype
    cond_t = {k: _to_tensor(v, dtype) for k, v in cond.items()}
    fc = _to_tensor(frame_cond, dtype)
    b = next(iter(cond_t.values())).shape[0] if cond_t else (fc.shape[0] if fc is not None else 1)
    x = torch.from_numpy(rng.standard_normal((b, length, model.config["data_dim"]))).to(dtype)
    x0 = x
    for t in range(sched.T, 0, -1):
        tt = torch.full((b,), t, dtype=torch.long)
        x0 = model(x, tt, cond_t, fc)
        x = posterior_step(x, x0, t, sched, rng)
        if progress is not None:
            progress(sched.T - t + 1, sched.T)
    return model.x_norm.inverse(x0).double().numpy()


@torch.no_grad()
def length_distribution(model: DenoiserTransformer, cond: dict) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    logits = model.length_logits({k: _to_tensor(v, dtype) for k, v in cond.items()})
    return torch.softmax(logits.double(), -1).numpy()


def predict_length(model: DenoiserTransformer, cond: dict, rng: np.random.Generator | None = None,
                   mode: str = "sample") -> np.ndarray:
    """Milestone counts in ``1..n_max`` for each condition in the batch."""
    probs = length_distribution(model, cond)
    if mode == "argmax":
        return probs.argmax(-1) + 1
    if mode != "sample":
        raise ValueError(f"unknown length mode {mode!r}")
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, -1)
    idx = np.minimum((u[:, None] > cdf).sum(-1), probs.shape[1] - 1)
    return idx + 1


@dataclass
class DenoiserData:
    """Training arrays for one denoiser. ``x`` is (S, L, D), padded to L;
    ``lengths`` gives valid lengths; ``cond`` maps names to (S, dim)."""

    x: np.ndarray
    cond: dict
    lengths: np.ndarray | None = None
    frame_cond: np.ndarray | None = None
    length_targets: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x)

    def valid_mask(self) -> np.ndarray:
        n, L = self.x.shape[:2]
        if self.lengths is None:
            return np.ones((n, L), dtype=bool)
        return np.arange(L)[None] < np.asarray(self.lengths)[:, None]


def fit_normalizers(model: DenoiserTransformer, data: DenoiserData) -> None:
    mask = data.valid_mask()
    model.x_norm.fit(data.x[mask])
    for k in model.cond_names:
        model.cond_norm[k].fit(data.cond[k])
    if model.frame_norm is not None:
        model.frame_norm.fit(data.frame_cond[mask])


def train_denoiser(model: DenoiserTransformer, data: DenoiserData, sched: DiffusionSchedule,
                   steps: int, batch_size: int, lr: float, rng: np.random.Generator,
                   log=None, fit: bool = True) -> list[dict]:
    """Adam on the x0 loss (plus length cross-entropy when the model has a
    length head). Returns one record per step."""
    if len(data) == 0:
        raise ValueError("empty training set")
    if fit:
        fit_normalizers(model, data)
    dtype = next(model.parameters()).dtype
    opt = Adam(model.parameters(), lr=lr)
    mask_all = data.valid_mask()
    padded = not mask_all.all()
    x_all = torch.as_tensor(data.x, dtype=dtype)
    with torch.no_grad():
        x_all = model.x_norm(x_all)
    curve = []
    for step in range(steps):
        idx = rng.integers(0, len(data), size=batch_size)
        x0 = x_all[idx]
        cond = {k: torch.as_tensor(data.cond[k][idx], dtype=dtype) for k in model.cond_names}
        fc = _to_tensor(None if data.frame_cond is None else data.frame_cond[idx], dtype)
        km = torch.as_tensor(mask_all[idx]) if padded else None
        t = rng.integers(1, sched.T + 1, size=len(idx))
        eps = torch.from_numpy(rng.standard_normal(tuple(x0.shape))).to(dtype)
        loss = x0_loss(model, x0, cond, t, eps, sched, fc, km)
        rec = {"step": step, "x0_loss": loss.item()}
        if model.n_max and data.length_targets is not None:
            tgt = torch.as_tensor(np.asarray(data.length_targets)[idx] - 1, dtype=torch.long)
            ce = nn.functional.cross_entropy(model.length_logits(cond), tgt)
            loss = loss + ce
            rec["length_ce"] = ce.item()
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rec["loss"] = loss.item()
        curve.append(rec)
        if log is not None:
            log(rec)
    return curve
