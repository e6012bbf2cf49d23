"""Part-wise VQ-VAE for goal poses and its autoregressive index prior."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import skeleton as sk
from .core import Pose
from .nn import Adam, Standardizer, TransformerBlock, mlp


@dataclass
class VqvaeConfig:
    K: int = 64
    d: int = 32
    hidden: int = 128
    beta: float = 0.25
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4


@dataclass
class PriorConfig:
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4


def quantize(z_hat, book):
    """Nearest codebook entry in Euclidean distance; ties go to the lowest index."""
    book_t = torch.as_tensor(book)
    if book_t.shape[0] == 0:
        raise ValueError("codebook is empty")
    z = torch.as_tensor(z_hat, dtype=book_t.dtype)
    if z.shape[-1] != book_t.shape[-1]:
        raise ValueError("query and codebook dimensions differ")
    single = z.dim() == 1
    z = z.reshape(-1, z.shape[-1])
    dist = ((z[:, None, :] - book_t[None]) ** 2).sum(-1)
    idx = dist.argmin(-1)
    codes = book_t[idx]
    if single:
        return int(idx[0]), codes[0]
    return idx, codes


def vqvae_loss(pose, recon, z_hats, codes, beta: float):
    """Reconstruction + codebook + weighted commitment loss.

    ``z_hats`` and ``codes`` are sequences of L tensors of shape (B, d) (or
    (d,)). The codebook term only reaches the codes and the commitment term
    only reaches the encoder outputs. Per-sample sums are averaged over the
    batch.
    """
    if len(z_hats) != len(codes):
        raise ValueError("z_hats and codes differ in length")

    def sq(a):
        return (a ** 2).reshape(a.shape[0], -1).sum(-1) if a.dim() > 1 else (a ** 2).sum()[None]

    total = sq(pose - recon)
    for z_hat, code in zip(z_hats, codes):
        total = total + sq(z_hat.detach() - code) + beta * sq(code.detach() - z_hat)
    return total.mean()


class PartVqvae(nn.Module):
    def __init__(self, K: int = 64, d: int = 32, hidden: int = 128, beta: float = 0.25,
                 parts=sk.PART_GROUPS, n_joints: int = sk.N_JOINTS):
        super().__init__()
        self.config = dict(K=K, d=d, hidden=hidden, beta=beta, parts=[list(p) for p in parts],
                           n_joints=n_joints)
        self.parts = [list(p) for p in parts]
        self.beta = beta
        self.encoders = nn.ModuleList(mlp([3 * len(p), hidden, hidden, d]) for p in self.parts)
        self.decoder = mlp([len(self.parts) * d, 2 * hidden, 2 * hidden, 3 * n_joints])
        self.codebooks = nn.Parameter(torch.randn(len(self.parts), K, d))
        self.pose_norm = Standardizer(3 * n_joints)
        self.register_buffer("trained", torch.zeros((), dtype=torch.int64))

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def encode_parts(self, poses: torch.Tensor) -> list[torch.Tensor]:
        """Encoder outputs for (B, J, 3) poses."""
        flat = self.pose_norm(poses.reshape(poses.shape[0], -1)).reshape(poses.shape)
        return [enc(flat[:, p].reshape(len(poses), -1)) for enc, p in zip(self.encoders, self.parts)]

    def decode(self, codes: list[torch.Tensor]) -> torch.Tensor:
        out = self.decoder(torch.cat(codes, -1))
        return self.pose_norm.inverse(out).reshape(out.shape[0], -1, 3)

    def forward(self, poses: torch.Tensor):
        """Returns (recon, normalized pose, normalized recon, z_hats, codes, indices)."""
        z_hats = self.encode_parts(poses)
        codes, idx = [], []
        for i, z in enumerate(z_hats):
            j, c = quantize(z.detach(), self.codebooks[i].detach())
            idx.append(j)
            codes.append(self.codebooks[i][j])
        st = [z + (c - z).detach() for z, c in zip(z_hats, codes)]
        out_n = self.decoder(torch.cat(st, -1))
        pose_n = self.pose_norm(poses.reshape(poses.shape[0], -1))
        recon = self.pose_norm.inverse(out_n).reshape(poses.shape)
        return recon, pose_n, out_n, z_hats, codes, torch.stack(idx, -1)

    def loss(self, poses: torch.Tensor):
        _, pose_n, out_n, z_hats, codes, _ = self(poses)
        return vqvae_loss(pose_n, out_n, z_hats, codes, self.beta)


def _check_trained(model: PartVqvae):
    if not int(model.trained):
        raise RuntimeError("VQ-VAE has not been trained")


@torch.no_grad()
def encode_pose(model: PartVqvae, pose) -> np.ndarray:
    """Part codebook indices (L,) for one pose, or (B, L) for a batch."""
    _check_trained(model)
    joints = pose.joints if isinstance(pose, Pose) else np.asarray(pose)
    single = joints.ndim == 2
    x = torch.as_tensor(joints.reshape((-1,) + joints.shape[-2:]), dtype=model.codebooks.dtype)
    idx = model(x)[5].numpy()
    return idx[0] if single else idx


@torch.no_grad()
def decode_indices(model: PartVqvae, indices) -> np.ndarray:
    idx = np.asarray(indices).reshape(-1, model.n_parts)
    codes = [model.codebooks[i][torch.as_tensor(idx[:, i])] for i in range(model.n_parts)]
    out = model.decode(codes).double().numpy()
    return out[0] if np.asarray(indices).ndim == 1 else out


def _init_codebooks(model: PartVqvae, poses: torch.Tensor, rng: np.random.Generator):
    """Seed each codebook with jittered encoder outputs of random training poses."""
    with torch.no_grad():
        z = model.encode_parts(poses)
        K = model.codebooks.shape[1]
        for i, zi in enumerate(z):
            pick = rng.integers(0, len(zi), size=K)
            jitter = torch.from_numpy(rng.standard_normal(tuple(model.codebooks[i].shape))).to(zi.dtype)
            model.codebooks[i].copy_(zi[pick] + 0.05 * zi.std() * jitter)


def train_vqvae(poses, config: VqvaeConfig = VqvaeConfig(), rng: np.random.Generator | None = None,
                log=None, dtype=torch.float32) -> tuple[PartVqvae, list[dict]]:
    poses = np.asarray(poses, dtype=np.float64)
    if len(poses) == 0:
        raise ValueError("empty goal-pose dataset")
    rng = rng or np.random.default_rng(0)
    torch.manual_seed(int(rng.integers(2 ** 31)))
    model = PartVqvae(config.K, config.d, config.hidden, config.beta).to(dtype)
    model.pose_norm.fit(poses.reshape(len(poses), -1))
    x_all = torch.as_tensor(poses, dtype=dtype)
    _init_codebooks(model, x_all, rng)
    opt = Adam(model.parameters(), lr=config.lr)
    curve = []
    for step in range(config.steps):
        idx = rng.integers(0, len(poses), size=config.batch_size)
        loss = model.loss(x_all[idx])
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite VQ-VAE loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rec = {"step": step, "loss": loss.item()}
        curve.append(rec)
        if log is not None:
            log(rec)
    model.trained.fill_(1)
    return model, curve


@torch.no_grad()
def reconstruction_error(model: PartVqvae, poses) -> float:
    """Mean per-joint position error (m) of encode-decode."""
    x = torch.as_tensor(np.asarray(poses), dtype=model.codebooks.dtype)
    recon = model(x)[0].double().numpy()
    return float(np.linalg.norm(recon - np.asarray(poses), axis=-1).mean())


class IndexPrior(nn.Module):
    """Causal transformer over part indices conditioned on occupancy and action.

    Token sequence: ``[O_g, a_g, s_1, ..., s_{L-1}]``; the output at position
    ``i + 1`` gives the logits for ``s_{i+1}`` through the head of part
    ``i + 1``.
    """

    def __init__(self, occ_dim: int, K: int = 64, n_parts: int = sk.N_PARTS, dim: int = 64,
                 heads: int = 4, blocks: int = 2):
        super().__init__()
        self.config = dict(occ_dim=occ_dim, K=K, n_parts=n_parts, dim=dim, heads=heads, blocks=blocks)
        self.n_parts = n_parts
        self.occ_in = nn.Linear(occ_dim, dim)
        self.act_in = nn.Linear(sk.N_ACTIONS, dim)
        self.embed = nn.ModuleList(nn.Embedding(K, dim) for _ in range(n_parts))
        self.pos = nn.Parameter(0.02 * torch.randn(n_parts + 1, dim))
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads, causal=True) for _ in range(blocks))
        self.norm = nn.LayerNorm(dim)
        self.heads = nn.ModuleList(nn.Linear(dim, K) for _ in range(n_parts))

    def logits(self, occ, action, indices) -> torch.Tensor:
        """Teacher-forced logits (B, k+1, K) given the first ``k`` indices."""
        toks = [self.occ_in(occ), self.act_in(action)]
        k = indices.shape[1] if indices is not None else 0
        for i in range(min(k, self.n_parts - 1)):
            toks.append(self.embed[i](indices[:, i]))
        h = torch.stack(toks, 1) + self.pos[: len(toks)]
        for blk in self.blocks:
            h = blk(h)
        h = self.norm(h)
        n_out = len(toks) - 1
        return torch.stack([self.heads[i](h[:, i + 1]) for i in range(n_out)], 1)

    def loss(self, occ, action, indices):
        lg = self.logits(occ, action, indices)
        return nn.functional.cross_entropy(lg.reshape(-1, lg.shape[-1]), indices.reshape(-1))


def _check_action(action) -> np.ndarray:
    a = np.asarray(action, dtype=float)
    if a.shape != (sk.N_ACTIONS,) or not np.isclose(a.sum(), 1.0) or np.count_nonzero(a) != 1:
        raise ValueError("action must be a one-hot vector")
    if sk.ACTIONS[int(a.argmax())] not in ("sit", "lie"):
        raise ValueError(f"goal action must be sit or lie, got {sk.ACTIONS[int(a.argmax())]}")
    return a


@torch.no_grad()
def sample_indices(prior: IndexPrior, occ, action, temperature: float, rng: np.random.Generator,
                   return_probs: bool = False):
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    dtype = prior.pos.dtype
    o = torch.as_tensor(np.asarray(occ), dtype=dtype)[None]
    a = torch.as_tensor(_check_action(action), dtype=dtype)[None]
    idx = torch.zeros(1, 0, dtype=torch.long)
    probs = []
    for i in range(prior.n_parts):
        lg = prior.logits(o, a, idx)[0, i].double()
        if temperature == 0:
            j = int(lg.argmax())
            p = torch.softmax(lg, -1).numpy()
        else:
            p = torch.softmax(lg / temperature, -1).numpy()
            j = int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), len(p) - 1))
        probs.append(p)
        idx = torch.cat([idx, torch.tensor([[j]])], 1)
    out = idx[0].numpy()
    return (out, probs) if return_probs else out


def sample_goal_pose(model: PartVqvae, prior: IndexPrior, occ, action, temperature: float,
                     rng: np.random.Generator) -> Pose:
    """Sample part indices left to right and decode them to a pose."""
    idx = sample_indices(prior, occ, action, temperature, rng)
    return Pose(decode_indices(model, idx))


def train_prior(indices, occ, actions, K: int, config: PriorConfig = PriorConfig(),
                rng: np.random.Generator | None = None, log=None,
                dtype=torch.float32) -> tuple[IndexPrior, list[dict]]:
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ValueError("empty prior dataset")
    rng = rng or np.random.default_rng(0)
    torch.manual_seed(int(rng.integers(2 ** 31)))
    occ = torch.as_tensor(np.asarray(occ), dtype=dtype)
    act = torch.as_tensor(np.asarray(actions), dtype=dtype)
    idx_t = torch.as_tensor(indices)
    prior = IndexPrior(occ.shape[1], K, indices.shape[1], config.dim, config.heads, config.blocks).to(dtype)
    opt = Adam(prior.parameters(), lr=config.lr)
    curve = []
    for step in range(config.steps):
        b = rng.integers(0, len(indices), size=config.batch_size)
        loss = prior.loss(occ[b], act[b], idx_t[b])
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite prior loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rec = {"step": step, "loss": loss.item()}
        curve.append(rec)
        if log is not None:
            log(rec)
    return prior, curve


@torch.no_grad()
def prior_accuracy(prior: IndexPrior, indices, occ, actions) -> float:
    dtype = prior.pos.dtype
    idx = torch.as_tensor(np.asarray(indices, dtype=np.int64))
    lg = prior.logits(torch.as_tensor(np.asarray(occ), dtype=dtype),
                      torch.as_tensor(np.asarray(actions), dtype=dtype), idx)
    return float((lg.argmax(-1) == idx).double().mean())


def config_dict(cfg) -> dict:
    return asdict(cfg)
