"""Training-pair extraction, sub-model construction, training and persistence."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import skeleton as sk
from ..core import MILESTONE_DIM, GoalSpec, MotionSequence, Pose, relative, sequence_states
from ..diffusion import DenoiserData, DenoiserTransformer, fit_normalizers, make_schedule, train_denoiser
from ..nn import checkpoint
from ..sensing import Scene, SensorConfig, environment_occupancies, object_features
from ..vqvae import (IndexPrior, PartVqvae, PriorConfig, VqvaeConfig, encode_pose, train_prior,
                     train_vqvae)
from .conditions import (POSE_DIM, SEGMENT, SEGMENT_FRAMES, StartSpec, build_milestone_condition,
                         empty_object, encode_bidirectional, frame_cond_dim, frame_conditions,
                         milestone_cond_dims, trajectory_cond_dims)

SUBMODELS = ("vqvae", "prior", "milestones", "milestone-poses", "trajectory", "infill")
DENOISERS = SUBMODELS[2:]


@dataclass(frozen=True)
class DenoiserConfig:
    dim: int = 128
    heads: int = 4
    blocks: int = 4
    ff_mult: int = 2


@dataclass(frozen=True)
class PipelineConfig:
    T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    n_max: int = 12
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    vqvae: VqvaeConfig = field(default_factory=VqvaeConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4
    temperature: float = 1.0
    goal_noise: float = 0.05
    sensor: SensorConfig = field(default_factory=SensorConfig)

    def schedule(self):
        return make_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class Leg:
    """One start-to-goal leg of a ground-truth sequence."""

    scene: Scene
    obj: object
    start: StartSpec
    goal: GoalSpec
    seq: MotionSequence

    def __post_init__(self):
        if (len(self.seq) - 1) % SEGMENT or len(self.seq) < SEGMENT_FRAMES:
            raise ValueError(f"leg length {len(self.seq)} is not 61 + 60k")

    @property
    def n_milestones(self) -> int:
        return (len(self.seq) - 1) // SEGMENT

    @property
    def milestone_frames(self) -> np.ndarray:
        return SEGMENT * np.arange(1, self.n_milestones + 1)


def legs_from_record(rec) -> list[Leg]:
    """Approach and leave legs; the leave leg targets an empty grid at the endpoint."""
    app, lv = rec.approach(), rec.leave()
    obj = rec.scene.objects[0]
    start = StartSpec(app.root(0), int(app.actions[0]), Pose(app.joints[0]))
    approach = Leg(rec.scene, obj, start, rec.goal, app)
    lstart = StartSpec(rec.goal.root, rec.goal.action, rec.goal.pose)
    lgoal = GoalSpec(rec.endpoint, "idle", Pose(sk.rest_pose()))
    leave = Leg(rec.scene, empty_object(rec.endpoint), lstart, lgoal, lv)
    return [approach, leave]


def legs_from_records(records) -> list[Leg]:
    return [leg for rec in records for leg in legs_from_record(rec)]


def _pad(rows: list[np.ndarray], length: int) -> np.ndarray:
    out = np.zeros((len(rows), length) + rows[0].shape[1:], dtype=np.float32)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def _stack_cond(conds: list[dict]) -> dict:
    return {k: np.stack([c[k] for c in conds]).astype(np.float32) for k in conds[0]}


def milestone_data(legs: list[Leg], sensor: SensorConfig, n_max: int) -> DenoiserData:
    xs, conds, ns = [], [], []
    for leg in legs:
        if leg.n_milestones > n_max:
            raise ValueError(f"leg has {leg.n_milestones} milestones, more than n_max={n_max}")
        idx = leg.milestone_frames
        states = sequence_states(leg.seq)[idx]
        xs.append(encode_bidirectional(leg.seq.root_pos[idx], leg.seq.root_facing[idx], leg.start.root,
                                       leg.goal.root, leg.seq.contacts[idx], states))
        conds.append(build_milestone_condition(leg.start, leg.goal, leg.scene, leg.obj, sensor))
        ns.append(leg.n_milestones)
    ns = np.array(ns)
    return DenoiserData(_pad(xs, n_max), _stack_cond(conds), ns, None, ns)


def milestone_pose_data(legs: list[Leg], sensor: SensorConfig, n_max: int) -> DenoiserData:
    xs, fcs, conds, ns = [], [], [], []
    for leg in legs:
        idx = leg.milestone_frames
        s = leg.seq
        states = sequence_states(s)[idx]
        fcs.append(frame_conditions(leg.scene, leg.obj, s.root_pos[idx], s.root_facing[idx],
                                    s.contacts[idx], states, sensor))
        xs.append(s.joints[idx].reshape(len(idx), -1))
        goal_pose = leg.goal.pose.joints if leg.goal.pose is not None else sk.rest_pose()
        conds.append({"theta_s": leg.start.pose.joints.reshape(-1), "theta_g": goal_pose.reshape(-1)})
        ns.append(leg.n_milestones)
    return DenoiserData(_pad(xs, n_max), _stack_cond(conds), np.array(ns), _pad(fcs, n_max))


def _segments(legs: list[Leg]):
    for leg in legs:
        for k in range(leg.n_milestones):
            yield leg, SEGMENT * k, SEGMENT * (k + 1)


def trajectory_data(legs: list[Leg], sensor: SensorConfig) -> DenoiserData:
    xs, conds = [], []
    cache = {}
    for leg, a, b in _segments(legs):
        s = leg.seq
        if id(leg) not in cache:
            cache[id(leg)] = sequence_states(s)
        states = cache[id(leg)]
        ra, rb = s.root(a), s.root(b)
        sl = slice(a, b + 1)
        xs.append(encode_bidirectional(s.root_pos[sl], s.root_facing[sl], ra, rb, s.contacts[sl],
                                       states[sl]))
        conds.append(trajectory_condition(leg.scene, leg.obj, ra, rb,
                                          np.concatenate([s.contacts[a], states[a]]),
                                          np.concatenate([s.contacts[b], states[b]]), sensor))
    return DenoiserData(np.array(xs, dtype=np.float32), _stack_cond(conds))


def trajectory_condition(scene, obj, ra, rb, m_a, m_b, sensor: SensorConfig) -> dict:
    pos = np.stack([ra.position, rb.position])
    fac = np.stack([ra.facing, rb.facing])
    I = object_features(obj, pos, fac)
    O = environment_occupancies(scene, pos, fac, sensor)
    return {"I_a": I[0], "I_b": I[1], "O_a": O[0], "O_b": O[1], "m_a": np.asarray(m_a, dtype=float),
            "m_b": np.asarray(m_b, dtype=float), "t": relative(ra, rb).vector()}


def infill_data(legs: list[Leg], sensor: SensorConfig) -> DenoiserData:
    xs, fcs, conds = [], [], []
    cache = {}
    for leg, a, b in _segments(legs):
        s = leg.seq
        if id(leg) not in cache:
            cache[id(leg)] = sequence_states(s)
        sl = slice(a, b + 1)
        fcs.append(frame_conditions(leg.scene, leg.obj, s.root_pos[sl], s.root_facing[sl], s.contacts[sl],
                                    cache[id(leg)][sl], sensor).astype(np.float32))
        xs.append(s.joints[sl].reshape(SEGMENT_FRAMES, -1))
        conds.append({"theta_a": s.joints[a].reshape(-1), "theta_b": s.joints[b].reshape(-1)})
    return DenoiserData(np.array(xs, dtype=np.float32), _stack_cond(conds), None, np.array(fcs))


def goal_poses(records) -> np.ndarray:
    return np.stack([rec.goal.pose.joints for rec in records])


def prior_inputs(records, sensor: SensorConfig) -> tuple[np.ndarray, np.ndarray]:
    occ = np.concatenate([environment_occupancies(r.scene, r.goal.root.position[None],
                                                  r.goal.root.facing[None], sensor) for r in records])
    act = np.stack([r.goal.action_onehot for r in records])
    return occ, act


def build_denoiser(name: str, cfg: PipelineConfig) -> DenoiserTransformer:
    d = cfg.denoiser
    common = dict(dim=d.dim, heads=d.heads, blocks=d.blocks, ff_mult=d.ff_mult)
    fdim = frame_cond_dim(cfg.sensor)
    if name == "milestones":
        return DenoiserTransformer(MILESTONE_DIM, milestone_cond_dims(cfg.sensor), 0, cfg.n_max,
                                   n_max=cfg.n_max, **common)
    if name == "milestone-poses":
        return DenoiserTransformer(POSE_DIM, {"theta_s": POSE_DIM, "theta_g": POSE_DIM}, fdim, cfg.n_max,
                                   **common)
    if name == "trajectory":
        return DenoiserTransformer(MILESTONE_DIM, trajectory_cond_dims(cfg.sensor), 0, SEGMENT_FRAMES,
                                   **common)
    if name == "infill":
        return DenoiserTransformer(POSE_DIM, {"theta_a": POSE_DIM, "theta_b": POSE_DIM}, fdim,
                                   SEGMENT_FRAMES, **common)
    raise ValueError(f"unknown denoiser {name!r}; valid: {', '.join(DENOISERS)}")


def denoiser_data(name: str, legs: list[Leg], cfg: PipelineConfig) -> DenoiserData:
    if name == "milestones":
        return milestone_data(legs, cfg.sensor, cfg.n_max)
    if name == "milestone-poses":
        return milestone_pose_data(legs, cfg.sensor, cfg.n_max)
    if name == "trajectory":
        return trajectory_data(legs, cfg.sensor)
    if name == "infill":
        return infill_data(legs, cfg.sensor)
    raise ValueError(f"unknown denoiser {name!r}; valid: {', '.join(DENOISERS)}")


class ModelBundle:
    """The six sub-models plus the shared diffusion schedule."""

    def __init__(self, cfg: PipelineConfig, models: dict | None = None):
        self.cfg = cfg
        self.schedule = cfg.schedule()
        self.models = dict(models or {})

    def __getitem__(self, name):
        if name not in self.models:
            raise KeyError(f"sub-model {name!r} is not loaded")
        return self.models[name]

    def missing(self) -> list[str]:
        return [n for n in SUBMODELS if n not in self.models]

    def save(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return {n: save_submodel(n, m, out / f"{n}.ckpt") for n, m in self.models.items()}

    @classmethod
    def load(cls, cfg: PipelineConfig, model_dir, names=SUBMODELS) -> ModelBundle:
        d = Path(model_dir)
        missing = [n for n in names if not (d / f"{n}.ckpt").exists()]
        if missing:
            raise FileNotFoundError(f"missing checkpoints: {', '.join(missing)}")
        return cls(cfg, {n: load_submodel(n, d / f"{n}.ckpt") for n in names})


def save_submodel(name: str, model: torch.nn.Module, path) -> str:
    config = {"kind": name, "model": model.config}
    return checkpoint.save(path, model.state_dict(), config)


def load_submodel(name: str, path) -> torch.nn.Module:
    tensors, config = checkpoint.load(path)
    if config.get("kind") != name:
        raise checkpoint.CheckpointError(f"{path} holds {config.get('kind')!r}, expected {name!r}")
    mc = config["model"]
    if name == "vqvae":
        model = PartVqvae(mc["K"], mc["d"], mc["hidden"], mc["beta"], mc["parts"], mc["n_joints"])
    elif name == "prior":
        model = IndexPrior(**mc)
    else:
        model = DenoiserTransformer(**mc)
    model.load_state_dict(tensors)
    model.eval()
    return model


def _dtype(dtype):
    return dtype or torch.float32


def train_submodel(name: str, records, cfg: PipelineConfig, rng: np.random.Generator,
                   vqvae: PartVqvae | None = None, log=None, dtype=None):
    """Train one sub-model on ground-truth records; returns (model, curve).

    The prior needs the trained VQ-VAE to encode goal poses into indices.
    """
    dtype = _dtype(dtype)
    if name == "vqvae":
        vc = VqvaeConfig(**{**asdict(cfg.vqvae), "steps": cfg.steps, "batch_size": cfg.batch_size,
                            "lr": cfg.lr})
        return train_vqvae(goal_poses(records), vc, rng, log, dtype)
    if name == "prior":
        if vqvae is None:
            raise ValueError("training the prior requires a trained VQ-VAE")
        idx = encode_pose(vqvae, goal_poses(records))
        occ, act = prior_inputs(records, cfg.sensor)
        pc = PriorConfig(**{**asdict(cfg.prior), "steps": cfg.steps, "batch_size": cfg.batch_size,
                            "lr": cfg.lr})
        return train_prior(idx, occ, act, vqvae.config["K"], pc, rng, log, dtype)
    legs = legs_from_records(records)
    data = denoiser_data(name, legs, cfg)
    torch.manual_seed(int(rng.integers(2 ** 31)))
    model = build_denoiser(name, cfg).to(dtype)
    curve = train_denoiser(model, data, cfg.schedule(), cfg.steps, cfg.batch_size, cfg.lr, rng, log)
    model.eval()
    return model, curve


def train_bundle(records, cfg: PipelineConfig, rng: np.random.Generator, log=None) -> ModelBundle:
    models = {}
    for name in SUBMODELS:
        sub_log = None if log is None else (lambda rec, n=name: log(n, rec))
        model, _ = train_submodel(name, records, cfg, rng, models.get("vqvae"), sub_log)
        models[name] = model
    return ModelBundle(cfg, models)


def untrained_bundle(records, cfg: PipelineConfig, seed: int = 0) -> ModelBundle:
    """Random-weight sub-models whose input/output normalizers are fitted to
    the data, so outputs land on the data's scale."""
    torch.manual_seed(seed)
    vq = PartVqvae(cfg.vqvae.K, cfg.vqvae.d, cfg.vqvae.hidden, cfg.vqvae.beta)
    vq.pose_norm.fit(goal_poses(records).reshape(len(records), -1))
    vq.trained.fill_(1)
    occ, _ = prior_inputs(records[:1], cfg.sensor)
    models = {"vqvae": vq.eval(),
              "prior": IndexPrior(occ.shape[1], cfg.vqvae.K, sk.N_PARTS, cfg.prior.dim, cfg.prior.heads,
                                  cfg.prior.blocks).eval()}
    legs = legs_from_records(records)
    for name in DENOISERS:
        model = build_denoiser(name, cfg)
        fit_normalizers(model, denoiser_data(name, legs, cfg))
        models[name] = model.eval()
    return ModelBundle(cfg, models)
