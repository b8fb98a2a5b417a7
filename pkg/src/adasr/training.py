"""Two-stage training.

Stage 1 alternates the augmentor (maximizing the downsamplers' error when
``rho < 0``) with the two downsampling networks (fitting original and
augmented samples). Stage 2 freezes the downsamplers and fits the spectral
upsampler with a low-resolution reconstruction loss plus a high-resolution
consistency loss.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from .augmentor import Augmentor, check_triple, random_angle, rotate_triple
from .dataio import Scene
from .degradation import SpaDnet, SpeDnet, partition_supports
from .optim import Adam
from .tensor import NumericError, Tensor, add, clamp_min, l1_mean, leaky_relu, linear, log, scalar_mul

log_ = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
# residuals this small are round-off at an exact fit; their L1 subgradient is dropped
L1_DEAD_ZONE = 1e-12

ARMS = ("full", "no-G", "no-LU2", "no-G-no-LU2", "random-rotation", "no-augmentation")


@dataclass
class TrainConfig:
    total_steps: int = 40000
    lr: float = 1e-4
    rho: float = -1.0
    alpha: float = 0.3
    k_g: int = 1
    k_d: int = 1
    angle_range: float = float(np.pi / 4)
    seed: int = 0
    stage2_steps: int = 10000
    log_interval: int = 100
    stage2_lr: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.total_steps < 1 or self.stage2_steps < 1:
            raise ValueError("total_steps and stage2_steps must be >= 1")
        if not self.lr > 0 or (self.stage2_lr is not None and not self.stage2_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.k_g < 1 or self.k_d < 1:
            raise ValueError("alternation counts must be >= 1")
        if self.angle_range < 0 or not np.isfinite(self.angle_range):
            raise ValueError("angle_range must be finite and >= 0")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def lr_stage2(self) -> float:
        return self.lr if self.stage2_lr is None else self.stage2_lr

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class StageReport:
    records: List[dict] = field(default_factory=list)
    angles: List[float] = field(default_factory=list)
    wall_clock: Dict[str, float] = field(default_factory=dict)
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    initial_lu1: Optional[float] = None
    final_lu1: Optional[float] = None
    arm: str = "full"

    def losses(self, key: str) -> List[float]:
        return [r[key] for r in self.records if key in r]


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, stage: int, step: int, report: StageReport):
        super().__init__(f"stage {stage} step {step}: {message}")
        self.stage = stage
        self.step = step
        self.report = report


class SpeUnet:
    """Spectral upsampler: 1x1 convolutions ``C_m -> 64 -> 64 -> C`` with leaky-ReLU."""

    def __init__(self, msi_band_count: int, band_count: int, seed: int = 0, width: int = 64):
        rng = np.random.default_rng(seed)
        sizes = [msi_band_count, width, width, band_count]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(rng.uniform(-bound, bound, (fan_out,)), requires_grad=True))
        self.msi_band_count = msi_band_count
        self.band_count = band_count

    def parameters(self) -> List[Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    def __call__(self, z: Tensor, frozen: bool = False) -> Tensor:
        if z.shape[-1] != self.msi_band_count:
            raise ValueError(f"SpeUnet expects {self.msi_band_count} bands, got {z.shape[-1]}")
        h = z
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if frozen:
                w, b = w.detach(), b.detach()
            h = linear(h, w, b)
            if i < last:
                h = leaky_relu(h, 0.2)
        return h


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_g(m_yg: Tensor, m_zg: Tensor, m_g: Tensor, rho: float) -> Tensor:
    """``rho*log(mean|M_YG - M_G|) + rho*log(mean|M_ZG - M_G|)`` with a 1e-12 floor."""
    ly = log(clamp_min(l1_mean(m_yg, m_g), LOG_FLOOR))
    lz = log(clamp_min(l1_mean(m_zg, m_g), LOG_FLOOR))
    return add(scalar_mul(ly, rho), scalar_mul(lz, rho))


def loss_d(m_y: Tensor, m_yg: Optional[Tensor], m_z: Tensor, m_zg: Optional[Tensor],
           m: Tensor, m_g: Optional[Tensor]) -> Tensor:
    """Sum of the four per-element-normalized L1 terms.

    Passing ``None`` for the augmented pair keeps only the original terms.
    """
    total = add(l1_mean(m_y, m, L1_DEAD_ZONE), l1_mean(m_z, m, L1_DEAD_ZONE))
    if m_g is not None:
        total = add(total, l1_mean(m_yg, m_g, L1_DEAD_ZONE))
        total = add(total, l1_mean(m_zg, m_g, L1_DEAD_ZONE))
    return total


# ---------------------------------------------------------------------------
# models and steps
# ---------------------------------------------------------------------------


@dataclass
class Models:
    augmentor: Augmentor
    spednet: SpeDnet
    spadnet: SpaDnet
    speunet: SpeUnet
    opt_g: Adam
    opt_d: Adam
    opt_u: Adam
    rng: np.random.Generator

    @classmethod
    def build(cls, scene: Scene, config: TrainConfig, supports=None) -> "Models":
        C = scene.y.shape[-1]
        C_m = scene.z.shape[-1]
        ss = np.random.SeedSequence(config.seed)
        g_seed, u_seed, rot_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        if supports is None:
            supports = scene.srf.supports if scene.srf is not None else partition_supports(C, C_m)
        aug = Augmentor(C, angle_range=config.angle_range, seed=g_seed)
        dy = SpeDnet(supports, C)
        dz = SpaDnet(scene.z.shape[0] // scene.y.shape[0])
        u = SpeUnet(C_m, C, seed=u_seed)
        return cls(
            augmentor=aug, spednet=dy, spadnet=dz, speunet=u,
            opt_g=Adam(aug.parameters(), lr=config.lr),
            opt_d=Adam(dy.parameters() + dz.parameters(), lr=config.lr),
            opt_u=Adam(u.parameters(), lr=config.lr_stage2),
            rng=np.random.default_rng(rot_seed),
        )


def _tensors(scene: Scene):
    return Tensor(scene.y), Tensor(scene.z), Tensor(scene.m)


def g_phase(models: Models, y: Tensor, z: Tensor, m: Tensor, rho: float) -> Tuple[float, float]:
    """One augmentor update with the downsamplers frozen. Returns (loss_G, angle)."""
    models.opt_g.zero_grad()
    trip = models.augmentor.augment(y, z, m)
    m_yg = models.spednet(trip.y, frozen=True)
    m_zg = models.spadnet(trip.z, frozen=True)
    loss = loss_g(m_yg, m_zg, trip.m, rho)
    loss.backward()
    models.opt_g.step()
    return loss.item(), trip.angle


def d_phase(models: Models, y: Tensor, z: Tensor, m: Tensor, angle: Optional[float]) -> float:
    """One joint SpeDnet/SpaDnet update. ``angle=None`` trains on originals only."""
    models.opt_d.zero_grad()
    m_y = models.spednet(y)
    m_z = models.spadnet(z)
    if angle is None:
        loss = loss_d(m_y, None, m_z, None, m, None)
    else:
        trip = rotate_triple(y, z, m, angle)
        loss = loss_d(m_y, models.spednet(trip.y), m_z, models.spadnet(trip.z), m, trip.m)
    loss.backward()
    models.opt_d.step()
    return loss.item()


def stage1_step(models: Models, y: Tensor, z: Tensor, m: Tensor, config: TrainConfig,
                arm: str = "full") -> dict:
    """One alternation cycle: ``k_g`` augmentor updates then ``k_d`` downsampler updates."""
    out = {}
    if arm in ("full", "no-LU2"):
        for _ in range(config.k_g):
            out["loss_G"], out["angle"] = g_phase(models, y, z, m, config.rho)
    for _ in range(config.k_d):
        if arm in ("no-augmentation",):
            angle = None
        elif arm in ("no-G", "no-G-no-LU2"):
            angle = 0.0
        elif arm == "random-rotation":
            angle = random_angle(models.rng, config.angle_range)
        else:
            angle = models.augmentor.predict_angle(y, frozen=True).item()
        out["loss_D"] = d_phase(models, y, z, m, angle)
        if angle is not None:
            out["angle"] = angle
    return out


def stage2_losses(models: Models, m_z: Tensor, y: Tensor, z: Tensor, alpha: float,
                  with_lu2: bool = True):
    """``(L_U, L_U1, L_U2)``; L_U2 is ``None`` when ``with_lu2`` is False."""
    y_hat = models.speunet(m_z)
    lu1 = l1_mean(y_hat, y)
    if not with_lu2:
        return lu1, lu1, None
    z_hat = models.spednet(models.speunet(z), frozen=True)
    lu2 = l1_mean(z_hat, z)
    return add(lu1, scalar_mul(lu2, alpha)), lu1, lu2


def stage2_step(models: Models, m_z: Tensor, y: Tensor, z: Tensor, alpha: float) -> dict:
    models.opt_u.zero_grad()
    lu, lu1, lu2 = stage2_losses(models, m_z, y, z, alpha, with_lu2=alpha != 0)
    lu.backward()
    models.opt_u.step()
    out = {"loss_U": lu.item(), "loss_U1": lu1.item()}
    if lu2 is not None:
        out["loss_U2"] = lu2.item()
    return out


def consistency_loss(models: Models, z: Tensor) -> float:
    return l1_mean(models.spednet(models.speunet(z, frozen=True), frozen=True), z).item()


def reconstruct(z, speunet: SpeUnet) -> np.ndarray:
    """Full-resolution HSI estimate from the MSI."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    return speunet(z, frozen=True).data.copy()


def _snapshot(models: Models) -> Dict[str, np.ndarray]:
    snap = {"spednet.raw": models.spednet.raw.data.copy(), "spadnet.raw": models.spadnet.raw.data.copy()}
    for i, p in enumerate(models.augmentor.parameters()):
        snap[f"augmentor.{i}"] = p.data.copy()
    for i, p in enumerate(models.speunet.parameters()):
        snap[f"speunet.{i}"] = p.data.copy()
    return snap


def run_stage1(models: Models, scene: Scene, config: TrainConfig, arm: str, report: StageReport,
               steps: Optional[int] = None) -> None:
    y, z, m = _tensors(scene)
    check_triple(y, z, m)
    steps = config.total_steps if steps is None else steps
    for step in range(1, steps + 1):
        try:
            out = stage1_step(models, y, z, m, config, arm)
        except NumericError as exc:
            raise TrainingAborted(str(exc), 1, step, report) from exc
        if "angle" in out:
            report.angles.append(out["angle"])
        if step % config.log_interval == 0 or step == steps:
            report.records.append({"stage": 1, "step": step, **out})


def run_stage2(models: Models, scene: Scene, config: TrainConfig, alpha: float, report: StageReport,
               steps: Optional[int] = None) -> None:
    y, z, _ = _tensors(scene)
    m_z = Tensor(models.spadnet(z, frozen=True).data)
    steps = config.stage2_steps if steps is None else steps
    report.initial_lu1 = l1_mean(models.speunet(m_z, frozen=True), y).item()
    for step in range(1, steps + 1):
        try:
            out = stage2_step(models, m_z, y, z, alpha)
        except NumericError as exc:
            raise TrainingAborted(str(exc), 2, step, report) from exc
        if step % config.log_interval == 0 or step == steps:
            if "loss_U2" not in out:
                out["loss_U2"] = consistency_loss(models, z)
            report.records.append({"stage": 2, "step": step, **out})
    report.final_lu1 = l1_mean(models.speunet(m_z, frozen=True), y).item()


def run_pipeline(scene: Scene, config: TrainConfig, arm: str = "full",
                 models: Optional[Models] = None) -> Tuple[StageReport, np.ndarray, Models]:
    """Stage 1 for ``total_steps``, then stage 2 for ``stage2_steps``; returns (report, X_hat, models)."""
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}; choose from {ARMS}")
    config.validate()
    models = models or Models.build(scene, config)
    report = StageReport(arm=arm)
    alpha = 0.0 if arm in ("no-LU2", "no-G-no-LU2") else config.alpha

    t0 = time.perf_counter()
    run_stage1(models, scene, config, arm, report)
    t1 = time.perf_counter()
    log_.info("stage 1 done in %.1fs (arm=%s)", t1 - t0, arm)
    run_stage2(models, scene, config, alpha, report)
    t2 = time.perf_counter()
    log_.info("stage 2 done in %.1fs", t2 - t1)

    xhat = reconstruct(scene.z, models.speunet)
    report.wall_clock = {"stage1": t1 - t0, "stage2": t2 - t1}
    report.params = _snapshot(models)
    return report, xhat, models
