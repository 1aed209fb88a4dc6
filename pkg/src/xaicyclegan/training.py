"""Two-pass explanation-assisted CycleGAN training and the plain baseline."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import DomainDataset, sample_noise_mask
from .explain import (
    SIGNS,
    compose_input_mask,
    gradient_mask_hook,
    lambda_input,
    lambda_weight,
    saliency_and_scores,
    validate_gamma,
)
from .models import (
    COMPOSITE_MODES,
    Discriminator,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)

log = logging.getLogger(__name__)

MODES = ("baseline", "xai")
DTYPES = {"float32": np.float32, "float64": np.float64}


class ConfigError(ValueError):
    """A TrainConfig field holds an invalid value."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class NonFiniteLossError(FloatingPointError):
    def __init__(self, record: LossRecord):
        bad = [k for k, v in dataclasses.asdict(record).items() if isinstance(v, float) and not math.isfinite(v)]
        super().__init__(f"non-finite loss at step {record.step}: {', '.join(bad)}")
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "xai"
    steps: int = 500
    batch_size: int = 4
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lambda_cycle: float = 10.0
    lambda_mask_adv: float = 1.0
    lambda_identity: float = 0.0
    alpha: float = 0.1
    gamma: int = 2
    sign: str = "suppress"
    ngf: int = 16
    ndf: int = 4
    num_resnet: int = 2
    image_size: int = 16
    seed: int = 0
    # None: lambdas follow the discriminators; a number pins both
    force_lambda: float | None = None
    saliency_target: float = 1.0
    saliency_reduce: str = "max"
    composite: str = "blend"
    reuse_noise: bool = False
    checkpoint_every: int = 100
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        for name in ("steps", "checkpoint_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(name, f"must be a non-negative integer, got {v!r}")
        for name in ("batch_size", "ngf", "ndf", "image_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if not isinstance(self.num_resnet, int) or self.num_resnet < 0:
            raise ConfigError("num_resnet", f"must be a non-negative integer, got {self.num_resnet!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed!r}")
        for name in ("lr", "alpha"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be positive, got {getattr(self, name)!r}")
        for name in ("lambda_cycle", "lambda_mask_adv", "lambda_identity"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, f"must be non-negative, got {getattr(self, name)!r}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(name, f"must lie in [0, 1), got {getattr(self, name)!r}")
        try:
            validate_gamma(self.gamma)
        except (ValueError, TypeError) as exc:
            raise ConfigError("gamma", str(exc)) from None
        if self.sign not in SIGNS:
            raise ConfigError("sign", f"must be one of {tuple(SIGNS)}, got {self.sign!r}")
        if self.force_lambda is not None and not 0 <= self.force_lambda <= 1:
            raise ConfigError("force_lambda", f"must be null or in [0, 1], got {self.force_lambda!r}")
        if self.saliency_reduce not in ("max", "mean"):
            raise ConfigError("saliency_reduce", f"must be 'max' or 'mean', got {self.saliency_reduce!r}")
        if self.composite not in COMPOSITE_MODES:
            raise ConfigError("composite", f"must be one of {COMPOSITE_MODES}, got {self.composite!r}")
        if self.dtype not in DTYPES:
            raise ConfigError("dtype", f"must be one of {tuple(DTYPES)}, got {self.dtype!r}")
        try:
            self.generator_config()
        except ValueError as exc:
            raise ConfigError("image_size" if "image_size" in str(exc) else "ngf", str(exc)) from None

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(ngf=self.ngf, num_resnet=self.num_resnet, image_size=self.image_size)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class LossRecord:
    step: int
    loss_G: float
    loss_D_A: float
    loss_D_B: float
    loss_cycle: float
    loss_mask_adv: float
    lambda_a: float
    lambda_b: float
    wall_ms: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in dataclasses.asdict(self).values())


LOSS_FIELDS = tuple(f.name for f in dataclasses.fields(LossRecord))


# ---------------------------------------------------------------------------
# models and optimizers
# ---------------------------------------------------------------------------

@dataclass
class Models:
    G_AB: Generator
    G_BA: Generator
    D_A: Discriminator
    D_B: Discriminator
    M_A: Discriminator  # mask critics, judging composited outputs in A / B
    M_B: Discriminator

    GROUPS = {"G": ("G_AB", "G_BA"), "D": ("D_A", "D_B"), "M": ("M_A", "M_B")}

    def named_parameters(self, group: str | None = None) -> list[tuple[str, Tensor]]:
        names = self.GROUPS[group] if group else [f.name for f in dataclasses.fields(self)]
        out = []
        for name in names:
            out.extend((f"{name}.{p}", t) for p, t in getattr(self, name).named_parameters())
        return out

    def parameters(self, group: str | None = None) -> list[Tensor]:
        return [t for _, t in self.named_parameters(group)]


def build_models(cfg: TrainConfig) -> Models:
    seeds = np.random.SeedSequence(cfg.seed).generate_state(6)
    gcfg, dt = cfg.generator_config(), cfg.np_dtype
    return Models(
        G_AB=build_generator(gcfg, int(seeds[0]), dtype=dt, composite=cfg.composite),
        G_BA=build_generator(gcfg, int(seeds[1]), dtype=dt, composite=cfg.composite),
        D_A=build_discriminator(cfg.ndf, int(seeds[2]), dtype=dt),
        D_B=build_discriminator(cfg.ndf, int(seeds[3]), dtype=dt),
        M_A=build_discriminator(cfg.ndf, int(seeds[4]), dtype=dt, mask=True),
        M_B=build_discriminator(cfg.ndf, int(seeds[5]), dtype=dt, mask=True),
    )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Sequence[Tensor]) -> AdamState:
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_update(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
                lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam step, in place on ``params`` and ``state``."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.m[i] + (1.0 - b1) * g
        v = b2 * state.v[i] + (1.0 - b2) * (g * g)
        state.m[i], state.v[i] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.5, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state = AdamState.zeros(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adam_update(self.params, grads, self.state, self.lr, self.betas, self.eps)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class AdversarialLosses:
    d_loss: Tensor
    g_loss: Tensor
    x_for_lambda: float


def lsgan_d_loss(D, real: Tensor, fake: Tensor) -> Tensor:
    return 0.5 * (ag.mse(D(real), 1.0) + ag.mse(D(fake.detach()), 0.0))


def lsgan_g_loss(D, fake: Tensor) -> Tensor:
    return ag.mse(D(fake), 1.0)


def adversarial_losses(D, real: Tensor, fake: Tensor) -> AdversarialLosses:
    """Least-squares GAN losses plus the critic's deviation from its targets."""
    real_scores = D(real)
    fake_scores = D(fake.detach())
    d_loss = 0.5 * (ag.mse(real_scores, 1.0) + ag.mse(fake_scores, 0.0))
    g_loss = lsgan_g_loss(D, fake)
    return AdversarialLosses(d_loss, g_loss, lambda_input(real_scores.data, fake_scores.data))


def cycle_loss(original: Tensor, cycled: Tensor, lambda_cycle: float) -> Tensor:
    if original.shape != cycled.shape:
        raise ag.ShapeError("cycle_loss", f"{original.shape} vs {cycled.shape}")
    return lambda_cycle * ag.l1(cycled, original)


# ---------------------------------------------------------------------------
# one training step
# ---------------------------------------------------------------------------

@dataclass
class StepNoise:
    """Soft masks for one step, always drawn in the same order."""

    fwd_A: Tensor  # for G_AB(real_A)
    fwd_B: Tensor  # for G_BA(real_B)
    cyc_A: Tensor  # for G_BA(fake_B)
    cyc_B: Tensor  # for G_AB(fake_A)
    idt_A: Tensor | None = None
    idt_B: Tensor | None = None

    @classmethod
    def draw(cls, rng: np.random.Generator, batch: int, size: int, dtype, identity: bool, reuse: bool) -> StepNoise:
        draws = [sample_noise_mask(size, size, rng, batch=batch, dtype=dtype) for _ in range(4)]
        noise = cls(*draws)
        if reuse:
            noise.cyc_A, noise.cyc_B = noise.fwd_A, noise.fwd_B
        if identity:
            noise.idt_A = sample_noise_mask(size, size, rng, batch=batch, dtype=dtype)
            noise.idt_B = sample_noise_mask(size, size, rng, batch=batch, dtype=dtype)
        return noise


class Trainer:
    """Holds models, optimizers and the step counter for one run."""

    def __init__(self, cfg: TrainConfig, models: Models | None = None):
        self.cfg = cfg
        self.models = models if models is not None else build_models(cfg)
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.optimizers = {
            group: Adam(self.models.parameters(group), cfg.lr, betas) for group in Models.GROUPS
        }
        self.step = 0
        self.last_fakes: dict[str, np.ndarray] = {}

    @property
    def xai(self) -> bool:
        return self.cfg.mode == "xai"

    def noise_rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng((self.cfg.seed, 1, step))

    def _lambda(self, critic, real: np.ndarray, fake_scores: np.ndarray) -> float:
        if self.cfg.force_lambda is not None:
            return float(self.cfg.force_lambda)
        with ag.no_grad():
            real_scores = critic(Tensor(real)).data
        return lambda_weight(lambda_input(real_scores, fake_scores), self.cfg.gamma)

    def _saliency(self, critic, image: np.ndarray):
        cfg = self.cfg
        return saliency_and_scores(critic, image, cfg.saliency_target, cfg.saliency_reduce)

    def generator_step(self, real_A: np.ndarray, real_B: np.ndarray, noise: StepNoise) -> dict:
        """Pass 1 (xai only) builds saliency-augmented masks; pass 2 updates both generators."""
        cfg, m = self.cfg, self.models
        directions = [
            # name, G, G_other, source, target-domain reals, critic, mask critic, fwd noise, cycle noise
            ("AB", m.G_AB, m.G_BA, real_A, real_B, m.D_B, m.M_B, noise.fwd_A, noise.cyc_A),
            ("BA", m.G_BA, m.G_AB, real_B, real_A, m.D_A, m.M_A, noise.fwd_B, noise.cyc_B),
        ]
        sign = SIGNS[cfg.sign]

        masks: dict[str, Tensor] = {}
        lambda_b: dict[str, float] = {}
        for name, G, _, src, tgt_real, _, M, fwd, _ in directions:
            if not self.xai:
                masks[name] = fwd
                continue
            with ag.no_grad():
                fake1 = G(Tensor(src), fwd).data
            expl, scores = self._saliency(M, fake1)
            lambda_b[name] = self._lambda(M, tgt_real, scores)
            masks[name] = Tensor(compose_input_mask(fwd, expl, lambda_b[name], sign))

        total = None
        parts = {"cycle": 0.0, "mask_adv": 0.0}
        lambda_a: dict[str, float] = {}
        fakes: dict[str, np.ndarray] = {}
        for name, G, G_other, src, tgt_real, D, M, _, cyc in directions:
            x = Tensor(src)
            fake = G(x, masks[name])
            fakes[name] = fake.data
            if self.xai:
                expl, scores = self._saliency(D, fake.data)
                lambda_a[name] = self._lambda(D, tgt_real, scores)
                ag.register_grad_hook(fake, gradient_mask_hook(expl, cfg.alpha, lambda_a[name]))
            cycled = G_other(fake, cyc)
            g_adv = lsgan_g_loss(D, fake)
            cyc_l = cycle_loss(x, cycled, cfg.lambda_cycle)
            loss = g_adv + cyc_l
            parts["cycle"] += cyc_l.item()
            if self.xai:
                g_mask = lsgan_g_loss(M, fake)
                loss = loss + cfg.lambda_mask_adv * g_mask
                parts["mask_adv"] += g_mask.item()
            total = loss if total is None else total + loss

        if cfg.lambda_identity > 0:
            for G, tgt_real, idt in ((m.G_AB, real_B, noise.idt_A), (m.G_BA, real_A, noise.idt_B)):
                y = Tensor(tgt_real)
                total = total + cfg.lambda_identity * ag.l1(G(y, idt), y)

        params = self.optimizers["G"].params
        grads = ag.grad(total, params)
        loss_G = total.item()
        if math.isfinite(loss_G):
            self.optimizers["G"].step(grads)
        return {
            "loss_G": loss_G,
            "loss_cycle": parts["cycle"],
            "loss_mask_adv": parts["mask_adv"],
            "lambda_a": float(np.mean(list(lambda_a.values()))) if lambda_a else 0.0,
            "lambda_b": float(np.mean(list(lambda_b.values()))) if lambda_b else 0.0,
            "fakes": fakes,
        }

    def discriminator_step(self, real_A: np.ndarray, real_B: np.ndarray, fakes: dict[str, np.ndarray]) -> dict:
        """One Adam step for the primary critics and, in xai mode, the mask critics.

        ``fakes`` are plain arrays, so nothing here reaches the generators.
        """
        m = self.models
        rA, rB = Tensor(real_A), Tensor(real_B)
        fB, fA = Tensor(fakes["AB"]), Tensor(fakes["BA"])
        d_A = lsgan_d_loss(m.D_A, rA, fA)
        d_B = lsgan_d_loss(m.D_B, rB, fB)
        opt = self.optimizers["D"]
        grads = ag.grad(d_A + d_B, opt.params)
        out = {"loss_D_A": d_A.item(), "loss_D_B": d_B.item()}
        if math.isfinite(out["loss_D_A"] + out["loss_D_B"]):
            opt.step(grads)
        if self.xai:
            mopt = self.optimizers["M"]
            mloss = lsgan_d_loss(m.M_A, rA, fA) + lsgan_d_loss(m.M_B, rB, fB)
            mgrads = ag.grad(mloss, mopt.params)
            if math.isfinite(mloss.item()):
                mopt.step(mgrads)
        return out

    def train_step(self, real_A: np.ndarray, real_B: np.ndarray) -> LossRecord:
        cfg = self.cfg
        t0 = time.perf_counter()
        dt = cfg.np_dtype
        real_A = np.asarray(real_A, dtype=dt)
        real_B = np.asarray(real_B, dtype=dt)
        noise = StepNoise.draw(self.noise_rng(self.step), real_A.shape[0], real_A.shape[-1], dt,
                               identity=cfg.lambda_identity > 0, reuse=cfg.reuse_noise)
        try:
            g = self.generator_step(real_A, real_B, noise)
        except FloatingPointError as exc:
            log.error("generator step at %d: %s", self.step + 1, exc)
            g = {k: math.nan for k in ("loss_G", "loss_cycle", "loss_mask_adv", "lambda_a", "lambda_b")}
            g["fakes"] = {}
        fakes = g.pop("fakes")
        if math.isfinite(g["loss_G"]):
            d = self.discriminator_step(real_A, real_B, fakes)
        else:
            d = {"loss_D_A": math.nan, "loss_D_B": math.nan}
        self.step += 1
        record = LossRecord(step=self.step, wall_ms=(time.perf_counter() - t0) * 1000.0, **g, **d)
        if not record.is_finite():
            raise NonFiniteLossError(record)
        return record


def two_pass_generator_step(trainer: Trainer, batch_A: np.ndarray, batch_B: np.ndarray) -> dict:
    """Generator half of a step; returns the generator-side loss fields and the fakes."""
    noise = StepNoise.draw(trainer.noise_rng(trainer.step), len(batch_A), batch_A.shape[-1],
                           trainer.cfg.np_dtype, identity=trainer.cfg.lambda_identity > 0,
                           reuse=trainer.cfg.reuse_noise)
    return trainer.generator_step(np.asarray(batch_A, trainer.cfg.np_dtype),
                                  np.asarray(batch_B, trainer.cfg.np_dtype), noise)


def discriminator_step(trainer: Trainer, batch_A: np.ndarray, batch_B: np.ndarray, fakes: dict) -> dict:
    return trainer.discriminator_step(np.asarray(batch_A, trainer.cfg.np_dtype),
                                      np.asarray(batch_B, trainer.cfg.np_dtype), fakes)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

@dataclass
class RunSummary:
    steps: int
    records: list[LossRecord] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None


Sink = Callable[[LossRecord], None]


def train_loop(cfg: TrainConfig, dataset_A: DomainDataset, dataset_B: DomainDataset,
               sinks: Iterable[Sink] = (), trainer: Trainer | None = None,
               on_checkpoint: Callable[[Trainer, bool], None] | None = None,
               keep_records: bool = True) -> RunSummary:
    """Alternate generator and discriminator steps until ``cfg.steps``.

    ``on_checkpoint(trainer, final)`` is called before the first step, every
    ``cfg.checkpoint_every`` steps, and once at the end (also after an abort).
    A resumed ``trainer`` continues from its own step counter.
    """
    if not len(dataset_A) or not len(dataset_B):
        raise ValueError("both datasets must be non-empty")
    for ds in (dataset_A, dataset_B):
        if ds[0].size != cfg.image_size:
            raise ConfigError("image_size", f"dataset {ds.domain} has size {ds[0].size}, config says {cfg.image_size}")
    trainer = trainer or Trainer(cfg)
    sinks = list(sinks)
    summary = RunSummary(steps=trainer.step)
    saved_at = None
    if on_checkpoint is not None and trainer.step == 0:
        on_checkpoint(trainer, False)
        saved_at = 0
    try:
        while trainer.step < cfg.steps:
            i = trainer.step
            record = trainer.train_step(dataset_A.batch(i, cfg.batch_size), dataset_B.batch(i, cfg.batch_size))
            for sink in sinks:
                sink(record)
            if keep_records:
                summary.records.append(record)
            summary.steps = trainer.step
            if on_checkpoint is not None and cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0 \
                    and trainer.step < cfg.steps:
                on_checkpoint(trainer, False)
                saved_at = trainer.step
    except NonFiniteLossError as exc:
        log.error("%s", exc)
        summary.aborted, summary.error = True, str(exc)
        raise
    finally:
        if on_checkpoint is not None and (summary.aborted or trainer.step != saved_at):
            on_checkpoint(trainer, True)
    return summary
