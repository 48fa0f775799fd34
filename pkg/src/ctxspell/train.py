"""Tagging loss, optimization loop, partial adaptation and distillation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .augment import AugmentConfig, build_training_example
from .model import Batch, CorrectionModel, collate, is_new_component
from .simdata import Utterance

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ---- loss -------------------------------------------------------------------


@dataclass
class LossInputs:
    """Predicted distributions, integer targets and a mask of real positions.

    ``cls_probs`` is [..., L, 4], ``cind_probs`` is [..., L, N_b + 1].
    """

    cls_probs: torch.Tensor
    cind_probs: torch.Tensor
    cls: torch.Tensor
    cind: torch.Tensor
    mask: torch.Tensor


def _masked_nll(logp: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if target[mask].numel() and (target[mask].min() < 0 or target[mask].max() >= logp.shape[-1]):
        raise ValueError("target index out of range")
    picked = logp.gather(-1, target.clamp(0, logp.shape[-1] - 1).unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum() / mask.sum()


def _empty(mask: torch.Tensor, ref: torch.Tensor) -> bool:
    if int(mask.sum()) == 0:
        logger.warning("loss over zero unmasked positions, defined as 0")
        return True
    return False


def loss(inputs: LossInputs) -> torch.Tensor:
    """Cross-entropy of the class head plus cross-entropy of the index head.

    Each term is a mean over unmasked positions.
    """
    for t in (inputs.cls_probs, inputs.cind_probs):
        if not torch.isfinite(t).all():
            raise ValueError("non-finite predictions")
    mask = inputs.mask.bool()
    if _empty(mask, inputs.cls_probs):
        return (inputs.cls_probs.sum() + inputs.cind_probs.sum()) * 0.0
    return _masked_nll(torch.log(inputs.cls_probs), inputs.cls, mask) + _masked_nll(
        torch.log(inputs.cind_probs), inputs.cind, mask
    )


def loss_from_logits(cls_logits, cind_logits, y_cls, y_cind, mask) -> torch.Tensor:
    """Same objective as :func:`loss`, computed stably from logits."""
    for t in (cls_logits, cind_logits):
        if not torch.isfinite(t).all():
            raise ValueError("NaN or Inf in logits")
    mask = mask.bool()
    if _empty(mask, cls_logits):
        return (cls_logits.sum() + cind_logits.sum()) * 0.0
    return _masked_nll(F.log_softmax(cls_logits, -1), y_cls, mask) + _masked_nll(
        F.log_softmax(cind_logits, -1), y_cind, mask
    )


def soft_kl(student_logits, teacher_logits, mask, temperature: float) -> torch.Tensor:
    """KL(teacher || student) between temperature-softened distributions, mean over positions."""
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(f"teacher/student outputs differ: {tuple(teacher_logits.shape)} vs {tuple(student_logits.shape)}")
    mask = mask.bool()
    logp_t = F.log_softmax(teacher_logits / temperature, -1)
    logp_s = F.log_softmax(student_logits / temperature, -1)
    kl = (logp_t.exp() * (logp_t - logp_s)).sum(-1)
    return (kl * mask).sum() / mask.sum().clamp(min=1)


# ---- config -----------------------------------------------------------------


@dataclass
class DistillConfig:
    temperature: float = 2.0
    weight_hard: float = 0.5
    weight_soft: float = 0.5

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 2e-3
    warmup: int = 400
    seed: int = 0
    partial: bool = False
    r_sampling: str | float = "uniform"
    clip_norm: float = 1.0
    log_every: int = 50  # 0 disables logging
    distill: DistillConfig | None = None

    def __post_init__(self):
        if isinstance(self.distill, Mapping):
            self.distill = DistillConfig(**self.distill)
        if self.r_sampling != "uniform":
            r = float(self.r_sampling)
            if not 0.0 <= r <= 1.0:
                raise ValueError("fixed r must be in [0, 1]")
            self.r_sampling = r
        if self.steps < 0 or self.batch_size < 1 or self.warmup < 0 or self.lr < 0 or self.log_every < 0:
            raise ValueError("bad train config")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def lr_at(self, step: int) -> float:
        """Linear warmup to ``lr`` then inverse-square-root decay (step counts from 1)."""
        step = max(step, 1)
        if self.warmup == 0:
            return self.lr
        return self.lr * min(step / self.warmup, math.sqrt(self.warmup / step))


# ---- data -------------------------------------------------------------------


class BatchStream:
    """Endless, seed-determined stream of augmented training batches."""

    def __init__(
        self,
        model: CorrectionModel,
        utterances: Sequence[Utterance],
        pool: Sequence[str],
        pairs: Mapping[str, Sequence[str]],
        aug: AugmentConfig,
        batch_size: int,
        seed: int = 0,
    ):
        self.model = model
        self.utterances = list(utterances)
        self.pool = list(pool)
        self.pairs = pairs
        self.aug = aug
        self.batch_size = batch_size
        self.seed = seed
        if model.acoustic and not all(u.has_alignment for u in self.utterances):
            raise ValueError("acoustic variants need frames and a rough alignment for every utterance")

    def examples(self, step: int):
        rng = np.random.default_rng([self.seed, step])
        idx = rng.integers(len(self.utterances), size=self.batch_size)
        return [
            build_training_example(
                self.utterances[i], self.pool, self.pairs, self.aug, rng,
                s_kmax=self.model.cfg.s_kmax, acoustic=self.model.acoustic, chunk=self.model.cfg.chunk,
            )
            for i in idx
        ]

    def batch(self, step: int) -> Batch:
        return collate(self.model, [ex.inputs for ex in self.examples(step)])

    def __iter__(self) -> Iterator[Batch]:
        step = 0
        while True:
            yield self.batch(step)
            step += 1


def build_vocab(texts: Iterable[str], chunk: int) -> list[str]:
    """Sorted token inventory of ``texts`` (special tokens are added by the model config)."""
    from .textcore import tokenize

    return sorted({t for text in texts for t in tokenize(text, chunk).tokens})


# ---- loops ------------------------------------------------------------------


@dataclass
class FitResult:
    losses: list[float] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    def write_log(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.log, indent=1) + "\n", encoding="utf-8")


def fit(
    model: CorrectionModel,
    batches: Iterable[Batch],
    cfg: TrainConfig,
    teacher: CorrectionModel | None = None,
    on_log: Callable[[dict], None] | None = None,
) -> FitResult:
    """Adam with warmup + inverse-sqrt decay over ``cfg.steps`` batches.

    Only parameters with ``requires_grad`` are updated.  With ``teacher``
    and ``cfg.distill`` set, the objective mixes the hard tagging loss with
    soft KL targets from the teacher on both heads.
    """
    torch.manual_seed(cfg.seed)
    r_rng = np.random.default_rng([cfg.seed, 17])
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=1.0, betas=(0.9, 0.98), eps=1e-9)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: cfg.lr_at(s + 1))
    if teacher is not None:
        if cfg.distill is None:
            raise ValueError("a teacher needs a distill config")
        teacher.eval()
    result = FitResult()
    model.train()
    it = iter(batches)
    for step in range(1, cfg.steps + 1):
        batch = next(it)
        r = float(r_rng.random()) if cfg.r_sampling == "uniform" else float(cfg.r_sampling)
        if not model.acoustic:
            r = 1.0
        out = model(batch, r=r)
        if not all(torch.isfinite(t).all() for t in out.values()):
            raise TrainingDiverged(f"non-finite logits at step {step}; last losses {result.losses[-5:]}")
        hard = loss_from_logits(out["cls_logits"], out["cind_logits"], batch.cls, batch.cind, batch.token_mask)
        total = hard
        if teacher is not None:
            with torch.no_grad():
                t_out = teacher(batch, r=r)
            dc = cfg.distill
            soft = soft_kl(out["cls_logits"], t_out["cls_logits"], batch.token_mask, dc.temperature) + soft_kl(
                out["cind_logits"], t_out["cind_logits"], batch.token_mask, dc.temperature
            )
            total = dc.weight_hard * hard + dc.weight_soft * soft
        value = float(total.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss {value} at step {step}; last losses {result.losses[-5:]}")
        opt.zero_grad(set_to_none=True)
        total.backward()
        if cfg.clip_norm:
            torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm)
        opt.step()
        lr = opt.param_groups[0]["lr"]
        sched.step()
        result.losses.append(value)
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps):
            window = result.losses[-cfg.log_every :]
            entry = {"step": step, "loss": sum(window) / len(window), "lr": lr, "r": r}
            result.log.append(entry)
            logger.info("step %d loss %.4f lr %.2e r %.2f", step, entry["loss"], lr, r)
            if on_log:
                on_log(entry)
    model.eval()
    return result


def frozen_state(model: CorrectionModel) -> dict[str, torch.Tensor]:
    return {n: t.detach().clone() for n, t in model.state_dict().items() if not is_new_component(n)}


def check_frozen(model: CorrectionModel, base: CorrectionModel) -> None:
    """Raise unless every shared tensor of ``model`` equals ``base`` bit for bit."""
    base_state = base.state_dict()
    for name, t in model.state_dict().items():
        if is_new_component(name):
            continue
        if name not in base_state:
            raise ValueError(f"freeze mask mismatch: {name} not in base checkpoint")
        if not torch.equal(t, base_state[name]):
            raise ValueError(f"frozen tensor {name} changed during adaptation")


def start_acoustic(base: CorrectionModel, variant: str, seed: int = 0) -> CorrectionModel:
    """Acoustic model sharing ``base``'s weights, with fresh zero-output acoustic branches."""
    if base.cfg.variant != "text":
        raise ValueError("partial adaptation starts from a text-only model")
    if variant not in ("ea", "da"):
        raise ValueError("target variant must be ea or da")
    model = CorrectionModel(base.cfg.with_variant(variant), seed=seed)
    model.load_shared(base)
    model.zero_acoustic_output()
    return model


def partial_adapt(
    base: CorrectionModel,
    variant: str,
    make_batches: Callable[[CorrectionModel], Iterable[Batch]],
    cfg: TrainConfig,
) -> tuple[CorrectionModel, FitResult]:
    """Train only the adapter and acoustic attention on top of a frozen text-only model."""
    model = start_acoustic(base, variant, cfg.seed)
    new = set(model.new_component_names())
    if not new:
        raise ValueError("freeze mask names no parameters")
    for name, p in model.named_parameters():
        p.requires_grad_(name in new)
    result = fit(model, make_batches(model), cfg)
    for p in model.parameters():
        p.requires_grad_(True)
    check_frozen(model, base)
    return model, result


def distill(
    teacher: CorrectionModel,
    student: CorrectionModel,
    make_batches: Callable[[CorrectionModel], Iterable[Batch]],
    cfg: TrainConfig,
) -> tuple[CorrectionModel, FitResult]:
    """Train ``student`` against hard targets and the teacher's softened outputs."""
    if student.n_parameters() >= teacher.n_parameters():
        raise ValueError("student must have fewer parameters than the teacher")
    if student.cfg.variant != teacher.cfg.variant:
        raise ValueError("teacher and student variants differ")
    if student.cfg.vocab != teacher.cfg.vocab:
        raise ValueError("teacher and student must share a vocabulary")
    if cfg.distill is None:
        cfg = TrainConfig(**{**cfg.__dict__, "distill": DistillConfig()})
    result = fit(student, make_batches(student), cfg, teacher=teacher)
    return student, result
