"""Three-stage training orchestration and evaluation drivers.

Stage 1 pre-trains the pose-only stack, stage 2 continues with RGB-pose
fusion, stage 3 fine-tunes per downstream task. All stages minimize the
same generative objective; they differ only in which text target each clip
supplies. The task-specific heads (classification, recurrent CTC) exist
solely for the fine-tuning-paradigm comparison harness.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .curation import ClipRecord
from .errors import (
    DivergedLossError,
    EmptyTargetError,
    MissingAnnotationError,
    MissingPrereqCheckpointError,
    UnsupportedTaskError,
)
from .lm import DecodeConfig, SupervisionTarget, generate, sequence_nll
from .metrics import (
    EvalReport,
    bleu_corpus,
    corpus_wer,
    islr_match,
    rouge_l,
    tokenize_for_metric,
    top1,
)
from .model import Clip, UniSignModel

logger = logging.getLogger(__name__)

TASK_ISLR = "islr"
TASK_CSLR = "cslr"
TASK_SLT = "slt"
TASK_PRETRAIN = "pslt"

STAGE_DEFAULTS = {
    1: {"epochs": 20, "batch_size": 16, "grad_accum": 8},
    2: {"epochs": 5, "batch_size": 4, "grad_accum": 8},
    3: {"epochs": 20, "batch_size": 8, "grad_accum": 1},
}


@dataclass
class StageConfig:
    stage: int
    lr: float = 3e-4
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    schedule: str = "cosine"
    epochs: int = 0
    batch_size: int = 0
    grad_accum: int = 0
    min_lr: float = 0.0
    task: Optional[str] = None  # stage 3 only

    @classmethod
    def for_stage(cls, stage: int, task: Optional[str] = None, **overrides) -> "StageConfig":
        if stage not in STAGE_DEFAULTS:
            raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
        kwargs = dict(STAGE_DEFAULTS[stage])
        kwargs.update(overrides)
        return cls(stage=stage, task=task, **kwargs)


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Cosine decay from base_lr at step 0 to min_lr at the final step."""
    if total_steps <= 1:
        return base_lr if step == 0 else min_lr
    frac = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))


def build_target(record: ClipRecord, task: str) -> SupervisionTarget:
    """The per-task text target; one constructor per task, one loss for all."""
    if task == TASK_ISLR:
        if not record.label:
            raise MissingAnnotationError(f"clip {record.clip_id} has no class label")
        return SupervisionTarget("word", record.label)
    if task == TASK_CSLR:
        if not record.glosses:
            raise MissingAnnotationError(f"clip {record.clip_id} has no glosses")
        return SupervisionTarget("gloss", " ".join(record.glosses))
    if task in (TASK_SLT, TASK_PRETRAIN):
        if not record.text:
            raise MissingAnnotationError(f"clip {record.clip_id} has no text")
        return SupervisionTarget("sentence", record.text)
    raise UnsupportedTaskError(f"unknown task {task!r}")


def batch_loss(
    model: UniSignModel,
    tokenizer,
    clips: Sequence[Clip],
    epoch: Optional[int] = None,
) -> Tuple[torch.Tensor, int]:
    """Summed teacher-forced NLL over a batch of clips."""
    sign, mask = model.encode_clips(clips, epoch)
    embed = model.embeddings(sign)
    encoded = []
    for clip in clips:
        ids = tokenizer.encode(clip.target_text)
        if not ids:
            raise EmptyTargetError(f"clip {clip.clip_id} has an empty target")
        encoded.append(ids + [tokenizer.eos_id])
    width = max(len(ids) for ids in encoded)
    tgt = torch.full(
        (len(clips), width), tokenizer.pad_id, dtype=torch.long, device=sign.device
    )
    for b, ids in enumerate(encoded):
        tgt[b, : len(ids)] = torch.tensor(ids, dtype=torch.long, device=sign.device)
    logp = model.lm.log_probs(embed, tgt, src_pad_mask=mask)
    return sequence_nll(logp, tgt, pad_id=tokenizer.pad_id)


# the single objective shared by pre-training and all fine-tuning tasks;
# tasks differ only in the target constructor above
STAGE_OBJECTIVES = {
    TASK_PRETRAIN: batch_loss,
    TASK_ISLR: batch_loss,
    TASK_CSLR: batch_loss,
    TASK_SLT: batch_loss,
}


@dataclass
class TrainHistory:
    steps: List[int] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)  # mean per token at each step

    def record(self, step: int, lr: float, loss: float) -> None:
        self.steps.append(step)
        self.lrs.append(lr)
        self.losses.append(loss)


def save_checkpoint(
    path,
    model: UniSignModel,
    optimizer: Optional[torch.optim.Optimizer],
    stage: int,
    epoch: int,
    step: int,
    config_hash: str = "",
    extra: Optional[dict] = None,
) -> None:
    payload = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "stage": stage,
        "epoch": epoch,
        "step": step,
        "config_hash": config_hash,
        "rng": {
            "torch": torch.get_rng_state(),
            "numpy": np.random.get_state(),
            "python": random.getstate(),
        },
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def restore_rng(state: dict) -> None:
    torch.set_rng_state(state["torch"])
    np.random.set_state(state["numpy"])
    random.setstate(state["python"])


def ensure_prerequisite(stage: int, init_ckpt: Optional[dict]) -> None:
    """Stage 2 needs a stage-1 model; stage 3 needs stage 1 or 2 (pose-only
    experiments may skip stage 2 entirely)."""
    if stage == 1:
        return
    if init_ckpt is None:
        raise MissingPrereqCheckpointError(f"stage {stage} requires an init checkpoint")
    prev = init_ckpt.get("stage")
    if stage == 2 and prev != 1:
        raise MissingPrereqCheckpointError("stage 2 must start from a stage-1 checkpoint")
    if stage == 3 and prev not in (1, 2):
        raise MissingPrereqCheckpointError("stage 3 must start from a stage-1 or stage-2 checkpoint")


def run_stage(
    model: UniSignModel,
    tokenizer,
    clips: Sequence[Clip],
    cfg: StageConfig,
    seed: int = 0,
    out_dir: Optional[str] = None,
    config_hash: str = "",
    resume: Optional[dict] = None,
    checkpoint_every: int = 1,
    max_steps: Optional[int] = None,
    checkpoint_extra: Optional[dict] = None,
) -> Tuple[TrainHistory, Optional[str]]:
    """Run one training stage over prepared clips.

    Clips must already carry their task targets (see `build_target`).
    Returns the loss history and the final checkpoint path (when out_dir is
    given). Deterministic for a fixed seed: data order is shuffled with a
    per-epoch seeded stream and the torch RNG is seeded up front.
    """
    if not clips:
        raise ValueError("run_stage needs at least one clip")
    objective = STAGE_OBJECTIVES[cfg.task or TASK_PRETRAIN]
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay, betas=cfg.betas
    )
    num_batches = math.ceil(len(clips) / cfg.batch_size)
    steps_per_epoch = math.ceil(num_batches / cfg.grad_accum)
    # the schedule horizon comes from the config alone; max_steps only stops
    # execution early, so a stopped-and-resumed run follows the same curve
    total_steps = cfg.epochs * steps_per_epoch

    start_epoch = 0
    step = 0
    if resume is not None:
        model.load_state_dict(resume["model"])
        if resume.get("optimizer"):
            optimizer.load_state_dict(resume["optimizer"])
        start_epoch = resume["epoch"]
        step = resume["step"]
        restore_rng(resume["rng"])
    else:
        torch.manual_seed(seed)

    history = TrainHistory()
    ckpt_path = None
    model.train()
    done = False
    for epoch in range(start_epoch, cfg.epochs):
        order = list(range(len(clips)))
        random.Random(f"{seed}|{epoch}").shuffle(order)
        batches = [
            [clips[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            for b in range(num_batches)
        ]
        optimizer.zero_grad()
        accum_loss = 0.0
        accum_tokens = 0
        epoch_loss = 0.0
        epoch_tokens = 0
        micro = 0
        for batch in batches:
            total, ntok = objective(model, tokenizer, batch, epoch=epoch)
            if not torch.isfinite(total):
                raise DivergedLossError(
                    f"non-finite loss at stage {cfg.stage} epoch {epoch} step {step}: {total}"
                )
            # the optimizer consumes the mean per token; the summed form is
            # what accumulates in the report
            (total / max(ntok, 1) / cfg.grad_accum).backward()
            accum_loss += float(total.detach())
            accum_tokens += ntok
            epoch_loss += float(total.detach())
            epoch_tokens += ntok
            micro += 1
            if micro % cfg.grad_accum == 0 or micro == num_batches:
                lr = cosine_lr(step, total_steps, cfg.lr, cfg.min_lr)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.step()
                optimizer.zero_grad()
                history.record(step, lr, accum_loss / max(accum_tokens, 1))
                accum_loss = 0.0
                accum_tokens = 0
                step += 1
                if max_steps is not None and step >= max_steps:
                    done = True
                    break
        logger.info(
            "stage %d epoch %d/%d: loss/token %.4f (sum %.2f over %d tokens), lr %.2e",
            cfg.stage, epoch + 1, cfg.epochs,
            epoch_loss / max(epoch_tokens, 1), epoch_loss, epoch_tokens,
            history.lrs[-1] if history.lrs else cfg.lr,
        )
        if out_dir is not None and ((epoch + 1) % checkpoint_every == 0 or epoch == cfg.epochs - 1 or done):
            ckpt_path = str(Path(out_dir) / f"stage{cfg.stage}_epoch{epoch + 1:04d}.pt")
            save_checkpoint(
                ckpt_path, model, optimizer, cfg.stage, epoch + 1, step, config_hash,
                extra=checkpoint_extra,
            )
        if done:
            break
    model.eval()
    return history, ckpt_path


@torch.no_grad()
def evaluation_loss(
    model: UniSignModel, tokenizer, clips: Sequence[Clip], batch_size: int = 8
) -> Tuple[float, int]:
    """Summed NLL and token count over held-out clips (sampling pinned)."""
    model.eval()
    total = 0.0
    tokens = 0
    for b in range(0, len(clips), batch_size):
        loss, ntok = batch_loss(model, tokenizer, clips[b : b + batch_size], epoch=None)
        total += float(loss)
        tokens += ntok
    return total, tokens


@torch.no_grad()
def predict_text(
    model: UniSignModel, tokenizer, clip: Clip, decode_cfg: DecodeConfig
) -> str:
    model.eval()
    sign = model.sign_features(clip.grouped, clip.get_frames(), epoch=None)
    embed = model.embeddings(sign)
    return tokenizer.decode(generate(model.lm, embed, decode_cfg))


def evaluate_task(
    model: UniSignModel,
    tokenizer,
    clips: Sequence[Clip],
    task: str,
    decode_cfg: Optional[DecodeConfig] = None,
    split: str = "test",
    text_tokenization: str = "word",
    config_hash: str = "",
) -> Tuple[EvalReport, List[dict]]:
    """Generate text for every clip and score it with the task's metrics."""
    decode_cfg = decode_cfg or DecodeConfig()
    predictions = []
    hyps = []
    for clip in clips:
        hyp = predict_text(model, tokenizer, clip, decode_cfg)
        hyps.append(hyp)
        predictions.append(
            {"clip_id": clip.clip_id, "reference": clip.target_text, "hypothesis": hyp}
        )
    report = EvalReport(task=task, split=split, n_samples=len(clips), config_hash=config_hash)
    report.notes["bleurt"] = "unavailable (external learned metric not bundled)"
    if task == TASK_ISLR:
        vocabulary = sorted({c.label for c in clips if c.label})
        pairs = []
        for clip, hyp in zip(clips, hyps):
            pred_label = vocabulary[islr_match(hyp, vocabulary)]
            pairs.append((clip.label, pred_label))
        report.p_i_top1, report.p_c_top1 = top1(pairs)
    elif task == TASK_CSLR:
        # gloss targets are space-joined, so splitting is the exact inverse
        pairs = [(clip.target_text.split(), hyp.split()) for clip, hyp in zip(clips, hyps)]
        report.wer = corpus_wer(pairs)
    elif task == TASK_SLT:
        refs = [[tokenize_for_metric(c.target_text, text_tokenization)] for c in clips]
        hyp_toks = [tokenize_for_metric(h, text_tokenization) for h in hyps]
        report.bleu = {
            n: bleu_corpus(refs, hyp_toks, max_n=n) for n in (1, 2, 3, 4)
        }
        report.rouge_l = sum(
            rouge_l(r[0], h) for r, h in zip(refs, hyp_toks)
        ) / max(len(clips), 1)
    else:
        raise UnsupportedTaskError(f"unknown task {task!r}")
    return report, predictions


# -- task-specific heads (fine-tuning-paradigm comparison) ------------------


class ClassificationHead(nn.Module):
    """Mean-pooled features -> linear classifier (cross-entropy training)."""

    def __init__(self, feature_dim: int, num_classes: int):
        super().__init__()
        self.proj = nn.Linear(feature_dim, num_classes)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        # feats: T x D for one clip
        return self.proj(feats.mean(dim=0))


class RecurrentCTCHead(nn.Module):
    """LSTM over frame features -> per-frame gloss logits for CTC."""

    BLANK = 0

    def __init__(self, feature_dim: int, num_glosses: int, hidden: int = 256):
        super().__init__()
        self.lstm = nn.LSTM(feature_dim, hidden, batch_first=True)
        self.proj = nn.Linear(hidden, num_glosses + 1)  # +1 for the blank

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(feats.unsqueeze(0))
        return self.proj(out.squeeze(0))  # T x (G+1)

    def greedy_decode(self, feats: torch.Tensor) -> List[int]:
        path = self.forward(feats).argmax(dim=-1).tolist()
        out = []
        prev = None
        for p in path:
            if p != prev and p != self.BLANK:
                out.append(p - 1)
            prev = p
        return out


FEATURE_SIGN = "sign"
FEATURE_LM_ENC = "lm_enc"


@torch.no_grad()
def extract_features(
    model: UniSignModel, clip: Clip, source: str = FEATURE_SIGN
) -> torch.Tensor:
    """Frozen backbone features for the head-based paradigms."""
    model.eval()
    sign = model.sign_features(clip.grouped, clip.get_frames(), epoch=None)
    if source == FEATURE_SIGN:
        return sign
    if source == FEATURE_LM_ENC:
        return model.lm.encode(model.embeddings(sign))
    raise ValueError(f"unknown feature source {source!r}")


def run_ablation_head(
    model: UniSignModel,
    train_clips: Sequence[Clip],
    eval_clips: Sequence[Clip],
    task: str,
    feature_source: str = FEATURE_SIGN,
    steps: int = 300,
    lr: float = 1e-3,
    seed: int = 0,
    config_hash: str = "",
) -> EvalReport:
    """Train a task-specific head on frozen backbone features and score it."""
    if task == TASK_SLT:
        raise UnsupportedTaskError("the head-based paradigm has no translation head")
    if task not in (TASK_ISLR, TASK_CSLR):
        raise UnsupportedTaskError(f"unknown task {task!r}")
    torch.manual_seed(seed)
    train_feats = [extract_features(model, c, feature_source) for c in train_clips]
    eval_feats = [extract_features(model, c, feature_source) for c in eval_clips]
    dim = train_feats[0].shape[-1]

    if task == TASK_ISLR:
        classes = sorted({c.label for c in train_clips if c.label})
        class_to_id = {c: i for i, c in enumerate(classes)}
        head = ClassificationHead(dim, len(classes))
        optim = torch.optim.AdamW(head.parameters(), lr=lr)
        ce = nn.CrossEntropyLoss()
        rng = random.Random(seed)
        for _ in range(steps):
            i = rng.randrange(len(train_clips))
            optim.zero_grad()
            logits = head(train_feats[i])
            loss = ce(logits.unsqueeze(0), torch.tensor([class_to_id[train_clips[i].label]]))
            loss.backward()
            optim.step()
        head.eval()
        pairs = []
        with torch.no_grad():
            for clip, feats in zip(eval_clips, eval_feats):
                pred = classes[int(head(feats).argmax())]
                pairs.append((clip.label, pred))
        p_i, p_c = top1(pairs)
        return EvalReport(
            task=task,
            split="eval",
            n_samples=len(eval_clips),
            p_i_top1=p_i,
            p_c_top1=p_c,
            config_hash=config_hash,
            notes={"paradigm": f"task_specific/{feature_source}"},
        )

    glosses = sorted({g for c in train_clips for g in c.target_text.split()})
    gloss_to_id = {g: i for i, g in enumerate(glosses)}
    head = RecurrentCTCHead(dim, len(glosses))
    optim = torch.optim.AdamW(head.parameters(), lr=lr)
    rng = random.Random(seed)
    for _ in range(steps):
        i = rng.randrange(len(train_clips))
        feats = train_feats[i]
        target = torch.tensor(
            [gloss_to_id[g] + 1 for g in train_clips[i].target_text.split()],
            dtype=torch.long,
        )
        optim.zero_grad()
        logp = torch.log_softmax(head(feats), dim=-1)
        loss = nn.functional.ctc_loss(
            logp.unsqueeze(1),
            target.unsqueeze(0),
            torch.tensor([feats.shape[0]]),
            torch.tensor([len(target)]),
            blank=RecurrentCTCHead.BLANK,
        )
        loss.backward()
        optim.step()
    head.eval()
    pairs = []
    with torch.no_grad():
        for clip, feats in zip(eval_clips, eval_feats):
            hyp = [glosses[i] for i in head.greedy_decode(feats)]
            pairs.append((clip.target_text.split(), hyp))
    return EvalReport(
        task=task,
        split="eval",
        n_samples=len(eval_clips),
        wer=corpus_wer(pairs),
        config_hash=config_hash,
        notes={"paradigm": f"task_specific/{feature_source}"},
    )
