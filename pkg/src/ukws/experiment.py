"""Desk-scale two-stage experiment on synthetic keyword clusters."""

from dataclasses import dataclass

from .embedder import Embedder, EmbedderConfig, TrainSchedule, train_stage
from .enrollment import enroll
from .evaluation import evaluate
from .synthetic import ClusterSpec, desk_splits


@dataclass(frozen=True)
class DeskConfig:
    pretrain_epochs: int = 60
    finetune_epochs: int = 5
    shots: int = 5
    per_class: int = 2
    loss: str = "ap"


def heldout_report(model, user, shots):
    """Enroll ``shots`` samples per user class and score the rest as queries."""
    protos = enroll({kw: model.embed(x[:shots]) for kw, x in user.items()})
    queries = [(kw, e) for kw, x in user.items() for e in model.embed(x[shots:])]
    return evaluate(queries, protos)[0]


def run_desk_experiment(seed, cfg=DeskConfig(), spec=ClusterSpec()):
    """EERs on held-out classes for: untrained, pretrained, pretrain+finetune, finetune-only."""
    pre, fine, user = desk_splits(seed, spec=spec)
    base = Embedder(EmbedderConfig(n_frames=spec.n_frames, n_coeffs=spec.n_coeffs, seed=seed))
    pretrained = train_stage(
        base, pre, cfg.loss,
        TrainSchedule.pretrain(epochs=cfg.pretrain_epochs, per_class=cfg.per_class), seed=seed,
    ).model
    ft = TrainSchedule.finetune(epochs=cfg.finetune_epochs, per_class=cfg.per_class)
    two_stage = train_stage(pretrained, fine, cfg.loss, ft, seed=seed).model
    ft_only = train_stage(base, fine, cfg.loss, ft, seed=seed).model
    return {
        "untrained": heldout_report(base, user, cfg.shots).eer,
        "pretrain_only": heldout_report(pretrained, user, cfg.shots).eer,
        "pretrain_finetune": heldout_report(two_stage, user, cfg.shots).eer,
        "finetune_only": heldout_report(ft_only, user, cfg.shots).eer,
    }
