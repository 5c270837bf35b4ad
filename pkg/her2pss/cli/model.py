from __future__ import annotations

import logging
from pathlib import Path

import typer

from her2pss import dependencies
from her2pss.cli.common import (
    N_FULL_HELP,
    N_HALF_HELP,
    PATCH_SIZE_HELP,
    WHOLE_HELP,
    command_errors,
    get_state,
    pss_config,
    pss_was_configured,
)
from her2pss.models.classifier import ConfidenceRule
from her2pss.services.inference_service import render_report, write_report

logger = logging.getLogger(__name__)


def train(
    ctx: typer.Context,
    manifest: Path = typer.Option(..., "--manifest", help="Dataset manifest JSON"),
    out: Path = typer.Option(..., "--out", help="Model file to write"),
    log: Path | None = typer.Option(None, "--log", help="Training log CSV [default: <out>.log.csv]"),
    lr: float | None = typer.Option(None, "--lr", help="Initial learning rate [default: 1e-5]"),
    batch_size: int | None = typer.Option(None, "--batch-size", help="Cores per batch [default: 12]"),
    max_epochs: int | None = typer.Option(None, "--max-epochs", help="Epoch count [default: 30]"),
    weight_decay: float | None = typer.Option(None, "--weight-decay", help="AdamW weight decay [default: 1e-4]"),
    patience: int | None = typer.Option(
        None, "--patience", help="Epochs without validation improvement before decay [default: 5]"
    ),
    lr_factor: float | None = typer.Option(None, "--lr-factor", help="Learning-rate decay factor [default: 0.5]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Training seed [default: 0]"),
    precision: str | None = typer.Option(
        None, "--precision", help="float32 or float64 [default: float32]"
    ),
    patch_size: int | None = typer.Option(None, "--patch-size", help=PATCH_SIZE_HELP),
    n_full: int | None = typer.Option(None, "--n-full", help=N_FULL_HELP),
    n_half: int | None = typer.Option(None, "--n-half", help=N_HALF_HELP),
    whole: bool | None = typer.Option(None, "--whole/--no-whole", help=WHOLE_HELP, show_default=False),
) -> None:
    """Train the reference micro-CNN on a manifest of labeled cores."""
    state = get_state(ctx)
    with command_errors("train"):
        config = pss_config(
            state.config, patch_size=patch_size, n_full=n_full, n_half=n_half, whole=whole
        ).override(
            "training",
            initial_lr=lr,
            batch_size=batch_size,
            max_epochs=max_epochs,
            weight_decay=weight_decay,
            plateau_patience=patience,
            lr_factor=lr_factor,
            seed=seed,
            precision=precision,
        )
        epochs = dependencies.get_training_service(state.settings).run(
            manifest, out, config.training, config.pss, log_out=log
        )
        if epochs:
            best = min(epochs, key=lambda e: e.val_loss)
            typer.echo(f"{out}: {len(epochs)} epochs, best val_loss {best.val_loss:.5f} at epoch {best.epoch}")
        else:
            typer.echo(f"{out}: initial model, no training steps")


def score(
    ctx: typer.Context,
    core: Path | None = typer.Option(None, "--core", help="Core image to sample PSSs from"),
    model: Path | None = typer.Option(None, "--model", help="Trained model file"),
    preds: Path | None = typer.Option(None, "--preds", help="External predictions JSONL instead of a model"),
    sample_id: str | None = typer.Option(
        None, "--sample-id", help="Sample to score [default: core file stem]"
    ),
    n: int | None = typer.Option(None, "--n", help="PSSs per sample [default: 20]"),
    k: int | None = typer.Option(None, "--k", help="Most confident predictions kept [default: 5]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Base PSS seed [default: config seed, 0]"),
    confidence: ConfidenceRule | None = typer.Option(
        None, "--confidence", help="Confidence rule [default: top1]", case_sensitive=False
    ),
    report: Path | None = typer.Option(None, "--report", help="Report JSON path [default: stdout]"),
    provenance: bool = typer.Option(False, "--provenance", help="Include patch coordinates of the kept PSSs"),
    patch_size: int | None = typer.Option(None, "--patch-size", help=PATCH_SIZE_HELP),
    n_full: int | None = typer.Option(None, "--n-full", help=N_FULL_HELP),
    n_half: int | None = typer.Option(None, "--n-half", help=N_HALF_HELP),
    whole: bool | None = typer.Option(None, "--whole/--no-whole", help=WHOLE_HELP, show_default=False),
) -> None:
    """Score one core: N PSSs, keep the k most confident, take the highest score among them."""
    state = get_state(ctx)
    with command_errors("score"):
        config = pss_config(
            state.config.with_seed(seed), patch_size=patch_size, n_full=n_full, n_half=n_half, whole=whole
        ).override("inference", n=n, k=k, confidence_rule=confidence)
        result = dependencies.get_inference_service(state.settings).score(
            config.inference,
            pss_was_configured(config, patch_size, n_full, n_half, whole),
            config.seed,
            core_path=core,
            model_path=model,
            preds_path=preds,
            sample_id=sample_id,
            include_provenance=provenance,
        )
        if report is None:
            typer.echo(render_report(result), nl=False)
        else:
            write_report(report, result)
            typer.echo(f"{result.sample_id}: {result.final_score}", err=True)


def register(app: typer.Typer) -> None:
    app.command("train")(train)
    app.command("score")(score)
