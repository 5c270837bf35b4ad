from __future__ import annotations

import logging
from pathlib import Path

import typer

from her2pss import dependencies
from her2pss.cli.common import command_errors, get_state
from her2pss.core.errors import InputOutputError
from her2pss.models.classifier import ConfidenceRule
from her2pss.models.montecarlo import DESK_TRIALS, REFERENCE_N_GRID
from her2pss.services.montecarlo_service import load_labels, parse_grid

logger = logging.getLogger(__name__)


def montecarlo(
    ctx: typer.Context,
    preds: Path = typer.Option(..., "--preds", help="Per-PSS predictions JSONL"),
    labels: Path = typer.Option(..., "--labels", help="CSV with header sample_id,score"),
    out: Path = typer.Option(..., "--out", help="Sweep CSV; confusion matrices go to the same stem .json"),
    n_grid: str = typer.Option("1:200", "--n-grid", help="N values: 'a', 'a:b', 'a:b:step', comma lists"),
    k_grid: str = typer.Option("5", "--k-grid", help="k values in the same syntax, or 'paper' (alias 'reference') for 1..20,30,50,100"),
    trials: int = typer.Option(DESK_TRIALS, "--trials", min=1, help="Trials per (N, k) cell"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Sweep seed [default: config seed, 0]"),
    confidence: ConfidenceRule | None = typer.Option(
        None, "--confidence", help="Confidence rule [default: top1]", case_sensitive=False
    ),
    with_replacement: bool = typer.Option(
        False, "--with-replacement", help="Draw PSS indices with replacement"
    ),
    accuracies: bool = typer.Option(False, "--accuracies", help="Keep every trial accuracy in the JSON output"),
) -> None:
    """Monte Carlo accuracy envelope over a grid of (N, k)."""
    state = get_state(ctx)
    with command_errors("montecarlo"):
        config = state.config.with_seed(seed).override("inference", confidence_rule=confidence)
        stats = dependencies.get_montecarlo_service(state.settings).run(
            preds,
            labels,
            out,
            n_grid=parse_grid(n_grid, reference=REFERENCE_N_GRID),
            k_grid=parse_grid(k_grid),
            trials=trials,
            seed=config.seed,
            with_replacement=with_replacement,
            rule=config.inference.confidence_rule,
            include_accuracies=accuracies,
        )
        typer.echo(f"{len(stats)} cells written to {out}")


def consensus(
    ctx: typer.Context,
    votes: Path = typer.Option(..., "--votes", help="Votes CSV with header core_id,pathologist_id,score; ADJ marks the adjudicator"),
    out: Path = typer.Option(..., "--out", help="Resolved labels CSV"),
) -> None:
    """Resolve pathologist votes into ground-truth labels."""
    state = get_state(ctx)
    with command_errors("consensus"):
        summary = dependencies.get_consensus_service(state.settings).run(votes, out)
        typer.echo(" ".join(f"{key}={value}" for key, value in summary.as_dict().items()))


def evaluate(
    ctx: typer.Context,
    reports: Path = typer.Option(..., "--reports", help="Directory of score report JSON files"),
    labels: Path = typer.Option(..., "--labels", help="CSV with header sample_id,score"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
) -> None:
    """Confusion matrix, accuracy, adjacent-pair accuracies and KCS histograms."""
    state = get_state(ctx)
    with command_errors("evaluate"):
        if not reports.is_dir():
            raise InputOutputError(f"Reports directory not found: {reports}")
        report_paths = sorted(reports.glob("*.json"))
        if not report_paths:
            raise InputOutputError(f"No report JSON files in {reports}")
        evaluation = dependencies.get_evaluation_service(state.settings).run(
            report_paths, load_labels(labels), out
        )
        typer.echo(f"{evaluation.samples} samples, accuracy {evaluation.accuracy_text}")


def register(app: typer.Typer) -> None:
    app.command("montecarlo")(montecarlo)
    app.command("consensus")(consensus)
    app.command("evaluate")(evaluate)
