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
)
from her2pss.services.dataset_service import REFERENCE_SPLIT, parse_ratios

logger = logging.getLogger(__name__)

_REFERENCE_RATIOS = ":".join(str(r) for r in REFERENCE_SPLIT)


def extract_cores(
    ctx: typer.Context,
    wsi: Path = typer.Option(..., "--wsi", help="Slide image (PNG or TIFF)"),
    out: Path = typer.Option(..., "--out", help="Output directory for core crops"),
    r_min: int | None = typer.Option(None, "--r-min", help="Smallest core radius in pixels [default: 350]"),
    r_max: int | None = typer.Option(None, "--r-max", help="Largest core radius in pixels [default: 550]"),
    downsample: int | None = typer.Option(
        None, "--downsample", help="Working downsample factor, a power of two [default: 8]"
    ),
    edge_threshold: float | None = typer.Option(
        None, "--edge-threshold", help="Gradient magnitude threshold [default: 20]"
    ),
    margin: float = typer.Option(0.05, "--margin", min=0.0, help="Crop margin as a fraction of the radius"),
) -> None:
    """Detect circular tissue cores on a slide and write one PNG per core."""
    state = get_state(ctx)
    with command_errors("extract-cores"):
        config = state.config.override(
            "hough",
            r_min=r_min,
            r_max=r_max,
            working_downsample=downsample,
            edge_threshold=edge_threshold,
        )
        written = dependencies.get_core_extraction_service(state.settings).extract(
            wsi, out, config.hough, margin
        )
        typer.echo(f"{len(written)} cores written to {out}")


def sample_pss(
    ctx: typer.Context,
    core: Path = typer.Option(..., "--core", help="Core image"),
    out: Path = typer.Option(..., "--out", help="Output directory for patches and pss.json"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="PSS seed [default: config seed, 0]"),
    patch_size: int | None = typer.Option(None, "--patch-size", help=PATCH_SIZE_HELP),
    n_full: int | None = typer.Option(None, "--n-full", help=N_FULL_HELP),
    n_half: int | None = typer.Option(None, "--n-half", help=N_HALF_HELP),
    whole: bool | None = typer.Option(None, "--whole/--no-whole", help=WHOLE_HELP, show_default=False),
    augment: bool = typer.Option(False, "--augment", help="Apply a seeded dihedral transform first"),
) -> None:
    """Sample one Pyramid Sampling Set from a core and export its patches."""
    state = get_state(ctx)
    with command_errors("sample-pss"):
        config = pss_config(
            state.config.with_seed(seed), patch_size=patch_size, n_full=n_full, n_half=n_half, whole=whole
        )
        manifest = dependencies.get_pss_service(state.settings).sample_to_dir(
            core, out, config.pss, config.seed, augment=augment
        )
        typer.echo(str(manifest))


def synth(
    ctx: typer.Context,
    out: Path = typer.Option(..., "--out", help="Output directory"),
    classes: int = typer.Option(4, "--classes", min=1, max=4, help="Number of score classes to render"),
    per_class: int = typer.Option(50, "--per-class", min=1, help="Cores per class"),
    diameter: int = typer.Option(512, "--diameter", min=64, help="Core diameter in pixels"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Generator seed [default: config seed, 0]"),
    split: str = typer.Option(_REFERENCE_RATIOS, "--split", help="train:val:test proportions"),
) -> None:
    """Render labeled synthetic cores and a split manifest."""
    state = get_state(ctx)
    with command_errors("synth"):
        config = state.config.with_seed(seed)
        manifest = dependencies.get_synthetic_service(state.settings).write_dataset(
            out,
            classes=classes,
            per_class=per_class,
            diameter=diameter,
            seed=config.seed,
            ratios=parse_ratios(split),
        )
        typer.echo(str(manifest))


def synth_wsi(
    ctx: typer.Context,
    out: Path = typer.Option(..., "--out", help="Slide path; .tif/.tiff writes TIFF, anything else PNG"),
    n_cores: int = typer.Option(12, "--n-cores", min=1, help="Number of cores on the slide"),
    radius: int = typer.Option(400, "--radius", min=8, help="Core radius in pixels"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Layout seed [default: config seed, 0]"),
) -> None:
    """Render a synthetic tissue microarray slide plus its ground truth."""
    state = get_state(ctx)
    with command_errors("synth-wsi"):
        config = state.config.with_seed(seed)
        slide, truth = dependencies.get_synthetic_service(state.settings).write_wsi(
            out, n_cores=n_cores, radius=radius, seed=config.seed
        )
        typer.echo(f"{slide} ({truth})")


def register(app: typer.Typer) -> None:
    app.command("extract-cores")(extract_cores)
    app.command("sample-pss")(sample_pss)
    app.command("synth")(synth)
    app.command("synth-wsi")(synth_wsi)
