from __future__ import annotations

import logging
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any

import click
import typer
from typer.core import TyperGroup

from her2pss.core.errors import EXIT_CONFIG, EXIT_UNEXPECTED, Her2PssError
from her2pss.core.settings import Settings
from her2pss.models.pipeline import PipelineConfig
from her2pss.models.pss import PssConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CliState:
    settings: Settings
    config: PipelineConfig


def get_state(ctx: typer.Context) -> CliState:
    state = ctx.find_object(CliState)
    if state is None:
        raise RuntimeError("CLI state missing; commands must run under the main app")
    return state


_NO_ARGS_IS_HELP = getattr(click.exceptions, "NoArgsIsHelpError", ())


def _mark_config_error(e: click.UsageError) -> None:
    if not isinstance(e, _NO_ARGS_IS_HELP):
        e.exit_code = EXIT_CONFIG


class CliGroup(TyperGroup):
    """Usage errors from argument parsing exit 3 like any other config error."""

    def make_context(
        self, info_name: str | None, args: list[str], parent: click.Context | None = None, **extra: Any
    ) -> click.Context:
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            _mark_config_error(e)
            raise

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            _mark_config_error(e)
            raise


@contextmanager
def command_errors(command: str) -> Iterator[None]:
    """Map pipeline errors to exit codes: 2 I/O, 3 config/parse, 4 numerical, 1 anything else."""
    try:
        yield
    except (typer.Exit, typer.Abort):
        raise
    except Her2PssError as e:
        logger.exception(f"{command} failed")
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=e.exit_code) from e
    except Exception as e:
        logger.exception(f"{command} failed unexpectedly")
        typer.echo(f"unexpected error: {e}", err=True)
        raise typer.Exit(code=EXIT_UNEXPECTED) from e


def pss_config(
    config: PipelineConfig,
    *,
    patch_size: int | None,
    n_full: int | None,
    n_half: int | None,
    whole: bool | None,
) -> PipelineConfig:
    return config.override(
        "pss", patch_size=patch_size, n_full=n_full, n_half=n_half, include_whole=whole
    )


def pss_was_configured(config: PipelineConfig, *flags: object) -> PssConfig | None:
    """The PSS config if a config file or a flag set it, else None."""
    if "pss" in config.model_fields_set or any(f is not None for f in flags):
        return config.pss
    return None


PATCH_SIZE_HELP = "Patch side in pixels [default: 512]"
N_FULL_HELP = "Full-resolution patches per PSS [default: 40]"
N_HALF_HELP = "Half-resolution patches per PSS [default: 10]"
WHOLE_HELP = "Append the whole core resized to one patch [default: on]"
