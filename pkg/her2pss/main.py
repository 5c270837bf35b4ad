from __future__ import annotations

import logging
from pathlib import Path

import typer

from her2pss.cli import analysis, imaging, model
from her2pss.cli.common import CliGroup, CliState
from her2pss.core.errors import Her2PssError
from her2pss.core.logging import configure_logging
from her2pss.core.settings import get_settings
from her2pss.models.pipeline import PipelineConfig

logger = logging.getLogger(__name__)


def create_app() -> typer.Typer:
    app = typer.Typer(
        name="her2pss",
        help="HER2 scoring of tissue cores with Pyramid Sampling Sets.",
        no_args_is_help=True,
        add_completion=False,
        pretty_exceptions_enable=False,
        cls=CliGroup,
    )

    @app.callback()
    def main(
        ctx: typer.Context,
        config: Path | None = typer.Option(
            None, "--config", help="Pipeline config JSON; flags override it [default: $PSS_CONFIG]"
        ),
        threads: int | None = typer.Option(
            None, "--threads", min=1, help="Worker thread cap; results do not depend on it [default: 1]"
        ),
        log_level: str | None = typer.Option(None, "--log-level", help="Logging level [default: INFO]"),
    ) -> None:
        updates: dict[str, object] = {}
        if threads is not None:
            updates["threads"] = threads
        if log_level is not None:
            updates["log_level"] = log_level
        settings = get_settings().model_copy(update=updates)
        configure_logging(settings)

        config_path = config or settings.config_path
        try:
            pipeline = PipelineConfig.from_file(config_path) if config_path else PipelineConfig()
        except Her2PssError as e:
            logger.exception(f"Failed to load pipeline config {config_path}")
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(code=e.exit_code) from e

        logger.debug(f"{settings.app_name}: environment={settings.environment} threads={settings.threads}")
        ctx.obj = CliState(settings=settings, config=pipeline)

    imaging.register(app)
    model.register(app)
    analysis.register(app)
    return app


app = create_app()
