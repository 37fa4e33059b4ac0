"""Command line entry point: ``python -m app <command>``."""

import functools
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from app.core.config import load_model, settings
from app.core.errors import DepthPipelineError
from app.models.depth import Ablation
from app.schemas.pipeline import PipelineConfig, apply_ablation
from app.schemas.scene import SceneConfig

logger = logging.getLogger("app.cli")


def handle_errors(command):
    """Map pipeline errors onto exit codes: 2 for configuration, 3 for divergence, 1 otherwise."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except DepthPipelineError as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def load_config(path: Path, seed: Optional[int], ablation: Optional[str]) -> PipelineConfig:
    overrides = {"seed": seed} if seed is not None else None
    config = load_model(PipelineConfig, path, overrides)
    if ablation:
        config = apply_ablation(config, ablation)
        logger.info(f"Applied ablation {ablation}")
    return config


config_option = click.option(
    "--config", "config_path", type=click.Path(path_type=Path), required=True, help="Pipeline config JSON"
)
seed_option = click.option("--seed", type=click.IntRange(min=0), default=None, help="Overrides the config seed")
out_option = click.option("--out", type=click.Path(path_type=Path), default=None, help="Output directory")
ablation_option = click.option(
    "--ablation", type=click.Choice([a.value for a in Ablation]), default=None, help="Named ablation preset"
)


@click.group()
@click.option("--log-level", default=None, help="Overrides M2D_LOG_LEVEL")
def cli(log_level: Optional[str]):
    """Two-frame surround-camera metric depth estimation."""
    logging.basicConfig(
        level=(log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="Scene config JSON")
@seed_option
@out_option
@handle_errors
def synth(config_path: Optional[Path], seed: Optional[int], out: Optional[Path]):
    """Render a synthetic two-frame dataset."""
    from app.services.pipeline import run_synth

    scene = load_model(SceneConfig, config_path) if config_path else SceneConfig()
    out = out or Path(settings.output_dir) / "dataset"
    paths = run_synth(scene, out, seed)
    click.echo(str(paths.root))


@cli.command()
@config_option
@seed_option
@out_option
@ablation_option
@handle_errors
def estimate(config_path: Path, seed: Optional[int], out: Optional[Path], ablation: Optional[str]):
    """Estimate depth for every camera of frame t."""
    from app.services.pipeline import load_frames, output_dir_for, run_estimate, write_estimate

    config = load_config(config_path, seed, ablation)
    frames = load_frames(config)
    result = run_estimate(config, frames)
    out_dir = output_dir_for(config, out)
    write_estimate(result, config, frames, out_dir)
    if result.report.evaluation is not None:
        click.echo(f"Abs.Rel {result.report.evaluation.mean.abs_rel:.4f}")
    click.echo(str(out_dir))


@cli.command()
@config_option
@seed_option
@out_option
@ablation_option
@handle_errors
def refine(config_path: Path, seed: Optional[int], out: Optional[Path], ablation: Optional[str]):
    """Refine depth (and optionally pose) against the self-supervised losses."""
    from app.services.pipeline import output_dir_for
    from app.services.refine import run_refine, write_refine

    config = load_config(config_path, seed, ablation)
    outcome = run_refine(config)
    out_dir = output_dir_for(config, out)
    write_refine(outcome, config, out_dir)
    click.echo(f"best loss {outcome.report.best_loss:.6g}")
    click.echo(str(out_dir))


@cli.command(name="eval")
@click.option("--pred", type=click.Path(path_type=Path, exists=True), required=True, help="Predicted depth directory")
@click.option("--gt", type=click.Path(path_type=Path, exists=True), required=True, help="Ground-truth depth directory")
@click.option("--d-min", type=float, default=0.0, show_default=True)
@click.option("--d-max", type=float, default=200.0, show_default=True)
@click.option("--no-error-maps", is_flag=True, default=False)
@out_option
@handle_errors
def eval_command(pred: Path, gt: Path, d_min: float, d_max: float, no_error_maps: bool, out: Optional[Path]):
    """Evaluate predicted depth maps against ground truth."""
    from app.services.pipeline import run_eval

    report = run_eval(pred, gt, d_min, d_max, out, error_maps=not no_error_maps)
    click.echo(report.mean.model_dump_json(by_alias=True))


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int):
    """Run the HTTP job service."""
    import uvicorn

    uvicorn.run("app.main:app", host=host, port=port, log_level=settings.log_level.lower())


def main():
    cli()


if __name__ == "__main__":
    main()
