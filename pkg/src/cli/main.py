"""
Command-line surface: one subcommand per stage plus simulate, occupancy and
the full pipeline. Stage subcommands read and write the same files the
pipeline persists, so any stage can be rerun on its own.
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from ..calculations.metrics import EvalReport, evaluate, report_from_counts
from ..data.config import PipelineConfig, load_config
from ..data.errors import StageError
from ..data.formats import (load_detections, load_ground_truth, load_homography, load_track_records,
                            load_tracklets, parse_detections, write_fused, write_json, write_jsonl,
                            write_ledger, write_tracklets)
from ..data.models import ObjectClass, Tracklet
from ..data.scenario import NoiseModel, ScenarioConfig, export, generate, load_truth_document
from .pipeline import (PipelineInputs, bags_stage, fuse_stage, handoff_stage, occupancy_stage,
                       ownership_record, records_of, run_pipeline, stitch_stage, track_stage)

__version__ = "1.0.0"

console = Console()
err_console = Console(stderr=True)
logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("rcll", "prcn", "mota", "motp", "ids", "mt", "ml", "idf1")


class StageGroup(click.Group):
    """click group mapping failures to exit codes: 1 for bad input, 2 for anything else."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        if not standalone_mode:
            return super().main(args, prog_name, complete_var, standalone_mode, **extra)
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            err_console.print("[red]Aborted[/red]")
            sys.exit(1)
        except click.ClickException as e:
            e.show()
            sys.exit(1)
        except StageError as e:
            err_console.print(f"[red]Error: {e}[/red]")
            sys.exit(1 if isinstance(e.cause, ValueError) else 2)
        except ValueError as e:
            err_console.print(f"[red]Error: {e}[/red]")
            sys.exit(1)
        except Exception as e:  # noqa: BLE001
            logger.debug("Internal error", exc_info=True)
            err_console.print(f"[red]Internal error: {type(e).__name__}: {e}[/red]")
            sys.exit(2)
        sys.exit(rv if isinstance(rv, int) else 0)


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(
        level=level, format="%(message)s", datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)], force=True,
    )


def _config(ctx: click.Context, seed: Optional[int] = None) -> PipelineConfig:
    cfg: PipelineConfig = ctx.obj["config"]
    if seed is not None and seed != cfg.seed:
        cfg = replace(cfg, seed=seed)
    return cfg


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _single_camera(tracklets: List[Tracklet], camera: Optional[str], path: str) -> str:
    cams = sorted({t.camera for t in tracklets})
    if camera:
        return camera
    if len(cams) != 1:
        raise click.UsageError(f"{path} holds cameras {cams}; pick one with --camera")
    return cams[0]


def _report_table(title: str, rows: Dict[str, EvalReport]) -> Table:
    table = Table(title=title)
    table.add_column("Set", style="cyan")
    for col in REPORT_COLUMNS:
        table.add_column(col.upper(), justify="right", style="magenta")
    for name, rep in rows.items():
        summary = rep.summary()
        table.add_row(name, *[
            str(int(summary[c])) if c == "ids" else f"{100 * summary[c]:.1f}" for c in REPORT_COLUMNS
        ])
    return table


@click.group(cls=StageGroup)
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Pipeline config JSON")
@click.option("--verbose", "-v", count=True, help="-v for INFO, -vv for DEBUG")
@click.pass_context
def cli(ctx, config_path, verbose):
    """Checkpoint tracking: rotation-fused detection, MHT tracking, camera handoff and bag ownership."""
    _setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_config(config_path)


@cli.command()
@click.option("--seed", type=int, help="Scenario seed (default: config seed)")
@click.option("--out", default="scenario", show_default=True, help="Output directory")
@click.option("--passengers", default=8, show_default=True)
@click.option("--bags", default=6, show_default=True)
@click.option("--reentries", default=4, show_default=True)
@click.option("--noise", type=click.Choice(["orientation", "dropout", "perfect"]), default="orientation",
              show_default=True, help="Mock detector behaviour")
@click.option("--dropout", "dropout_rate", default=0.1, show_default=True, help="Miss rate for --noise dropout")
@click.option("--jitter", default=1.0, show_default=True, help="Center jitter (px) for --noise dropout")
@click.option("--annotate-every", default=1, show_default=True)
@click.option("--angles", type=int, help="Rotation count (default: fusion.n)")
@click.pass_context
def simulate(ctx, seed, out, passengers, bags, reentries, noise, dropout_rate, jitter, annotate_every, angles):
    """Generate a synthetic two-camera checkpoint scene and its mock detections."""
    cfg = _config(ctx, seed)
    model = {
        "orientation": NoiseModel(),
        "dropout": NoiseModel.dropout(dropout_rate, jitter),
        "perfect": NoiseModel.perfect(),
    }[noise]
    scenario = ScenarioConfig.from_pipeline(
        cfg, n_passengers=passengers, n_bags=bags, n_reentries=reentries,
        noise=model, annotate_every=annotate_every,
    )
    truth = generate(scenario)
    written = export(truth, _out_dir(out), angles or cfg.fusion.n, cfg.fusion.eta_nms)

    table = Table(title=f"Scenario (seed {scenario.seed})")
    table.add_column("Kind", style="cyan")
    table.add_column("Files", style="green")
    for kind, paths in written.items():
        table.add_row(kind, "\n".join(Path(p).name for p in paths))
    console.print(table)
    console.print(f"\n[dim]{truth.n_frames} frames, {len(truth.reentries)} re-entry events[/dim]")


@cli.command()
@click.argument("detections", type=click.Path(exists=True, dir_okay=False))
@click.option("--camera", required=True, help="Camera id (selects the ROI)")
@click.option("--out", default=".", show_default=True, help="Output directory")
@click.pass_context
def fuse(ctx, detections, camera, out):
    """Fuse per-angle detections into one detection set per frame."""
    cfg = _config(ctx)
    frames = parse_detections(detections, cfg.camera(camera).roi_value, camera)
    fused = fuse_stage(frames, cfg)
    path = _out_dir(out) / f"fused_{camera}.jsonl"
    write_fused(path, fused)
    console.print(f"[green]Fused {len(frames)} frames into {len(fused)} detections -> {path}[/green]")


@cli.command()
@click.argument("detections", type=click.Path(exists=True, dir_okay=False))
@click.option("--camera", required=True, help="Camera id (selects the ROI)")
@click.option("--frame", type=int, help="Only this frame")
@click.option("--out", default=".", show_default=True, help="Output directory")
@click.pass_context
def occupancy(ctx, detections, camera, frame, out):
    """Export the pooled per-frame detection set with cluster scores (plot-ready JSONL)."""
    cfg = _config(ctx)
    frames = parse_detections(detections, cfg.camera(camera).roi_value, camera)
    records = occupancy_stage(frames, cfg, frame)
    name = f"occupancy_{camera}.jsonl" if frame is None else f"occupancy_{camera}_{frame}.jsonl"
    path = _out_dir(out) / name
    write_jsonl(path, records)
    retained = sum(1 for r in records if r["retained"])
    console.print(f"[green]{len(records)} pooled detections ({retained} in retained clusters) -> {path}[/green]")


@cli.command()
@click.argument("fused", type=click.Path(exists=True, dir_okay=False))
@click.option("--camera", required=True, help="Camera id")
@click.option("--out", default=".", show_default=True, help="Output directory")
@click.pass_context
def track(ctx, fused, camera, out):
    """Run the multiple-hypothesis tracker on fused detections."""
    cfg = _config(ctx)
    tracklets = track_stage(load_detections(fused, camera), cfg, camera)
    path = _out_dir(out) / f"tracklets_{camera}.jsonl"
    write_tracklets(path, tracklets)
    _tracklet_summary(f"Tracklets ({camera})", tracklets)
    console.print(f"[dim]-> {path}[/dim]")


@cli.command()
@click.argument("tracklets", type=click.Path(exists=True, dir_okay=False))
@click.option("--camera", help="Camera id (default: the only camera in the file)")
@click.option("--out", default=".", show_default=True, help="Output directory")
@click.pass_context
def stitch(ctx, tracklets, camera, out):
    """Join broken tracklets of one camera."""
    cfg = _config(ctx)
    loaded = load_tracklets(tracklets, camera)
    cam = _single_camera(loaded, camera, tracklets)
    joined = stitch_stage(loaded, cfg)
    path = _out_dir(out) / f"stitched_{cam}.jsonl"
    write_tracklets(path, joined)
    console.print(f"[green]{len(loaded)} tracklets -> {len(joined)} after stitching -> {path}[/green]")


@cli.command()
@click.argument("primary", type=click.Path(exists=True, dir_okay=False))
@click.argument("auxiliary", type=click.Path(exists=True, dir_okay=False))
@click.option("--homography", "homography_path", type=click.Path(exists=True, dir_okay=False),
              help="Auxiliary -> primary homography (default: the configured pair's file next to PRIMARY)")
@click.option("--camera", help="Primary camera id (default: first configured pair)")
@click.option("--out", default=".", show_default=True, help="Output directory")
@click.pass_context
def handoff(ctx, primary, auxiliary, homography_path, camera, out):
    """Carry identities across a primary/auxiliary camera pair."""
    cfg = _config(ctx)
    pairs = [p for p in cfg.handoff if camera is None or p.primary == camera]
    if not pairs:
        raise click.UsageError(f"No handoff pair configured for primary camera {camera!r}")
    pair = pairs[0]
    if homography_path is None:
        name = pair.homography or f"homography_{pair.auxiliary}_{pair.primary}.json"
        homography_path = Path(primary).parent / name
    per_camera = {
        pair.primary: load_tracklets(primary, pair.primary),
        pair.auxiliary: load_tracklets(auxiliary, pair.auxiliary),
    }
    result = handoff_stage(per_camera, cfg, {(pair.primary, pair.auxiliary): load_homography(homography_path)})
    out_dir = _out_dir(out)
    for cam, ts in result.items():
        write_tracklets(out_dir / f"handoff_{cam}.jsonl", ts)
    for cam, ts in result.items():
        _tracklet_summary(f"After handoff ({cam})", ts)


@cli.command()
@click.argument("tracklets", type=click.Path(exists=True, dir_okay=False))
@click.option("--camera", help="Camera id (default: the only camera in the file)")
@click.option("--out", default=".", show_default=True, help="Output directory")
@click.pass_context
def bags(ctx, tracklets, camera, out):
    """Link bags to their owners and check who is near each bag at the end."""
    cfg = _config(ctx)
    loaded = load_tracklets(tracklets, camera)
    cam = _single_camera(loaded, camera, tracklets)
    ledger, checks = bags_stage(loaded, cfg, cam)
    out_dir = _out_dir(out)
    write_ledger(out_dir / f"ledger_{cam}.jsonl", ledger)
    write_jsonl(out_dir / f"ownership_{cam}.jsonl", (ownership_record(c, cam) for c in checks))

    table = Table(title=f"Bag ownership ({cam})")
    table.add_column("Bag", style="cyan", justify="right")
    table.add_column("Owner", style="green", justify="right")
    table.add_column("Linked at", justify="right")
    table.add_column("Last seen", justify="right")
    table.add_column("Status", style="magenta")
    by_bag = {c.bag_label: c for c in checks}
    for entry in ledger.entries:
        check = by_bag.get(entry.bag_label)
        table.add_row(
            str(entry.bag_label),
            "-" if entry.person_label is None else str(entry.person_label),
            str(entry.frame_created),
            "-" if check is None else str(check.frame),
            "-" if check is None else check.status.value,
        )
    console.print(table)


def _parse_frames(ctx, param, value: Optional[str]) -> Optional[FrozenSet[int]]:
    """Comma-separated frames and inclusive START-STOP ranges."""
    if value is None:
        return None
    frames = set()
    try:
        for part in filter(None, (p.strip() for p in value.split(","))):
            start, _, stop = part.partition("-")
            lo, hi = int(start), int(stop or start)
            if lo < 0 or hi < lo:
                raise ValueError(part)
            frames.update(range(lo, hi + 1))
    except ValueError:
        raise click.BadParameter(f"expected frames like 0-99,120; got {value!r}") from None
    if not frames:
        raise click.BadParameter("no frames given")
    return frozenset(frames)


@cli.command(name="evaluate")
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False), help="Ground truth MOT CSV")
@click.option("--tracks", "tracks_path", type=click.Path(exists=True, dir_okay=False),
              help="Tracklet JSONL or MOT CSV to score")
@click.option("--camera", help="Only this camera")
@click.option("--from-counts", "counts", nargs=4, type=int, metavar="TP FP FN IDS",
              help="Summarise published counts instead of scoring files")
@click.option("--gt-total", type=float, help="Ground-truth total for --from-counts (default TP + FN)")
@click.option("--truth", "truth_path", type=click.Path(exists=True, dir_okay=False),
              help="truth.json giving the annotated frames")
@click.option("--frames", callback=_parse_frames, metavar="LIST",
              help="Annotated frames, e.g. 0-99,120,130-140 (default: frames present in --gt)")
@click.option("--out", help="Write the report JSON here")
@click.pass_context
def evaluate_cmd(ctx, gt_path, tracks_path, camera, counts, gt_total, truth_path, frames, out):
    """CLEAR-MOT and identity metrics against ground truth."""
    cfg = _config(ctx)
    if counts:
        tp, fp, fn, ids = counts
        reports = {"counts": report_from_counts(tp, fp, fn, ids, gt_total=gt_total)}
    else:
        if not gt_path or not tracks_path:
            raise click.UsageError("Give --gt and --tracks, or --from-counts")
        if truth_path and frames:
            raise click.UsageError("Give --truth or --frames, not both")
        if truth_path:
            frames = load_truth_document(truth_path)["annotated_frames"]
        gt = load_ground_truth(gt_path, frames)
        if camera:
            gt = gt.select(camera=camera)
        if tracks_path.endswith(".jsonl"):
            hyp = records_of(load_tracklets(tracks_path, camera))
        else:
            hyp = [r for r in load_track_records(tracks_path) if camera is None or r.camera == camera]
        reports = {
            cls.value: evaluate(gt.select(cls), [r for r in hyp if r.cls == cls], cfg.evaluation)
            for cls in ObjectClass
        }
    console.print(_report_table("Evaluation", reports))
    if out:
        write_json(Path(out), {name: rep.summary() for name, rep in reports.items()})


@cli.command()
@click.option("--input", "input_dir", default="scenario", show_default=True,
              type=click.Path(exists=True, file_okay=False), help="Directory written by simulate")
@click.option("--seed", type=int, help="Override the config seed")
@click.option("--out", default="run", show_default=True, help="Output directory")
@click.pass_context
def pipeline(ctx, input_dir, seed, out):
    """Run fuse -> track -> stitch -> handoff -> bags -> evaluate end to end."""
    cfg = _config(ctx, seed)
    inputs = PipelineInputs.from_directory(input_dir, cfg)
    result = run_pipeline(cfg, inputs, out)

    for cam, by_cls in result.reports.items():
        rows = {f"{cls} ({stage})": rep for cls, by_stage in by_cls.items() for stage, rep in by_stage.items()}
        console.print(_report_table(f"Camera {cam}", rows))
    for key, value in sorted(result.extras.items()):
        console.print(f"  {key}: [magenta]{100 * value:.1f}%[/magenta]")
    console.print(f"\n[green]Run written to {out} (config {result.manifest.config_hash[:12]})[/green]")


def _tracklet_summary(title: str, tracklets: List[Tracklet]) -> None:
    table = Table(title=title)
    table.add_column("Class", style="cyan")
    table.add_column("Tracklets", justify="right", style="magenta")
    table.add_column("Labels", justify="right")
    table.add_column("Boxes", justify="right")
    for cls in ObjectClass:
        ts = [t for t in tracklets if t.cls == cls]
        table.add_row(cls.value, str(len(ts)), str(len({t.label for t in ts})),
                      str(sum(len(t.entries) for t in ts)))
    console.print(table)


if __name__ == "__main__":
    cli()
