"""Command line front end.

Every subcommand is a thin client over the HTTP service: with
--server (or DMSEGNET_SERVER) requests go to a running instance,
otherwise an app is spun up inside the process so the commands work
standalone. `serve` starts the real server.
"""

import sys
from typing import Optional

import click

from .client import ServiceClient, ServiceError


@click.group()
@click.option("--server", envvar="DMSEGNET_SERVER", default=None,
              metavar="URL",
              help="Base URL of a running service; omit to run in-process.")
@click.pass_context
def main(ctx, server: Optional[str]):
    """Dual-branch state-space segmentation toolkit."""
    ctx.obj = server


def _client(ctx) -> ServiceClient:
    return ServiceClient(base_url=ctx.obj)


def _fail(exc: ServiceError):
    click.echo(f"error: {exc.detail}", err=True)
    sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port, log_level="info")


@main.command()
@click.pass_context
def selftest(ctx):
    """Run the built-in verification checks and report pass/fail."""
    with _client(ctx) as client:
        try:
            result = client.selftest()
        except ServiceError as exc:
            _fail(exc)
    for check in result["checks"]:
        mark = "PASS" if check["passed"] else "FAIL"
        click.echo(f"[{mark}] {check['name']:<28} {check['detail']}"
                   f"  ({check['seconds']:.2f}s)")
    good = sum(1 for c in result["checks"] if c["passed"])
    click.echo(f"{good}/{len(result['checks'])} checks passed")
    if not result["passed"]:
        sys.exit(1)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Directory for volumes and the manifest.")
@click.option("--count", default=8, show_default=True)
@click.option("--size", default=32, show_default=True)
@click.option("--classes", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--noise-sigma", default=0.1, show_default=True)
@click.pass_context
def phantom(ctx, out_dir: str, count: int, size: int, classes: int,
            seed: int, noise_sigma: float):
    """Generate a synthetic labelled dataset."""
    with _client(ctx) as client:
        try:
            result = client.phantom(out_dir, count=count, size=size,
                                    classes=classes, seed=seed,
                                    noise_sigma=noise_sigma)
        except ServiceError as exc:
            _fail(exc)
    click.echo(f"wrote {len(result['cases'])} cases, manifest at "
               f"{result['manifest']}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--resume", "resume_from", default=None, type=click.Path(),
              help="Checkpoint to continue from.")
@click.option("--until-step", default=None, type=int,
              help="Stop after this global step instead of the full run.")
@click.option("--wait/--no-wait", default=True, show_default=True,
              help="Block and stream progress until the job finishes.")
@click.pass_context
def train(ctx, config_path: str, resume_from: Optional[str],
          until_step: Optional[int], wait: bool):
    """Train a model from a config file."""
    client = _client(ctx)
    try:
        info = client.train(config_path=config_path, resume_from=resume_from,
                            until_step=until_step)
        job_id = info["job_id"]
        click.echo(f"job {job_id} submitted")
        if not wait:
            if ctx.obj is None:
                click.echo("warning: in-process job discarded on exit; "
                           "use --server or --wait", err=True)
                info = client.wait_for_job(job_id)
            client.close()
            return
        def report(snapshot):
            step = snapshot["step"]
            total = snapshot["total_steps"]
            loss = snapshot["loss"]
            if loss is not None:
                click.echo(f"step {step}/{total}  loss {loss:.4f}")
        info = client.wait_for_job(job_id, on_progress=report)
    except ServiceError as exc:
        client.close()
        _fail(exc)
    client.close()
    if info["state"] == "failed":
        click.echo(f"training failed: {info['error']}", err=True)
        sys.exit(1)
    if info["val_dice"] is not None:
        click.echo(f"final val dice {info['val_dice']:.4f}")
    if info["stopped_early"]:
        click.echo("stopped early: dice target reached")
    click.echo(f"checkpoints in {info['out_dir']}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(),
              help="Write per-case metrics as CSV here.")
@click.option("--split", default=None,
              type=click.Choice(["train", "val", "test", "all"]),
              help="Restrict to one split of the manifest.")
@click.pass_context
def eval_cmd(ctx, ckpt: str, manifest: str, out: Optional[str],
             split: Optional[str]):
    """Segment every manifest case and report dice / hd95."""
    with _client(ctx) as client:
        try:
            result = client.eval(ckpt, manifest, out=out, split=split)
        except ServiceError as exc:
            _fail(exc)
    for case in result["cases"]:
        hd = "undefined" if case["mean_hd95"] is None \
            else f"{case['mean_hd95']:.3f}"
        click.echo(f"{case['case']:<16} dice {case['mean_dice']:.4f}"
                   f"  hd95 {hd}")
    click.echo(f"mean dice {result['mean_dice']:.4f} over "
               f"{len(result['cases'])} cases")
    if result["mean_hd95"] is not None:
        click.echo(f"mean hd95 {result['mean_hd95']:.3f}")
    if result["csv_path"]:
        click.echo(f"report written to {result['csv_path']}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--in", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", "output_path", required=True, type=click.Path())
@click.pass_context
def infer(ctx, ckpt: str, input_path: str, output_path: str):
    """Segment one volume and write the label mask."""
    with _client(ctx) as client:
        try:
            result = client.infer(ckpt, input_path, output_path)
        except ServiceError as exc:
            _fail(exc)
    classes = ",".join(str(c) for c in result["classes_present"])
    click.echo(f"wrote {result['output_path']} "
               f"(classes present: {classes})")


@main.group()
def bench():
    """Micro benchmarks."""


@bench.command("scan")
@click.option("--dims", required=True, metavar="D,H,W",
              help="Volume dims, comma separated.")
@click.option("--iters", default=5, show_default=True)
@click.option("--channels", default=8, show_default=True)
@click.option("--state-dim", default=16, show_default=True)
@click.pass_context
def bench_scan(ctx, dims: str, iters: int, channels: int, state_dim: int):
    """Time the traversal reorderings and the recurrence."""
    parts = dims.split(",")
    if len(parts) != 3:
        click.echo("error: --dims needs three comma separated values",
                   err=True)
        sys.exit(1)
    try:
        dims_t = tuple(int(p) for p in parts)
    except ValueError:
        click.echo("error: --dims values must be integers", err=True)
        sys.exit(1)
    with _client(ctx) as client:
        try:
            result = client.bench_scan(dims_t, iters=iters,
                                       channels=channels,
                                       state_dim=state_dim)
        except ServiceError as exc:
            _fail(exc)
    click.echo(result["table"])


if __name__ == "__main__":
    main()
