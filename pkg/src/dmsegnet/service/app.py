"""FastAPI application exposing the package over HTTP.

Volumes and checkpoints are referenced by server-local path: this is a
single-machine tool whose CLI talks to a localhost server, not a
multi-tenant upload service. Anything that smells like a bad request
(missing file, malformed config, wrong dtype) maps to 400 with the
underlying message; training runs as background jobs polled by id.
"""

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..bench import bench_scan, render_bench_table
from ..config import load_config, parse_text
from ..data import PhantomSpec, read_manifest, load_case, split_dataset, \
    write_phantom_dataset
from ..errors import DmSegNetError
from ..metrics import MetricReport, evaluate, write_report_csv
from ..nifti import read_nifti, write_nifti
from ..selftest import render_selftest, run_selftest
from ..training import load_model, model_dtype, segment_volume
from .jobs import JobRegistry
from . import schemas as s


def _job_info(job) -> s.JobInfo:
    return s.JobInfo(**job.snapshot())


def _normalize_image(image: np.ndarray, scheme: str) -> np.ndarray:
    from ..data import intensity_normalize
    if scheme == "none":
        return image.astype(np.float32)
    return intensity_normalize(image, scheme)


def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise HTTPException(400, f"{what} not found: {path}")


def create_app(registry: JobRegistry | None = None) -> FastAPI:
    app = FastAPI(title="dmsegnet", version=__version__)
    jobs = registry if registry is not None else JobRegistry()

    @app.exception_handler(DmSegNetError)
    async def _domain_error(request, exc: DmSegNetError):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=400,
                            content={"detail": f"{type(exc).__name__}: "
                                               f"{exc}"})

    @app.get("/health", response_model=s.HealthResponse)
    def health():
        return s.HealthResponse(status="ok", version=__version__)

    @app.post("/phantom", response_model=s.PhantomResponse)
    def phantom(req: s.PhantomRequest):
        spec = PhantomSpec(size=req.size, num_classes=req.classes,
                           noise_sigma=req.noise_sigma, seed=req.seed)
        manifest = write_phantom_dataset(req.out_dir, spec, req.count)
        cases = [r.id for r in read_manifest(manifest)]
        return s.PhantomResponse(manifest=str(manifest), cases=cases)

    @app.post("/train", response_model=s.JobInfo)
    def train(req: s.TrainRequest):
        if (req.config_path is None) == (req.config_text is None):
            raise HTTPException(400, "provide exactly one of config_path "
                                     "or config_text")
        if req.config_path:
            _require_file(req.config_path, "config file")
        cfg = (load_config(req.config_path) if req.config_path
               else parse_text(req.config_text))
        if req.resume_from:
            _require_file(req.resume_from, "resume checkpoint")
        job = jobs.submit(cfg, resume_from=req.resume_from,
                          until_step=req.until_step)
        return _job_info(job)

    @app.get("/jobs", response_model=list[s.JobInfo])
    def list_jobs():
        return [_job_info(j) for j in jobs.all_jobs()]

    @app.get("/jobs/{job_id}", response_model=s.JobInfo)
    def job_status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"no such job: {job_id}")
        return _job_info(job)

    @app.post("/eval", response_model=s.EvalResponse)
    def eval_cases(req: s.EvalRequest):
        _require_file(req.ckpt, "checkpoint")
        _require_file(req.manifest, "manifest")
        net, cfg = load_model(req.ckpt)
        dtype = model_dtype(cfg)
        records = read_manifest(req.manifest)
        if req.split and req.split != "all":
            fractions = tuple(v / 100 for v in cfg.data.split)
            tr, va, te = split_dataset(records, fractions,
                                       cfg.data.split_seed)
            records = {"train": tr, "val": va, "test": te}[req.split]
            if not records:
                raise HTTPException(400, f"split {req.split!r} is empty "
                                         "for this manifest")
        root = Path(req.manifest).parent
        reports: list[tuple[str, MetricReport]] = []
        for rec in records:
            case = load_case(rec, root)
            image = _normalize_image(case.image, cfg.data.normalize)
            pred = segment_volume(net, image, dtype)
            reports.append((case.id,
                            evaluate(pred, case.label,
                                     cfg.model.num_classes, case.spacing)))
        csv_path = None
        if req.out:
            write_report_csv(req.out, reports)
            csv_path = req.out
        dices = [r.mean_dice for _, r in reports]
        hds = [r.mean_hd95 for _, r in reports if r.mean_hd95 is not None]
        return s.EvalResponse(
            cases=[s.CaseMetrics(
                case=cid,
                per_class={c: {"dice": m.dice, "hd95": m.hd95}
                           for c, m in rep.per_class.items()},
                mean_dice=rep.mean_dice, mean_hd95=rep.mean_hd95)
                for cid, rep in reports],
            mean_dice=float(np.mean(dices)),
            mean_hd95=float(np.mean(hds)) if hds else None,
            csv_path=csv_path)

    @app.post("/infer", response_model=s.InferResponse)
    def infer(req: s.InferRequest):
        _require_file(req.ckpt, "checkpoint")
        _require_file(req.input_path, "input volume")
        net, cfg = load_model(req.ckpt)
        volume, spacing = read_nifti(req.input_path)
        image = volume[None] if volume.ndim == 3 else volume
        if image.shape[0] != cfg.model.in_channels:
            raise HTTPException(
                400, f"model expects {cfg.model.in_channels} input "
                     f"channel(s), volume has {image.shape[0]}")
        image = _normalize_image(image, cfg.data.normalize)
        labels = segment_volume(net, image, model_dtype(cfg))
        write_nifti(req.output_path, labels.astype(np.int16), spacing)
        present = sorted(int(c) for c in np.unique(labels))
        return s.InferResponse(output_path=req.output_path,
                               shape=list(labels.shape),
                               classes_present=present)

    @app.post("/bench/scan", response_model=s.BenchScanResponse)
    def bench(req: s.BenchScanRequest):
        result = bench_scan(req.dims, iters=req.iters,
                            channels=req.channels,
                            state_dim=req.state_dim)
        return s.BenchScanResponse(dims=result.dims, length=result.length,
                                   order_rows=result.order_rows,
                                   scan_rows=result.scan_rows,
                                   table=render_bench_table(result))

    @app.post("/selftest", response_model=s.SelftestResponse)
    def selftest():
        results = run_selftest()
        return s.SelftestResponse(
            passed=all(r["passed"] for r in results),
            checks=[s.SelftestCheck(**r) for r in results],
            summary=render_selftest(results))

    return app
