"""Background training jobs for the service.

One worker thread per job; the registry is the single shared structure
and every mutation happens under its lock. Training itself is CPU-bound
single-threaded work, so jobs run one at a time through a module-level
semaphore rather than piling onto the one core.
"""

import threading
import time
import traceback
import uuid
from dataclasses import dataclass, field
from typing import Optional

from ..config import RunConfig
from ..training import Trainer

_RUN_SLOT = threading.Semaphore(1)


@dataclass
class Job:
    job_id: str
    cfg: RunConfig
    resume_from: Optional[str] = None
    until_step: Optional[int] = None
    state: str = "queued"
    step: int = 0
    total_steps: int = 0
    loss: Optional[float] = None
    val_dice: Optional[float] = None
    train_dice: Optional[float] = None
    stopped_early: bool = False
    out_dir: Optional[str] = None
    last_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    error: Optional[str] = None
    error_trace: Optional[str] = None
    started: float = 0.0
    seconds: float = 0.0
    _thread: Optional[threading.Thread] = field(default=None, repr=False)

    def snapshot(self) -> dict:
        return {
            "job_id": self.job_id, "state": self.state, "step": self.step,
            "total_steps": self.total_steps, "loss": self.loss,
            "val_dice": self.val_dice, "train_dice": self.train_dice,
            "stopped_early": self.stopped_early, "out_dir": self.out_dir,
            "last_checkpoint": self.last_checkpoint,
            "best_checkpoint": self.best_checkpoint, "error": self.error,
            "seconds": round(
                self.seconds if self.state in ("done", "failed")
                else (time.time() - self.started if self.started else 0.0),
                3),
        }


class JobRegistry:
    """Thread-safe id -> Job map that launches and tracks workers."""

    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, cfg: RunConfig, resume_from: Optional[str] = None,
               until_step: Optional[int] = None) -> Job:
        job = Job(job_id=uuid.uuid4().hex[:12], cfg=cfg,
                  resume_from=resume_from, until_step=until_step,
                  total_steps=cfg.total_steps, out_dir=cfg.train.out_dir)
        with self._lock:
            self._jobs[job.job_id] = job
        job._thread = threading.Thread(target=self._run, args=(job,),
                                       daemon=True)
        job._thread.start()
        return job

    def get(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self._jobs.get(job_id)

    def all_jobs(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())

    def wait(self, job_id: str, timeout: Optional[float] = None) -> bool:
        job = self.get(job_id)
        if job is None or job._thread is None:
            return False
        job._thread.join(timeout)
        return not job._thread.is_alive()

    def _run(self, job: Job) -> None:
        with _RUN_SLOT:
            job.started = time.time()
            job.state = "running"
            try:
                if job.resume_from:
                    trainer = Trainer.from_checkpoint(job.resume_from,
                                                      job.cfg)
                else:
                    trainer = Trainer(job.cfg)
                job.step = trainer.step
                result = self._drive(job, trainer)
                job.loss = result.final_loss
                job.val_dice = result.final_val_dice
                job.train_dice = result.final_train_dice
                job.stopped_early = result.stopped_early
                job.last_checkpoint = result.last_checkpoint
                job.best_checkpoint = result.best_checkpoint
                job.state = "done"
            except Exception as exc:
                job.error = f"{type(exc).__name__}: {exc}"
                job.error_trace = traceback.format_exc()
                job.state = "failed"
            finally:
                job.seconds = time.time() - job.started

    def _drive(self, job: Job, trainer: Trainer):
        result = trainer.run(until_step=job.until_step,
                             progress=lambda step, loss: (
                                 setattr(job, "step", step),
                                 setattr(job, "loss", loss)))
        job.step = trainer.step
        return result
