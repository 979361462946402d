"""Request and response models for the HTTP API.

The service runs next to the data on the same machine, so requests
reference server-local paths instead of shipping volumes over the wire;
every handler validates its inputs through these models.
"""

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class PhantomRequest(BaseModel):
    out_dir: str
    count: int = Field(default=8, ge=1)
    size: int = Field(default=32, ge=16)
    classes: int = Field(default=3, ge=2)
    seed: int = 0
    noise_sigma: float = Field(default=0.1, ge=0.0)


class PhantomResponse(BaseModel):
    manifest: str
    cases: list[str]


class TrainRequest(BaseModel):
    """Start a training job from a config file or inline config text."""

    config_path: Optional[str] = None
    config_text: Optional[str] = None
    resume_from: Optional[str] = None
    until_step: Optional[int] = Field(default=None, ge=1)


class JobInfo(BaseModel):
    job_id: str
    state: str  # queued | running | done | failed
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
    seconds: float = 0.0


class EvalRequest(BaseModel):
    ckpt: str
    manifest: str
    out: Optional[str] = None  # CSV path; omit to skip writing
    split: Optional[str] = Field(
        default=None, pattern="^(train|val|test|all)$",
        description="evaluate only this split of the manifest (default all)")


class CaseMetrics(BaseModel):
    case: str
    per_class: dict[int, dict]
    mean_dice: float
    mean_hd95: Optional[float]


class EvalResponse(BaseModel):
    cases: list[CaseMetrics]
    mean_dice: float
    mean_hd95: Optional[float]
    csv_path: Optional[str]


class InferRequest(BaseModel):
    ckpt: str
    input_path: str
    output_path: str


class InferResponse(BaseModel):
    output_path: str
    shape: list[int]
    classes_present: list[int]


class BenchScanRequest(BaseModel):
    dims: tuple[int, int, int] = (16, 16, 16)
    iters: int = Field(default=5, ge=1)
    channels: int = Field(default=8, ge=1)
    state_dim: int = Field(default=16, ge=1)


class BenchScanResponse(BaseModel):
    dims: tuple[int, int, int]
    length: int
    order_rows: list[dict]
    scan_rows: list[dict]
    table: str


class SelftestCheck(BaseModel):
    name: str
    passed: bool
    detail: str
    seconds: float


class SelftestResponse(BaseModel):
    passed: bool
    checks: list[SelftestCheck]
    summary: str
