"""SGD training loop, polynomial schedule, and the ablation matrix.

The loop is deliberately plain: sample a batch of crops, forward,
cross-entropy, backward, momentum-SGD step under a polynomial learning
rate, with periodic full-volume validation. In float64 precision the
whole run is bit-deterministic given (seed, config, dataset), which is
what makes checkpoint-resume exactness testable.
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_text, render
from .core import Tensor, no_grad, ops
from .data import (LoadedCase, PhantomSpec, generate_phantom,
                   intensity_normalize, load_case, random_crop,
                   read_manifest, split_dataset)
from .decoder import DmSegNet
from .errors import CheckpointFormatError, ShapeError, TrainingAborted
from .metrics import evaluate
from .scanning import ALL_ORDERS, ScanOrder

LOG_HEADER = "step,lr,loss,val_dice"


def poly_lr(step: int, total_steps: int, lr0: float, power: float) -> float:
    """lr0 * (1 - step/total_steps)^power; step must stay in [0, total]."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps) ** power


class Sgd:
    """Momentum SGD with decoupled-from-nothing classic L2 decay.

    v <- momentum*v + (g + weight_decay*w);  w <- w - lr*v
    Velocities live in the parameter dtype and are checkpointed.
    """

    def __init__(self, named_params, momentum: float, weight_decay: float):
        self.named_params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = {name: np.zeros_like(p.data)
                           for name, p in self.named_params}

    def step(self, lr: float) -> None:
        m = self.momentum
        wd = self.weight_decay
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else 0.0
            if wd:
                g = g + wd * p.data
            v = self.velocities[name]
            v *= m
            v += g
            p.data -= lr * v


def model_dtype(cfg: RunConfig):
    return np.float64 if cfg.train.precision == "float64" else np.float32


def build_model(cfg: RunConfig) -> DmSegNet:
    """Instantiate the network a config describes, ablation toggles applied."""
    m = cfg.model
    directions = ALL_ORDERS if cfg.ablation.qss else (ScanOrder.FORWARD,)
    return DmSegNet(
        in_channels=m.in_channels, num_classes=m.num_classes,
        base_channels=m.base_channels,
        decoder_channels=m.decoder_channels,
        blocks_per_stage=m.blocks_per_stage, use_gsc=cfg.ablation.gsc,
        directions=directions, fusion=m.fusion, state_dim=m.state_dim,
        expand=m.expand, conv_width=m.conv_width,
        dt_rank=m.dt_rank or None,
        tied_gate_weights=m.tied_gate_weights,
        single_spatial_conv=m.single_spatial_conv,
        seed=cfg.train.seed, dtype=model_dtype(cfg))


def parameter_count(net) -> int:
    return sum(p.data.size for _, p in net.named_parameters())


def restore_parameters(net: DmSegNet, state: TrainState) -> None:
    """Copy `param/<name>` tensors from a checkpoint into the model."""
    for name, p in net.named_parameters():
        key = f"param/{name}"
        if key not in state.tensors:
            raise CheckpointFormatError(f"checkpoint lacks tensor {key!r}")
        stored = state.tensors[key]
        if stored.shape != p.data.shape or stored.dtype != p.data.dtype:
            raise CheckpointFormatError(
                f"checkpoint tensor {key!r} is {stored.dtype}{stored.shape}, "
                f"model wants {p.data.dtype}{p.data.shape}")
        p.data[...] = stored


def load_model(path) -> tuple[DmSegNet, RunConfig]:
    """Rebuild the network a checkpoint describes and load its weights."""
    state = load_checkpoint(path)
    cfg = parse_text(state.config_text)
    net = build_model(cfg)
    restore_parameters(net, state)
    return net, cfg


@dataclass
class DatasetBundle:
    train: list
    val: list
    test: list = field(default_factory=list)


def _normalized(case: LoadedCase, scheme: str) -> LoadedCase:
    if scheme == "none":
        return case
    return LoadedCase(id=case.id,
                      image=intensity_normalize(case.image, scheme),
                      label=case.label, spacing=case.spacing)


def prepare_data(cfg: RunConfig) -> DatasetBundle:
    """Load the manifest split, or generate in-memory phantom sets."""
    d = cfg.data
    if d.manifest:
        manifest = Path(d.manifest)
        root = Path(d.root) if d.root else manifest.parent
        records = read_manifest(manifest)
        fractions = tuple(s / 100 for s in d.split)
        tr, va, te = split_dataset(records, fractions, d.split_seed)
        load = lambda recs: [_normalized(load_case(r, root), d.normalize)
                             for r in recs]
        return DatasetBundle(train=load(tr), val=load(va), test=load(te))
    spec = PhantomSpec(size=d.phantom_size, num_classes=d.phantom_classes,
                       noise_sigma=d.phantom_noise_sigma,
                       seed=d.phantom_seed)
    rng = np.random.default_rng(d.phantom_seed)

    def make(n, start):
        cases = []
        for i in range(n):
            image, label = generate_phantom(spec, rng)
            cases.append(_normalized(
                LoadedCase(id=f"phantom_{start + i:03d}", image=image,
                           label=label, spacing=(1.0, 1.0, 1.0)),
                d.normalize))
        return cases

    train = make(d.phantom_count, 0)
    val = make(d.phantom_val_count, d.phantom_count)
    return DatasetBundle(train=train, val=val)


def predict_labels(net: DmSegNet, image: np.ndarray, dtype) -> np.ndarray:
    """Argmax class map [D,H,W] for one [C,D,H,W] image (dims already /16)."""
    with no_grad():
        logits = net(Tensor(np.ascontiguousarray(image[None], dtype=dtype)))
    return np.argmax(logits.data[0], axis=0)


def segment_volume(net: DmSegNet, image: np.ndarray, dtype=np.float32
                   ) -> np.ndarray:
    """predict_labels with automatic pad-to-multiple and crop-back.

    The encoder needs spatial dims divisible by 2^stages; volumes that
    are not get reflect-padded at the high end, segmented, and cropped
    back to the original dims.
    """
    factor = 2 ** len(net.encoder.stages)
    dims = image.shape[1:]
    pads = [(0, (-d) % factor) for d in dims]
    if any(p[1] for p in pads):
        image = np.pad(image, [(0, 0)] + pads, mode="reflect")
    labels = predict_labels(net, image, dtype)
    return labels[:dims[0], :dims[1], :dims[2]]


def mean_foreground_dice(net: DmSegNet, cases, num_classes: int, dtype
                         ) -> float:
    """Mean over cases of the mean foreground-class dice."""
    if not cases:
        raise ValueError("no cases to evaluate")
    scores = []
    for case in cases:
        pred = predict_labels(net, case.image, dtype)
        scores.append(evaluate(pred, case.label, num_classes,
                               case.spacing).mean_dice)
    return float(np.mean(scores))


@dataclass
class TrainResult:
    steps_run: int
    final_loss: float
    losses: list[float]
    log_rows: list[str]
    final_train_dice: Optional[float]
    final_val_dice: Optional[float]
    best_val_dice: Optional[float]
    stopped_early: bool
    seconds: float
    out_dir: str
    last_checkpoint: str
    best_checkpoint: Optional[str]


class Trainer:
    """One training run; construct fresh from a config or from a checkpoint."""

    def __init__(self, cfg: RunConfig, state: Optional[TrainState] = None):
        cfg.validate()
        self.cfg = cfg
        self.dtype = model_dtype(cfg)
        self.net = build_model(cfg)
        self.named_params = list(self.net.named_parameters())
        self.opt = Sgd(self.named_params, cfg.train.momentum,
                       cfg.train.weight_decay)
        self.data = prepare_data(cfg)
        self.rng = np.random.default_rng(cfg.train.seed)
        self.step = 0
        self.best_val = None
        if state is not None:
            self._restore(state)

    @classmethod
    def from_checkpoint(cls, path, cfg: Optional[RunConfig] = None
                        ) -> "Trainer":
        state = load_checkpoint(path)
        if cfg is None:
            cfg = parse_text(state.config_text)
        return cls(cfg, state=state)

    def _restore(self, state: TrainState) -> None:
        restore_parameters(self.net, state)
        for name, _ in self.named_params:
            vel = state.tensors.get(f"velocity/{name}")
            if vel is not None:
                self.opt.velocities[name][...] = vel
        self.step = int(state.step)
        self.rng.bit_generator.state = state.rng_state

    def state(self) -> TrainState:
        tensors = {}
        for name, p in self.named_params:
            tensors[f"param/{name}"] = p.data
            tensors[f"velocity/{name}"] = self.opt.velocities[name]
        return TrainState(config_text=render(self.cfg), step=self.step,
                          tensors=tensors,
                          rng_state=self.rng.bit_generator.state)

    def save(self, path) -> None:
        save_checkpoint(self.state(), path)

    def sample_batch(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.cfg.train
        cases = self.data.train
        idx = self.rng.integers(0, len(cases), size=t.batch_size)
        images, labels = [], []
        for i in idx:
            ci, cl = random_crop(cases[i].image, cases[i].label,
                                 t.crop_size, self.rng)
            images.append(ci)
            labels.append(cl)
        x = np.ascontiguousarray(np.stack(images), dtype=self.dtype)
        y = np.ascontiguousarray(np.stack(labels))
        return x, y

    def loss_on(self, x: np.ndarray, y: np.ndarray) -> Tensor:
        logits = self.net(Tensor(x))
        return ops.softmax_cross_entropy(logits, y)

    def train_step(self) -> tuple[float, float]:
        """One optimization step; returns (loss, lr used)."""
        x, y = self.sample_batch()
        loss = self.loss_on(x, y)
        self.net.zero_grad()
        loss.backward()
        lr = poly_lr(self.step, self.cfg.total_steps, self.cfg.train.lr0,
                     self.cfg.train.poly_power)
        self.opt.step(lr)
        self.step += 1
        return float(loss.data), lr

    def train_dice(self) -> float:
        return mean_foreground_dice(self.net, self.data.train,
                                    self.cfg.model.num_classes, self.dtype)

    def val_dice(self) -> Optional[float]:
        if not self.data.val:
            return None
        return mean_foreground_dice(self.net, self.data.val,
                                    self.cfg.model.num_classes, self.dtype)

    def run(self, until_step: Optional[int] = None,
            out_dir: Optional[str] = None, progress=None) -> TrainResult:
        """Train to `until_step` (default: the configured total).

        Writes `step,lr,loss,val_dice` log lines, checkpoints the best
        validation score and the final state, aborts with a state dump
        on a non-finite loss, and stops early once the train-set dice
        reaches train.stop_dice (when enabled). `progress(step, loss)`,
        if given, is called after every optimization step.
        """
        cfg = self.cfg
        total = cfg.total_steps
        target = total if until_step is None else min(until_step, total)
        out = Path(out_dir if out_dir is not None else cfg.train.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        best_path = out / "best.dmsg"
        last_path = out / "last.dmsg"
        log_path = out / "train_log.csv"

        losses: list[float] = []
        rows: list[str] = []
        train_d = val_d = None
        stopped = False
        t0 = time.time()
        mode = "a" if self.step > 0 and log_path.exists() else "w"
        with open(log_path, mode) as log:
            if mode == "w":
                log.write(LOG_HEADER + "\n")
            while self.step < target:
                loss, lr = self.train_step()
                losses.append(loss)
                if progress is not None:
                    progress(self.step, loss)
                if not math.isfinite(loss):
                    dump = out / "abort_state.dmsg"
                    self.save(dump)
                    row = f"{self.step},{lr!r},{loss!r},"
                    log.write(row + "\n")
                    raise TrainingAborted(
                        f"non-finite loss {loss} at step {self.step}; "
                        f"state dumped to {dump}")
                val_cell = ""
                due = (self.step % cfg.train.val_interval == 0
                       or self.step == target)
                if due:
                    val_d = self.val_dice()
                    if val_d is not None:
                        val_cell = repr(val_d)
                        if self.best_val is None or val_d > self.best_val:
                            self.best_val = val_d
                            self.save(best_path)
                    if cfg.train.stop_dice > 0:
                        train_d = self.train_dice()
                        if train_d >= cfg.train.stop_dice:
                            stopped = True
                rows.append(f"{self.step},{lr!r},{loss!r},{val_cell}")
                log.write(rows[-1] + "\n")
                if stopped:
                    break
        self.save(last_path)
        if train_d is None and cfg.train.stop_dice > 0:
            train_d = self.train_dice()
        return TrainResult(
            steps_run=self.step, final_loss=losses[-1] if losses else
            float("nan"), losses=losses, log_rows=rows,
            final_train_dice=train_d, final_val_dice=val_d,
            best_val_dice=self.best_val, stopped_early=stopped,
            seconds=time.time() - t0, out_dir=str(out),
            last_checkpoint=str(last_path),
            best_checkpoint=str(best_path) if best_path.exists() else None)


ABLATION_TOPOLOGIES = {
    # name -> (gated spatial conv on, all four scan directions on)
    "M1": (False, False),
    "M2": (True, False),
    "M3": (False, True),
    "full": (True, True),
}


@dataclass
class AblationRow:
    name: str
    gsc: bool
    qss: bool
    param_count: int
    dice_by_seed: dict[int, float]

    @property
    def mean_dice(self) -> float:
        return float(np.mean(list(self.dice_by_seed.values())))


def run_ablation_matrix(base_cfg: RunConfig, steps: int = 300,
                        seeds=(0, 1, 2), out_dir=None) -> list[AblationRow]:
    """Train every topology for `steps` on each seed; report val dice.

    Each run gets a fresh copy of the base config with only the two
    topology toggles and the seed changed, so the comparison isolates
    the architectural difference the toggles control.
    """
    rows = []
    for name, (gsc_on, qss_on) in ABLATION_TOPOLOGIES.items():
        dice_by_seed = {}
        count = None
        for seed in seeds:
            cfg = parse_text(render(base_cfg))  # deep copy via round trip
            cfg.ablation.gsc = gsc_on
            cfg.ablation.qss = qss_on
            cfg.train.seed = int(seed)
            cfg.train.epochs = 1
            cfg.train.steps_per_epoch = steps
            cfg.train.stop_dice = 0.0
            if out_dir is not None:
                cfg.train.out_dir = str(Path(out_dir) / f"{name}_s{seed}")
            trainer = Trainer(cfg)
            count = parameter_count(trainer.net)
            result = trainer.run()
            score = result.final_val_dice
            if score is None:
                score = trainer.train_dice()
            dice_by_seed[int(seed)] = score
        rows.append(AblationRow(name=name, gsc=gsc_on, qss=qss_on,
                                param_count=count,
                                dice_by_seed=dice_by_seed))
    return rows


def render_ablation_table(rows: list[AblationRow]) -> str:
    """Aligned text table: one line per topology, mean dice last."""
    header = (f"{'model':<6} {'gsc':<5} {'qss':<5} {'params':>9} "
              f"{'mean_dice':>10}  per-seed")
    lines = [header, "-" * len(header)]
    for r in rows:
        per_seed = " ".join(f"{s}:{d:.4f}"
                            for s, d in sorted(r.dice_by_seed.items()))
        lines.append(f"{r.name:<6} {str(r.gsc).lower():<5} "
                     f"{str(r.qss).lower():<5} {r.param_count:>9} "
                     f"{r.mean_dice:>10.4f}  {per_seed}")
    return "\n".join(lines)
