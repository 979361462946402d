"""Throughput measurements for the scan plumbing and the recurrence."""

import time
from dataclasses import dataclass

import numpy as np

from .core import Tensor, no_grad, ops
from .scanning import ALL_ORDERS, VolumeDims, flatten, unflatten
from .ssm import selective_scan


def _time(fn, iters: int) -> float:
    fn()  # warm path (JIT, allocator)
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters * 1000.0


@dataclass
class ScanBench:
    dims: tuple[int, int, int]
    length: int
    channels: int
    state_dim: int
    order_rows: list[dict]
    scan_rows: list[dict]


def bench_scan(dims: tuple[int, int, int], iters: int = 5,
               channels: int = 8, state_dim: int = 16,
               dtype=np.float32) -> ScanBench:
    """Time flatten/unflatten per direction and the recurrence itself.

    The recurrence is measured at L = D*H*W with inner width 2*channels
    (the expansion the sequence blocks use), once inference-only and
    once with a recorded forward plus backward pass.
    """
    d, h, w = (int(v) for v in dims)
    if min(d, h, w) < 1 or iters < 1:
        raise ValueError(f"dims and iters must be positive, got {dims}, "
                         f"{iters}")
    vd = VolumeDims(d, h, w)
    rng = np.random.default_rng(0)
    vol = Tensor(rng.normal(size=(1, channels, d, h, w)).astype(dtype))

    order_rows = []
    for order in ALL_ORDERS:
        seq = flatten(vol, order)
        order_rows.append({
            "order": order.name,
            "flatten_ms": _time(lambda: flatten(vol, order), iters),
            "unflatten_ms": _time(lambda: unflatten(seq, order, vd), iters),
        })

    l_, e_, n_ = vd.length, 2 * channels, state_dim
    x = Tensor(rng.normal(size=(1, l_, e_)).astype(dtype))
    delta = Tensor(rng.uniform(1e-3, 0.1, size=(1, l_, e_)).astype(dtype))
    a = Tensor(-rng.uniform(0.5, 2.0, size=(e_, n_)).astype(dtype))
    b = Tensor(rng.normal(size=(1, l_, n_)).astype(dtype))
    c = Tensor(rng.normal(size=(1, l_, n_)).astype(dtype))
    skip = Tensor(np.ones(e_, dtype=dtype))

    def eval_once():
        with no_grad():
            selective_scan(x, delta, a, b, c, skip)

    def train_once():
        for t in (x, delta, a, b, c, skip):
            t.requires_grad = True
            t.grad = None
        ops.tsum(selective_scan(x, delta, a, b, c, skip)).backward()

    eval_ms = _time(eval_once, iters)
    train_ms = _time(train_once, iters)
    scan_rows = [{
        "length": l_, "inner_width": e_, "state_dim": n_,
        "eval_ms": eval_ms, "train_ms": train_ms,
        "eval_melems_per_s": l_ * e_ / eval_ms / 1000.0,
        "train_melems_per_s": l_ * e_ / train_ms / 1000.0,
    }]
    return ScanBench(dims=(d, h, w), length=l_, channels=channels,
                     state_dim=state_dim, order_rows=order_rows,
                     scan_rows=scan_rows)


def render_bench_table(result: ScanBench) -> str:
    lines = [f"dims {result.dims}  length {result.length}  "
             f"channels {result.channels}  state {result.state_dim}",
             f"{'order':<22} {'flatten_ms':>11} {'unflatten_ms':>13}"]
    for row in result.order_rows:
        lines.append(f"{row['order']:<22} {row['flatten_ms']:>11.3f} "
                     f"{row['unflatten_ms']:>13.3f}")
    for row in result.scan_rows:
        lines.append(
            f"selective scan L={row['length']} E={row['inner_width']} "
            f"N={row['state_dim']}: eval {row['eval_ms']:.2f} ms "
            f"({row['eval_melems_per_s']:.1f} Melem/s), train "
            f"{row['train_ms']:.2f} ms "
            f"({row['train_melems_per_s']:.1f} Melem/s)")
    return "\n".join(lines)
