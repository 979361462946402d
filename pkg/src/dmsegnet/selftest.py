"""Fast built-in oracle and invariant checks, runnable from the CLI.

A trimmed-down version of the test suite that needs no test runner:
each check returns (name, passed, detail) and the whole battery stays
under a minute so it can double as an install smoke test.
"""

import math
import tempfile
import time
from pathlib import Path

import numpy as np

from .config import parse_text, render
from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .core import Tensor, ops
from .core.gradcheck import directional_relative_error
from .data import PhantomSpec, generate_phantom
from .decoder import DmSegNet
from .gsc import GatedSpatialConv
from .metrics import dice, hd95
from .nifti import read_nifti, write_nifti
from .scanning import ALL_ORDERS, VolumeDims, flatten, linear_index, unflatten
from .ssm import selective_scan, selective_scan_reference


def _check_scan_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        dims = VolumeDims(*(int(v) for v in rng.integers(1, 7, size=3)))
        vol = Tensor(rng.normal(size=(1, 3, dims.d, dims.h, dims.w)))
        for order in ALL_ORDERS:
            back = unflatten(flatten(vol, order), order, dims)
            if not np.array_equal(back.data, vol.data):
                return False, f"round trip broke for {order.name} {dims}"
    return True, "50 random dims x 4 orders exact"


def _check_linear_index():
    dims = VolumeDims(2, 2, 2)
    from .scanning import ScanOrder
    got = (linear_index(ScanOrder.FORWARD, (1, 0, 1), dims),
           linear_index(ScanOrder.INTERSLICE, (1, 0, 1), dims))
    return got == (5, 3), f"(forward, interslice) of (1,0,1) = {got}"


def _check_scan_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        b, l, e, n = 2, int(rng.integers(1, 65)), 4, 8
        args = (Tensor(rng.normal(size=(b, l, e))),
                Tensor(rng.uniform(1e-3, 0.5, size=(b, l, e))),
                Tensor(-rng.uniform(0.1, 2.0, size=(e, n))),
                Tensor(rng.normal(size=(b, l, n))),
                Tensor(rng.normal(size=(b, l, n))),
                Tensor(rng.normal(size=e)))
        diff = np.abs(selective_scan(*args).data
                      - selective_scan_reference(*args))
        worst = max(worst, float(diff.max()))
    return worst < 1e-10, f"max abs diff vs reference {worst:.3e}"


def _check_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)

    def f(t):
        return ops.tsum(ops.mul(ops.silu(t), t))

    err = directional_relative_error(f, [x], seed=0)
    return err < 1e-6, f"silu*x directional error {err:.3e}"


def _check_gsc_identity():
    gsc = GatedSpatialConv(channels=4, rng=np.random.default_rng(0),
                           dtype=np.float64)
    gsc.zero_parameters()
    x = Tensor(np.random.default_rng(1).normal(size=(1, 4, 5, 5, 5)))
    out = gsc(x)
    exact = np.array_equal(out.data, x.data)
    return exact, "zero-initialized block is the exact identity"


def _check_metrics():
    p = np.zeros((8, 8, 8), dtype=np.int64)
    g = np.zeros_like(p)
    p[0, 0, 0] = 1
    g[0, 0, 3] = 1
    ok = (hd95(p, g, 1) == 3.0 and dice(p, p, 1) == 1.0
          and dice(np.zeros_like(p), np.zeros_like(p), 1) == 1.0
          and hd95(p, np.zeros_like(p), 1) is None)
    return ok, "distance example, identity, empty conventions"


def _check_nifti_round_trip():
    rng = np.random.default_rng(3)
    with tempfile.TemporaryDirectory() as tmp:
        for dt in (np.uint8, np.int16, np.float32):
            arr = rng.integers(0, 100, size=(4, 5, 6)).astype(dt)
            path = Path(tmp) / "vol.nii.gz"
            write_nifti(path, arr, (1.0, 2.0, 3.0))
            back, spacing = read_nifti(path)
            if not (np.array_equal(arr, back) and back.dtype == dt
                    and spacing == (1.0, 2.0, 3.0)):
                return False, f"round trip broke for {dt}"
    return True, "bit-exact on all supported dtypes"


def _check_checkpoint_round_trip():
    rng = np.random.default_rng(4)
    state = TrainState(config_text=render(parse_text("")), step=5,
                       tensors={"w": rng.normal(size=(3, 3))},
                       rng_state=rng.bit_generator.state)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "s.dmsg"
        save_checkpoint(state, path)
        back = load_checkpoint(path)
        ok = (back.step == 5
              and np.array_equal(back.tensors["w"], state.tensors["w"])
              and back.rng_state == state.rng_state)
    return ok, "save/load identity incl. rng state"


def _check_zero_init_loss():
    net = DmSegNet(in_channels=1, num_classes=3, base_channels=8,
                   decoder_channels=16, seed=0, dtype=np.float64)
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(1, 1, 16, 16, 16)))
    labels = rng.integers(0, 3, size=(1, 16, 16, 16))
    loss = float(ops.softmax_cross_entropy(net(x), labels).data)
    ok = abs(loss - math.log(3)) < 1e-9
    return ok, f"fresh-model loss {loss:.12f} vs ln 3"


def _check_phantom_bands():
    spec = PhantomSpec(size=16, num_classes=3, noise_sigma=0.0, seed=0)
    image, label = generate_phantom(spec, np.random.default_rng(0))
    pred = np.rint(image[0]).astype(np.int64)
    ok = (np.array_equal(pred, label)
          and all(int((label == c).sum()) > 0 for c in range(1, 3)))
    return ok, "sigma-0 bands recover the label exactly"


CHECKS = [
    ("scan_round_trip", _check_scan_round_trip),
    ("scan_linear_index", _check_linear_index),
    ("selective_scan_oracle", _check_scan_oracle),
    ("gradient_spot_check", _check_gradients),
    ("gsc_identity_floor", _check_gsc_identity),
    ("metric_conventions", _check_metrics),
    ("nifti_round_trip", _check_nifti_round_trip),
    ("checkpoint_round_trip", _check_checkpoint_round_trip),
    ("zero_init_uniform_loss", _check_zero_init_loss),
    ("phantom_generator", _check_phantom_bands),
]


def run_selftest() -> list[dict]:
    """Run every check; returns [{name, passed, detail, seconds}]."""
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append({"name": name, "passed": bool(passed),
                        "detail": detail,
                        "seconds": round(time.perf_counter() - t0, 3)})
    return results


def render_selftest(results: list[dict]) -> str:
    lines = []
    for r in results:
        mark = "PASS" if r["passed"] else "FAIL"
        lines.append(f"[{mark}] {r['name']:<24} {r['detail']} "
                     f"({r['seconds']}s)")
    total = sum(r["passed"] for r in results)
    lines.append(f"{total}/{len(results)} checks passed")
    return "\n".join(lines)
