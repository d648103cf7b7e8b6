"""Gradient verification suite: every differentiable building block,
checked against central differences in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from . import blocks, losses
from .autodiff import conv2d, gradcheck, layer_norm, ops, pixel_shuffle, resize_bilinear
from .autodiff.gradcheck import GradcheckReport
from .network import ModelConfig, build_model, forward
from .scan import ScanParams, init_scan_params, s6_forward, selective_scan
from .scanners import inter_scan, intra_scan

TOL_REL = 1e-4
STEP = 1e-5


@dataclass
class Check:
    name: str
    fn: Callable
    inputs: list
    max_coords: int = 64


def _scan_fn(params: ScanParams, body: Callable) -> tuple:
    """Wrap ``body(x, ScanParams)`` so the scan parameters are gradcheck inputs."""
    names = [k for k, _ in params.items()]

    def fn(x, *vals):
        return body(x, ScanParams(**dict(zip(names, vals))))

    return fn, [v for _, v in params.items()]


def _dc(obj) -> tuple:
    """Wrap a weight dataclass so its leaves become gradcheck inputs."""
    flat = blocks.flatten(obj)
    keys, cls = list(flat), type(obj)

    def rebuild(vals):
        return blocks.unflatten(cls, dict(zip(keys, vals)))

    return rebuild, list(flat.values())


def checks(seed: int = 0) -> Iterator[Check]:
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731

    # elementwise and structural primitives
    yield Check("add", ops.add, [r(3, 4), r(4)])
    yield Check("sub", ops.sub, [r(3, 4), r(3, 1)])
    yield Check("mul", ops.mul, [r(3, 4), r(1, 4)])
    yield Check("div", ops.div, [r(3, 4), pos(3, 4)])
    yield Check("neg", ops.neg, [r(5)])
    yield Check("exp", ops.exp, [r(5)])
    yield Check("log", ops.log, [pos(5)])
    yield Check("sigmoid", ops.sigmoid, [r(6)])
    yield Check("silu", ops.silu, [r(6)])
    yield Check("softplus", ops.softplus, [r(6)])
    yield Check("relu", ops.relu, [r(6) + np.sign(r(6)) * 0.1])
    yield Check("sqrt", ops.sqrt, [pos(5)])
    yield Check("square", ops.square, [r(5)])
    yield Check("sum", lambda a: ops.sum(a, axis=1), [r(3, 4)])
    yield Check("mean", lambda a: ops.mean(a, axis=0), [r(3, 4)])
    yield Check("reshape", lambda a: ops.reshape(a, (4, 3)), [r(3, 4)])
    yield Check("permute", lambda a: ops.permute(a, (1, 0, 2)), [r(2, 3, 4)])
    yield Check("concat", lambda a, b: ops.concat([a, b], axis=1), [r(2, 3), r(2, 2)])
    yield Check("slice", lambda a: ops.slice_axis(a, 1, 1, 5, 2), [r(2, 6)])
    yield Check("split", lambda a: ops.mul(*ops.split(a, [2, 2], axis=-1)), [r(3, 4)])
    yield Check("flip", lambda a: ops.flip(a, 0), [r(4, 2)])
    yield Check("crop", lambda a: ops.crop(a, 1, 2, 3, 2), [r(1, 5, 6, 2)])
    yield Check("reflect_pad", lambda a: ops.reflect_pad(a, ((2, 1), (1, 2))), [r(1, 4, 5, 2)])
    yield Check("softmax", lambda a: ops.softmax(a, -1), [r(3, 5)])
    yield Check("linear", ops.linear, [r(2, 3, 4), r(4, 5), r(5)])
    yield Check("conv_pointwise", lambda x, w, b: conv2d(x, w, b), [r(2, 5, 4, 3), r(3, 4), r(4)])
    yield Check("conv_depthwise", lambda x, w: conv2d(x, w, mode="depthwise3x3"), [r(1, 5, 6, 3), r(3, 3, 3)])
    yield Check("conv_depthwise_s2", lambda x, w: conv2d(x, w, mode="depthwise3x3", stride=2), [r(1, 6, 6, 2), r(3, 3, 2)])
    yield Check("conv_full", lambda x, w, b: conv2d(x, w, b, mode="full3x3"), [r(1, 5, 4, 2), r(3, 3, 2, 3), r(3)])
    yield Check("conv_full_s2", lambda x, w: conv2d(x, w, mode="full3x3", stride=2), [r(1, 6, 6, 2), r(3, 3, 2, 3)])
    yield Check("layer_norm", layer_norm, [r(2, 3, 5), r(5), r(5)])
    yield Check("resize_bilinear", lambda x: resize_bilinear(x, 5, 7), [r(1, 3, 4, 2)])
    yield Check("pixel_shuffle", pixel_shuffle, [r(1, 2, 3, 8)])

    # selective scan
    L, D, N = 9, 3, 4
    yield Check(
        "selective_scan",
        lambda d, A, B, C, x: selective_scan(d, A, B, C, x),
        [pos(2, L, D) * 0.3, -pos(D, N), r(2, L, N), r(2, L, N), r(2, L, D)],
    )
    params = init_scan_params(rng, D, N, dtype=np.float64)
    for method in ("parallel", "sequential"):
        fn, vals = _scan_fn(params, lambda x, p, m=method: s6_forward(x, p, method=m))
        yield Check(f"s6_forward_{method}", fn, [r(2, L, D)] + vals)

    # scanners
    for axis in ("horizontal", "vertical"):
        fn, vals = _scan_fn(params, lambda x, p, a=axis: intra_scan(x, a, p))
        yield Check(f"intra_scan_{axis}", fn, [r(1, 4, 5, D)] + vals)
        fn, vals = _scan_fn(params, lambda x, p, a=axis: inter_scan(x, a, p))
        yield Check(f"inter_scan_{axis}", fn, [r(1, 4, 5, D)] + vals)

    # blocks
    C = 4
    for kind in ("intra", "inter"):
        rebuild, vals = _dc(blocks.init_vssm(rng, C, 3, dtype=np.float64))
        yield Check(f"vssm_{kind}", lambda x, *v, k=kind, rb=rebuild: blocks.vssm_forward(x, rb(v), k),
                    [r(1, 4, 5, C)] + vals, max_coords=24)
    rebuild, vals = _dc(blocks.init_gdfn(rng, C, dtype=np.float64))
    yield Check("gdfn", lambda x, *v: blocks.gdfn_forward(x, rebuild(v)), [r(1, 4, 5, C)] + vals)
    w_dgff = blocks.init_dgff(rng, C, 2 * C, 4 * C, dtype=np.float64)
    rebuild, vals = _dc(w_dgff)
    yield Check(
        "dgff",
        lambda a, b, c, *v: blocks.dgff_forward(a, b, c, rebuild(v)),
        [r(1, 4, 4, C), r(1, 2, 2, 2 * C), r(1, 2, 2, 4 * C)] + vals,
        max_coords=32,
    )

    # losses
    x, y = rng.uniform(0, 1, (1, 8, 8, 3)), rng.uniform(0, 1, (1, 8, 8, 3))
    yield Check("charbonnier", lambda a, b: losses.charbonnier(a, b, 1e-3), [x, y])
    yield Check("edge_loss", lambda a: losses.edge_loss(a, y, 1e-3), [x])
    yield Check("perceptual_loss", lambda a: losses.perceptual_loss(a, y), [x])
    yield Check("total_loss", lambda a: losses.total_loss(a, y), [x])

    # mean output of a tiny network
    yield full_model_check(seed)


def full_model_check(seed: int = 0, size: int = 8) -> Check:
    """Gradient of mean(forward(image)) with respect to every weight tensor.

    The zero-initialized output projection is replaced by random values so
    gradients reach the interior of the network.
    """
    cfg = ModelConfig(base_channels=4, blocks_per_level=(1, 1, 1), state_dim=2, dtype="f64", seed=seed)
    weights, _ = build_model(cfg)
    rng = np.random.default_rng(seed + 1)
    weights["output/w"] = rng.uniform(-0.3, 0.3, weights["output/w"].shape)
    image = rng.uniform(0, 1, (1, size, size, 3))
    keys = list(weights)

    def fn(img, *vals):
        return ops.mean(forward(dict(zip(keys, vals)), cfg, img))

    return Check("tiny_model_mean", fn, [image] + [weights[k] for k in keys], max_coords=4)


def run_check(c: Check, tol_rel: float = TOL_REL, h: float = STEP) -> GradcheckReport:
    return gradcheck(c.fn, c.inputs, tol_rel=tol_rel, h=h, max_coords=c.max_coords)


def gradient_suite(seed: int = 0, only: Optional[str] = None, tol_rel: float = TOL_REL) -> list:
    """Run every check; returns ``[(name, report), ...]``."""
    out = []
    for c in checks(seed):
        if only is not None and only not in c.name:
            continue
        out.append((c.name, run_check(c, tol_rel)))
    return out
