"""Central finite-difference verification of the hand-written backward passes.

Two granularities: entrywise checks for isolated layers, and per-tensor
random-direction checks for the composed model (a directional derivative
probes the whole gradient tensor with two forward evaluations).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import graph
from .nn import (
    BasicBlock,
    BatchNorm,
    Conv1x1,
    Linear,
    MaxPoolT,
    MPGCN,
    ModelConfig,
    MultiScaleTCN,
    ReLU,
    SpatialGraphConv,
    STPAttention,
    TemporalConv,
    cross_entropy,
)
from .nn.core import Module

H = 1e-5
ABS_FLOOR = 1e-7  # below this, analytic and numeric are both numerically zero


def freeze_kinks(module: Module, frozen: bool = True) -> None:
    """Pin every ReLU mask and maxpool argmax at their current values.

    The analytic backward pass differentiates the piecewise-linear branch
    selected by the unperturbed forward pass; an O(h) FD probe that lands a
    pre-activation on the other side of a kink measures a different branch
    and reports a spurious mismatch.  Freezing the branch decisions makes
    the probed function smooth, so FD and the analytic gradient agree to
    truncation error.  Callers must run one forward pass before freezing.
    """
    if isinstance(module, (ReLU, MaxPoolT, STPAttention)):
        module._freeze_kinks = frozen
    for _, child in module._children:
        freeze_kinks(child, frozen)


def _error(fd: float, analytic: float) -> float:
    diff = abs(fd - analytic)
    if diff <= ABS_FLOOR:
        return 0.0
    return diff / max(abs(fd), abs(analytic))


def check_entrywise(
    module: Module,
    loss_fn: Callable[[], float],
    backward_fn: Callable[[], None],
    rng: np.random.Generator,
    max_entries: int | None = None,
    h: float = H,
) -> dict[str, float]:
    """Max relative FD error per parameter tensor, probing single entries.

    ``loss_fn`` runs forward only; ``backward_fn`` runs forward + backward
    with gradients accumulated into the module.
    """
    module.zero_grad()
    backward_fn()
    analytic = {name: g.copy() for name, g in module.named_grads()}
    errors = {}
    for name, p in module.named_parameters():
        flat = p.reshape(-1)
        g = analytic[name].reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            indices = np.arange(flat.size)
        else:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            worst = max(worst, _error((lp - lm) / (2 * h), g[i]))
        errors[name] = worst
    return errors


def check_directional(
    module: Module,
    loss_fn: Callable[[], float],
    backward_fn: Callable[[], None],
    rng: np.random.Generator,
    h: float = H,
    group_by_module: bool = False,
) -> dict[str, float]:
    """Random-direction FD checks covering every parameter.

    One direction per parameter tensor by default; with
    ``group_by_module`` a single direction spans all tensors of each leaf
    module (two forward evaluations per group instead of per tensor).
    """
    module.zero_grad()
    backward_fn()
    analytic = {name: g.copy() for name, g in module.named_grads()}
    params = list(module.named_parameters())
    if group_by_module:
        groups: dict[str, list[tuple[str, np.ndarray]]] = {}
        for name, p in params:
            groups.setdefault(name.rsplit(".", 1)[0], []).append((name, p))
    else:
        groups = {name: [(name, p)] for name, p in params}
    errors = {}
    for gname, members in groups.items():
        total = sum(p.size for _, p in members)
        d = rng.standard_normal(total)
        d /= np.linalg.norm(d)
        pieces = {}
        off = 0
        for name, p in members:
            pieces[name] = d[off : off + p.size]
            p.reshape(-1)[...] += h * pieces[name]
            off += p.size
        lp = loss_fn()
        for name, p in members:
            p.reshape(-1)[...] -= 2 * h * pieces[name]
        lm = loss_fn()
        for name, p in members:
            p.reshape(-1)[...] += h * pieces[name]
        fd = (lp - lm) / (2 * h)
        dot = sum(float(analytic[name].reshape(-1) @ pieces[name]) for name, _ in members)
        errors[gname] = _error(fd, dot)
    return errors


def _probe_loss(module: Module, x: np.ndarray, probe: np.ndarray):
    """Linear readout of a layer's output so the loss is scalar but generic."""

    def loss_fn() -> float:
        return float((module.forward(x, training=True) * probe).sum())

    def backward_fn() -> None:
        module.forward(x, training=True)
        module.backward(probe)

    return loss_fn, backward_fn


def tiny_adjacency(num_persons=2, num_joints=3):
    topo = graph.build_topology("chain", num_persons, num_joints, inter_variant="pairwise")
    return graph.partition_and_normalize(topo).A_hat


def layer_suite(seed: int) -> dict[str, float]:
    """Entrywise FD errors for every layer type in isolation."""
    rng = np.random.default_rng(seed)
    B, T, M, Np = 2, 5, 2, 3
    N = M * Np
    A = tiny_adjacency(M, Np)
    results: dict[str, float] = {}

    def run(name: str, module: Module, cin: int, tweak=None):
        x = rng.standard_normal((B, cin, T, N))
        y = module.forward(x, training=True)
        freeze_kinks(module)
        probe = rng.standard_normal(y.shape)
        if tweak:
            tweak(module)
        loss_fn, backward_fn = _probe_loss(module, x, probe)
        errs = check_entrywise(module, loss_fn, backward_fn, rng, max_entries=6)
        results[name] = max(errs.values()) if errs else 0.0
        # input gradient against FD as well
        module.zero_grad()
        backward_fn()
        gx = module.backward(probe)
        flat = x.reshape(-1)
        worst = 0.0
        for i in rng.choice(flat.size, size=6, replace=False):
            orig = flat[i]
            flat[i] = orig + H
            lp = loss_fn()
            flat[i] = orig - H
            lm = loss_fn()
            flat[i] = orig
            worst = max(worst, _error((lp - lm) / (2 * H), gx.reshape(-1)[i]))
        results[name + ".input"] = worst

    run("sgc", SpatialGraphConv(4, 3, A, rng), 4)
    run("conv1x1", Conv1x1(4, 3, rng), 4)
    run("conv1x1_strided", Conv1x1(4, 3, rng, stride=2), 4)
    run("tconv_d1", TemporalConv(3, 4, rng, dilation=1), 3)
    run("tconv_d2_s2", TemporalConv(3, 4, rng, dilation=2, stride=2), 3)
    run("maxpool", MaxPoolT(stride=2), 4)
    run("batchnorm", BatchNorm(4), 4)
    run("attention", STPAttention(8, M, Np, rng), 8)
    run("mstcn", MultiScaleTCN(4, 8, rng, stride=2), 4)
    run("basic_block", BasicBlock(4, 8, A, M, Np, rng, stride=2), 4)

    lin = Linear(6, 3, rng)
    xl = rng.standard_normal((B, 6))
    probe = rng.standard_normal((B, 3))
    loss_fn = lambda: float((lin.forward(xl) * probe).sum())

    def backward_fn():
        lin.forward(xl)
        lin.backward(probe)

    errs = check_entrywise(lin, loss_fn, backward_fn, rng)
    results["linear"] = max(errs.values())

    relu = ReLU()
    xr = rng.standard_normal((B, 4, T, N)) + 0.1
    pr = rng.standard_normal(xr.shape)
    relu.forward(xr)
    freeze_kinks(relu)
    gx = relu.backward(pr)
    fd_ok = 0.0
    flatx = xr.reshape(-1)
    for i in rng.choice(flatx.size, size=6, replace=False):
        orig = flatx[i]
        flatx[i] = orig + H
        lp = float((relu.forward(xr) * pr).sum())
        flatx[i] = orig - H
        lm = float((relu.forward(xr) * pr).sum())
        flatx[i] = orig
        fd_ok = max(fd_ok, _error((lp - lm) / (2 * H), gx.reshape(-1)[i]))
    results["relu.input"] = fd_ok
    return results


def tiny_model_config(num_classes: int = 5) -> ModelConfig:
    base = ModelConfig(
        num_persons=2,
        joints_per_person=3,
        object_keypoints=0,
        num_frames=4,
        num_classes=num_classes,
        in_channels=3,
    )
    return base.scaled(4)


def model_suite(seed: int, group_by_module: bool = False) -> dict[str, float]:
    """Random-direction FD errors for the composed tiny model."""
    rng = np.random.default_rng(seed)
    cfg = tiny_model_config()
    A = tiny_adjacency(cfg.num_persons, cfg.joints_per_person)
    model = MPGCN(cfg, A, rng)
    B = 1
    labels = rng.integers(0, cfg.num_classes, size=B)
    streams = [
        rng.standard_normal((B, 2 * cfg.in_channels, cfg.num_frames, cfg.num_nodes))
        for _ in range(4)
    ]
    model.forward(streams, training=True)
    freeze_kinks(model)

    def loss_fn() -> float:
        logits = model.forward(streams, training=True)
        loss, _ = cross_entropy(logits, labels)
        return loss

    def backward_fn() -> None:
        logits = model.forward(streams, training=True)
        _, glogits = cross_entropy(logits, labels)
        model.backward(glogits)

    return check_directional(model, loss_fn, backward_fn, rng, group_by_module=group_by_module)


def run_full_suite(seed: int, thorough: bool = True) -> tuple[dict[str, float], float]:
    """Layer and model checks for one seed; returns (per-check errors, max).

    ``thorough=False`` swaps the model check's per-tensor directions for
    per-module ones (every parameter still perturbed, far fewer forwards).
    """
    errors = layer_suite(seed)
    model_errors = model_suite(seed, group_by_module=not thorough)
    errors["model"] = max(model_errors.values())
    return errors, max(errors.values())
