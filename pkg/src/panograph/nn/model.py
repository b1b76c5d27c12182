"""The full network: four input branches, early-fusion main branch, classifier."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError, InputError
from .blocks import BasicBlock
from .core import Module
from .layers import Linear

STREAM_ORDER = ("joint", "bone", "joint_motion", "bone_motion")

DEFAULT_INPUT_BRANCH = [(6, 64), (64, 64), (64, 32)]
DEFAULT_MAIN_BRANCH = [(128, 128), (128, 128), (128, 128), (128, 256), (256, 256), (256, 256)]


@dataclass
class ModelConfig:
    num_persons: int
    joints_per_person: int
    object_keypoints: int
    num_frames: int
    num_classes: int
    in_channels: int = 3  # coordinate channels C; streams carry 2C
    input_branch_channels: list[tuple[int, int]] = field(
        default_factory=lambda: [tuple(p) for p in DEFAULT_INPUT_BRANCH]
    )
    main_branch_channels: list[tuple[int, int]] = field(
        default_factory=lambda: [tuple(p) for p in DEFAULT_MAIN_BRANCH]
    )
    tcn_dilations: tuple[int, int] = (1, 2)
    attention_reduction: int = 4
    temporal_stride_blocks: frozenset[int] = frozenset({3})

    @property
    def nodes_per_person(self) -> int:
        return self.joints_per_person + self.object_keypoints

    @property
    def num_nodes(self) -> int:
        return self.num_persons * self.nodes_per_person

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.input_branch_channels[0][0] != 2 * self.in_channels:
            raise ConfigError(
                f"first input-branch block expects {self.input_branch_channels[0][0]} channels "
                f"but streams carry {2 * self.in_channels}"
            )
        fused = 4 * self.input_branch_channels[-1][1]
        if fused != self.main_branch_channels[0][0]:
            raise ConfigError(
                f"concatenated branch channels {fused} do not match main branch "
                f"input {self.main_branch_channels[0][0]}"
            )
        for cin, cout in self.input_branch_channels + self.main_branch_channels:
            if cout % 4 != 0:
                raise ConfigError(f"block output {cout} not divisible by 4 (TCN branches)")

    def scaled(self, divisor: int) -> "ModelConfig":
        """Channel plan shrunk by an integer divisor (for tiny/desk-scale runs)."""
        def shrink(plan, keep_first):
            out = []
            for i, (cin, cout) in enumerate(plan):
                cin2 = cin if (keep_first and i == 0) else max(cin // divisor, 4)
                out.append((cin2, max(cout // divisor, 4)))
            return out

        cfg = ModelConfig(
            num_persons=self.num_persons,
            joints_per_person=self.joints_per_person,
            object_keypoints=self.object_keypoints,
            num_frames=self.num_frames,
            num_classes=self.num_classes,
            in_channels=self.in_channels,
            input_branch_channels=shrink(self.input_branch_channels, keep_first=True),
            main_branch_channels=shrink(self.main_branch_channels, keep_first=False),
            tcn_dilations=self.tcn_dilations,
            attention_reduction=self.attention_reduction,
            temporal_stride_blocks=self.temporal_stride_blocks,
        )
        return cfg


class _BlockStack(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = [self.add(f"block{i}", b) for i, b in enumerate(blocks)]

    def forward(self, x, training=False):
        for block in self.blocks:
            x = block.forward(x, training)
        return x

    def backward(self, grad_out):
        for block in reversed(self.blocks):
            grad_out = block.backward(grad_out)
        return grad_out


class MPGCN(Module):
    """Early-fusion multi-branch graph convolutional classifier.

    Consumes the four feature streams as (B, 2C, T, M*N') tensors, runs each
    through its own input branch, concatenates channels into the main
    branch, global-average-pools, and classifies.
    """

    def __init__(self, config: ModelConfig, adjacency: np.ndarray, rng: np.random.Generator):
        super().__init__()
        config.validate()
        n = config.num_nodes
        if adjacency.shape != (3, n, n):
            raise ConfigError(
                f"adjacency shape {adjacency.shape} does not match config nodes {n}"
            )
        self.config = config
        self.adjacency = adjacency

        def make_block(cin, cout, stride):
            return BasicBlock(
                cin,
                cout,
                adjacency,
                config.num_persons,
                config.nodes_per_person,
                rng,
                stride=stride,
                attention_reduction=config.attention_reduction,
                dilations=config.tcn_dilations,
            )

        self.branches = [
            self.add(
                f"branch{i}",
                _BlockStack([make_block(cin, cout, 1) for cin, cout in config.input_branch_channels]),
            )
            for i in range(4)
        ]
        self.main = self.add(
            "main",
            _BlockStack(
                [
                    make_block(cin, cout, 2 if j in config.temporal_stride_blocks else 1)
                    for j, (cin, cout) in enumerate(config.main_branch_channels)
                ]
            ),
        )
        self.classifier = self.add(
            "classifier", Linear(config.main_branch_channels[-1][1], config.num_classes, rng)
        )

    def forward(self, streams, training=False):
        if len(streams) != 4:
            raise ContractError(f"expected 4 input streams, got {len(streams)}")
        expect_c = 2 * self.config.in_channels
        for s in streams:
            if s.ndim != 4 or s.shape[1] != expect_c or s.shape[3] != self.config.num_nodes:
                raise ContractError(
                    f"stream shape {s.shape} does not match (B, {expect_c}, T, "
                    f"{self.config.num_nodes})"
                )
        feats = [br.forward(s, training) for br, s in zip(self.branches, streams)]
        x = np.concatenate(feats, axis=1)
        self._branch_channels = feats[0].shape[1]
        x = self.main.forward(x, training)
        self._pool_shape = x.shape
        pooled = x.mean(axis=(2, 3))
        return self.classifier.forward(pooled, training)

    def backward(self, grad_logits):
        gp = self.classifier.backward(grad_logits)
        B, C, T, N = self._pool_shape
        gx = np.broadcast_to(gp[:, :, None, None], self._pool_shape) / (T * N)
        gx = self.main.backward(np.ascontiguousarray(gx))
        bc = self._branch_channels
        return [
            br.backward(gx[:, i * bc : (i + 1) * bc]) for i, br in enumerate(self.branches)
        ]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    B, K = logits.shape
    if labels.min() < 0 or labels.max() >= K:
        raise InputError(f"label out of range for {K} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(B), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return float(loss), grad / B


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
