"""Building blocks shared by the co-detection and tracking networks.

Every hidden non-linearity is a :class:`Rectifier` so that the whole network
can be switched into guided-backpropagation mode with :func:`guided_mode`.
"""
from __future__ import annotations

import contextlib

import torch
import torch.nn.functional as F
from torch import nn


class _GuidedReLU(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x.clamp(min=0)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        keep = (x > 0) & (grad > 0)
        return grad * keep.to(grad.dtype)


class Rectifier(nn.Module):
    """ReLU with a switchable guided backward rule.

    ``probe`` may be set to a list; every forward call then appends a
    ``[pre_activation, None]`` record whose second slot is filled with the
    gradient w.r.t. the pre-activation once backward runs.
    """

    def __init__(self):
        super().__init__()
        self.guided = False
        self.probe = None

    def forward(self, x):
        if self.probe is not None and x.requires_grad:
            record = [x.detach(), None]
            self.probe.append(record)
            x.register_hook(lambda g, r=record: r.__setitem__(1, g.detach()))
        if self.guided:
            return _GuidedReLU.apply(x)
        return F.relu(x)


@contextlib.contextmanager
def guided_mode(model: nn.Module):
    """Temporarily switch every Rectifier in ``model`` to the guided rule."""
    rects = [m for m in model.modules() if isinstance(m, Rectifier)]
    previous = [r.guided for r in rects]
    for r in rects:
        r.guided = True
    try:
        yield model
    finally:
        for r, p in zip(rects, previous):
            r.guided = p


@contextlib.contextmanager
def probe_rectifiers(model: nn.Module):
    """Collect ``[pre_activation, backward_signal]`` pairs at every Rectifier."""
    rects = [m for m in model.modules() if isinstance(m, Rectifier)]
    records: list = []
    for r in rects:
        r.probe = records
    try:
        yield records
    finally:
        for r in rects:
            r.probe = None


class ConvUnit(nn.Sequential):
    def __init__(self, cin, cout, stride=1):
        super().__init__(nn.Conv2d(cin, cout, 3, stride=stride, padding=1), Rectifier())


def upsample(x):
    return F.interpolate(x, scale_factor=2, mode="nearest")
