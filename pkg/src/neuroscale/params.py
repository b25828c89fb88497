"""Parameter initialization and collection helpers shared by the encoder stack."""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Parameter


def kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, name: str,
            gain: float = 1.0) -> Parameter:
    """Fan-in scaled normal init for weight matrices and convolution kernels.

    Unit gain keeps the heavily residual token stream from amplifying layer
    over layer; the rectifier gain of 2 is not appropriate here because most
    maps feed sums rather than ReLUs.
    """
    std = gain * np.sqrt(1.0 / fan_in)
    return Parameter(rng.standard_normal(shape) * std, name=name)


def zeros(shape: tuple[int, ...], name: str) -> Parameter:
    return Parameter(np.zeros(shape), name=name)


def ones(shape: tuple[int, ...], name: str) -> Parameter:
    return Parameter(np.ones(shape), name=name)


def collect_parameters(obj) -> list[Parameter]:
    """Walk nested dataclasses/lists/tuples/dicts and return parameters in field order."""
    found: list[Parameter] = []
    seen: set[int] = set()

    def walk(node):
        if isinstance(node, Parameter):
            if id(node) not in seen:
                seen.add(id(node))
                found.append(node)
        elif dataclasses.is_dataclass(node) and not isinstance(node, type):
            for field in dataclasses.fields(node):
                walk(getattr(node, field.name))
        elif isinstance(node, (list, tuple)):
            for item in node:
                walk(item)
        elif isinstance(node, dict):
            for key in node:
                walk(node[key])

    walk(obj)
    return found
