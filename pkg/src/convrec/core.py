"""Module contracts shared by recommenders, generators, processors and pipelines.

Every module speaks text at its boundary: ``response`` maps a Dialog (plus
runtime kwargs) to a :class:`ModuleOutput`. Tensor flow stays inside the
module, behind ``forward``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar

import numpy as np

from .protocol import Dialog
from .tokenization import CompositeTokenizer, EncodedInputs


class RegistryError(KeyError):
    pass


class UnknownModuleTypeError(RegistryError):
    pass


@dataclass(frozen=True)
class ModuleConfig:
    """Serializable module description: type identifier, version, parameters."""

    module_type: str
    version: str = "0.1.0"
    params: dict[str, Any] = field(default_factory=dict)

    def to_json_dict(self) -> dict[str, Any]:
        return {"module_type": self.module_type, "version": self.version, "params": self.params}

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "ModuleConfig":
        return cls(
            module_type=data["module_type"],
            version=data.get("version", "0.1.0"),
            params=data.get("params", {}),
        )


@dataclass(frozen=True)
class RecList:
    """Ranked (item_id, score) pairs; scores non-increasing, ids distinct."""

    items: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple((int(i), float(s)) for i, s in self.items))
        ids = [i for i, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("recommendation item ids must be distinct")
        scores = [s for _, s in self.items]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("recommendation scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.items)

    def item_ids(self) -> list[int]:
        return [i for i, _ in self.items]


@dataclass(frozen=True)
class ModuleOutput:
    """Exactly one of ``text`` (generator/processor) or ``recommendations``."""

    text: str | None = None
    recommendations: RecList | None = None

    def __post_init__(self) -> None:
        if (self.text is None) == (self.recommendations is None):
            raise ValueError("module output must carry exactly one of text/recommendations")


class BaseModule:
    """Common surface of all modules.

    Subclasses set ``module_type`` (registry key) and ``kind`` (monitor
    prefix: rec, gen or proc), implement ``response`` and, when they carry
    tensors, ``forward`` and ``state_tensors``.
    """

    module_type: ClassVar[str]
    kind: ClassVar[str]

    tokenizer: CompositeTokenizer | None = None

    @property
    def config(self) -> ModuleConfig:
        raise NotImplementedError

    def forward(
        self, inputs: EncodedInputs, labels: dict[str, np.ndarray] | None = None
    ) -> dict[str, np.ndarray]:
        raise NotImplementedError(f"{type(self).__name__} has no tensor-level forward")

    def response(
        self, dialog: Dialog, tokenizer: CompositeTokenizer | None = None, **kwargs: Any
    ) -> ModuleOutput:
        raise NotImplementedError

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {}

    def save_extra_assets(self, art_dir) -> list:
        """Write module-specific assets under ``art_dir``; return written paths."""
        return []


MODULE_REGISTRY: dict[str, type] = {}


def register_module(cls: type) -> type:
    """Class decorator adding a module (or pipeline) type to the registry."""
    key = getattr(cls, "module_type", None)
    if not key:
        raise RegistryError(f"{cls.__name__} must define module_type")
    if key in MODULE_REGISTRY and MODULE_REGISTRY[key] is not cls:
        raise RegistryError(f"module type {key!r} already registered")
    MODULE_REGISTRY[key] = cls
    return cls


def resolve_module_type(module_type: str) -> type:
    try:
        return MODULE_REGISTRY[module_type]
    except KeyError:
        raise UnknownModuleTypeError(f"unknown module type {module_type!r}") from None


RespondFn = Callable[..., ModuleOutput]
