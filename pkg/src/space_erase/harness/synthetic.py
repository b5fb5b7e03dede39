"""Seeded synthetic weight bundles and concept embeddings.

Stands in for real U-Net projections and text-encoder embeddings.  The
default layout follows the 16 cross-attention transformers of an SD-1.x
U-Net (one K and one V matrix each), with widths scaled by ``scale``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..objective import ConceptMatrices
from ..storage import LayerTensor

# (block, output width) of each cross-attention transformer, in U-Net order
SD_CROSS_ATTENTION = (
    [("down", 320)] * 2 + [("down", 640)] * 2 + [("down", 1280)] * 2
    + [("mid", 1280)]
    + [("up", 1280)] * 3 + [("up", 640)] * 3 + [("up", 320)] * 3
)
SD_TEXT_DIM = 768


@dataclass(frozen=True)
class LayerSpec:
    name: str
    block: str
    kind: str
    rows: int


def default_layout(scale: float = 0.2) -> list[LayerSpec]:
    """32 K/V layer specs mirroring an SD-1.x U-Net, widths multiplied by ``scale``."""
    specs, counters = [], {}
    for block, width in SD_CROSS_ATTENTION:
        idx = counters.get(block, 0)
        counters[block] = idx + 1
        rows = max(1, int(round(width * scale)))
        for kind in ("K", "V"):
            specs.append(LayerSpec(f"{block}.{idx}.attn2.to_{kind.lower()}", block, kind, rows))
    return specs


def default_text_dim(scale: float = 0.2) -> int:
    return max(1, int(round(SD_TEXT_DIM * scale)))


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    m: int = field(default_factory=default_text_dim)
    layers: tuple[LayerSpec, ...] = field(default_factory=lambda: tuple(default_layout()))
    n_erase: int = 1
    n_preserve: int = 2
    unit_normalize: bool = True

    @classmethod
    def scaled(cls, scale: float = 0.2, **kwargs) -> "SyntheticSpec":
        return cls(m=default_text_dim(scale), layers=tuple(default_layout(scale)), **kwargs)


def _concept_columns(rng: np.random.Generator, m: int, n: int, unit: bool) -> np.ndarray:
    C = rng.standard_normal((m, n))
    if unit and n:
        C /= np.linalg.norm(C, axis=0, keepdims=True)
    return C


def generate_synthetic_problem(spec: SyntheticSpec) -> tuple[list[LayerTensor], ConceptMatrices]:
    """Weights are i.i.d. N(0, 1/m) stored as float32; concepts are N(0, 1) columns."""
    if spec.m <= 0 or any(l.rows <= 0 for l in spec.layers):
        raise InvalidInputError("synthetic shapes must be positive")
    if spec.n_erase < 0 or spec.n_preserve < 0:
        raise InvalidInputError("concept counts must be non-negative")
    rng = np.random.default_rng(spec.seed)
    scale = 1.0 / np.sqrt(spec.m)
    bundle = [
        LayerTensor(l.name, l.block, l.kind,
                    (rng.standard_normal((l.rows, spec.m)) * scale).astype(np.float32))
        for l in spec.layers
    ]
    C_e = _concept_columns(rng, spec.m, spec.n_erase, spec.unit_normalize)
    C_g = _concept_columns(rng, spec.m, spec.n_erase, spec.unit_normalize)
    C_p = _concept_columns(rng, spec.m, spec.n_preserve, spec.unit_normalize)
    return bundle, ConceptMatrices(C_e, C_g, C_p)


def load_concepts(path) -> ConceptMatrices:
    """Load ``erase``, ``guide`` and (optional) ``preserve`` arrays from an ``.npz``.

    Each array holds one concept embedding per column.
    """
    with np.load(path) as data:
        missing = {"erase", "guide"} - set(data.files)
        if missing:
            raise InvalidInputError(f"{path}: missing arrays {sorted(missing)}")
        C_e, C_g = data["erase"], data["guide"]
        C_p = data["preserve"] if "preserve" in data.files else np.zeros((C_e.shape[0], 0))
    return ConceptMatrices(C_e, C_g, C_p)


def save_concepts(path, concepts: ConceptMatrices) -> None:
    np.savez(path, erase=concepts.C_e, guide=concepts.C_g, preserve=concepts.C_p)
