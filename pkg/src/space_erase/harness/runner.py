"""Multi-layer erasure runs, lambda / iteration sweeps and UCE comparisons."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from ..errors import InvalidInputError, NumericalError, SpaceEraseError
from ..objective import (
    ConceptMatrices,
    ErasureObjective,
    closed_form_uce,
    total_objective,
    zero_solution_threshold,
)
from ..solver import Algorithm, SolverConfig, solve
from ..storage import (
    DEFAULT_BLOCKS,
    LayerTensor,
    StorageReport,
    block_sparsity_report,
    read_dense,
    write_bundle,
)
from .synthetic import SyntheticSpec, _concept_columns, generate_synthetic_problem, load_concepts

logger = logging.getLogger(__name__)

SWEEP_METRICS = ("sparsity", "deployment_bytes", "zip_bytes", "wall_time", "objective")


@dataclass(frozen=True)
class ConceptSpec:
    seed: int = 0
    m: int = 154
    n_erase: int = 1
    n_preserve: int = 2
    unit_normalize: bool = True

    def generate(self) -> ConceptMatrices:
        if self.m <= 0 or self.n_erase < 0 or self.n_preserve < 0:
            raise InvalidInputError("invalid concept spec")
        rng = np.random.default_rng(self.seed)
        C_e = _concept_columns(rng, self.m, self.n_erase, self.unit_normalize)
        C_g = _concept_columns(rng, self.m, self.n_erase, self.unit_normalize)
        C_p = _concept_columns(rng, self.m, self.n_preserve, self.unit_normalize)
        return ConceptMatrices(C_e, C_g, C_p)


WeightSource = Union[str, SyntheticSpec, Sequence[LayerTensor]]
ConceptSource = Union[str, ConceptSpec, ConceptMatrices, None]


@dataclass
class RunConfig:
    """Inputs and hyper-parameters of one erasure run.

    ``weights`` is a container path, a :class:`SyntheticSpec` or an in-memory
    bundle.  ``concepts`` may be omitted only for synthetic weights, whose
    spec then also supplies the embeddings.
    """

    weights: WeightSource
    concepts: ConceptSource = None
    lam: float = 0.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    erase_scale: float = 1.0
    iterations: int = 1000
    algorithm: Algorithm = Algorithm.FISTA
    out: str | None = None
    out_format: str = "auto"
    report: str | None = None
    parallelism: int = 1
    trace_stride: int = 1
    blocks: tuple[str, ...] = DEFAULT_BLOCKS

    def __post_init__(self):
        if self.parallelism < 1:
            raise InvalidInputError("parallelism must be >= 1")
        if self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")
        if not self.lam >= 0:
            raise InvalidInputError("lambda must be >= 0")
        self.algorithm = Algorithm(self.algorithm)

    def load(self) -> tuple[list[LayerTensor], ConceptMatrices]:
        concepts = None
        if isinstance(self.weights, SyntheticSpec):
            bundle, concepts = generate_synthetic_problem(self.weights)
        elif isinstance(self.weights, (str, bytes)) or hasattr(self.weights, "__fspath__"):
            bundle = read_dense(self.weights)
        else:
            bundle = list(self.weights)
        if isinstance(self.concepts, ConceptMatrices):
            concepts = self.concepts
        elif isinstance(self.concepts, ConceptSpec):
            concepts = self.concepts.generate()
        elif self.concepts is not None:
            concepts = load_concepts(self.concepts)
        elif concepts is None:
            raise InvalidInputError("concepts are required unless weights are synthetic")
        return bundle, concepts


class LayerFailures(SpaceEraseError):
    """One or more layer solves failed; the run was aborted."""

    def __init__(self, failures: dict[str, Exception]):
        self.failures = failures
        lines = [f"{name}: {type(exc).__name__}: {exc}" for name, exc in failures.items()]
        super().__init__("layer solves failed:\n  " + "\n  ".join(lines))

    @property
    def numerical(self) -> bool:
        return any(isinstance(e, NumericalError) for e in self.failures.values())


@dataclass
class LayerResult:
    name: str
    block: str
    kind: str
    rows: int
    cols: int
    skipped: bool
    trace: dict


@dataclass
class RunReport:
    layers: list[LayerResult]
    storage: StorageReport
    wall_time: float
    solve_time: float
    lam: float
    iterations: int
    algorithm: str
    output_path: str | None = None
    edited: list[LayerTensor] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "iterations": self.iterations,
            "algorithm": self.algorithm,
            "wall_time": self.wall_time,
            "solve_time": self.solve_time,
            "output_path": self.output_path,
            "layers": [asdict(l) for l in self.layers],
            "storage": self.storage.to_dict(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def _objective(cfg: RunConfig, W0: np.ndarray, concepts: ConceptMatrices) -> ErasureObjective:
    return ErasureObjective(W0.astype(np.float64), concepts, cfg.lambda1, cfg.lambda2,
                            cfg.erase_scale)


def bundle_zero_threshold(cfg: RunConfig) -> float:
    """Smallest shared lambda that zeroes every layer of the run."""
    bundle, concepts = cfg.load()
    if concepts.n_erase == 0:
        return 0.0
    return max((zero_solution_threshold(_objective(cfg, t.dense(), concepts)) for t in bundle),
               default=0.0)


def _map_layers(fn, bundle: list[LayerTensor], parallelism: int) -> list:
    """Apply ``fn`` per layer, collecting every failure before aborting."""
    def guarded(t):
        try:
            return fn(t), None
        except Exception as exc:  # noqa: BLE001 -- reported per layer
            return None, exc

    if parallelism == 1:
        outcomes = [guarded(t) for t in bundle]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(guarded, bundle))
    failures = {t.name: exc for t, (_, exc) in zip(bundle, outcomes) if exc is not None}
    if failures:
        raise LayerFailures(failures)
    return [res for res, _ in outcomes]


def _solve_bundle(cfg: RunConfig, bundle, concepts, solver_cfg: SolverConfig):
    def one(t: LayerTensor):
        W0 = t.dense()
        if concepts.n_erase == 0:
            # nothing to erase: the layer is passed through untouched
            return W0, None
        obj = _objective(cfg, W0, concepts)
        W, trace = solve(obj, solver_cfg)
        return W.astype(np.float32), trace

    return _map_layers(one, bundle, cfg.parallelism)


def run_erasure(cfg: RunConfig, *, with_zip: bool = True) -> RunReport:
    """Solve every matrix of the bundle independently with a shared lambda."""
    start = time.perf_counter()
    bundle, concepts = cfg.load()
    solver_cfg = SolverConfig(cfg.algorithm, cfg.iterations, cfg.lam,
                              trace_stride=cfg.trace_stride)
    solve_start = time.perf_counter()
    results = _solve_bundle(cfg, bundle, concepts, solver_cfg)
    solve_time = time.perf_counter() - solve_start

    edited, layers = [], []
    for t, (W, trace) in zip(bundle, results):
        edited.append(LayerTensor(t.name, t.block, t.kind, W))
        summary = trace.summary() if trace is not None else {"iterations": 0}
        layers.append(LayerResult(t.name, t.block, t.kind, *t.shape, trace is None, summary))

    if cfg.out is not None:
        write_bundle(edited, cfg.out, cfg.out_format, cfg.blocks)
    storage = block_sparsity_report(edited, cfg.blocks, with_zip=with_zip, path=cfg.out)
    report = RunReport(layers, storage, time.perf_counter() - start, solve_time, cfg.lam,
                       cfg.iterations, cfg.algorithm.value, cfg.out, edited)
    if cfg.report is not None:
        report.to_json(cfg.report)
    return report


@dataclass(frozen=True)
class SweepSpec:
    lambda_grid: tuple[float, ...]
    iteration_grid: tuple[int, ...]
    metrics: tuple[str, ...] = SWEEP_METRICS

    def __post_init__(self):
        for name in ("lambda_grid", "iteration_grid"):
            grid = tuple(getattr(self, name))
            object.__setattr__(self, name, grid)
            if not grid:
                raise InvalidInputError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise InvalidInputError(f"{name} must be strictly increasing")
        unknown = set(self.metrics) - set(SWEEP_METRICS)
        if unknown or not self.metrics:
            raise InvalidInputError(f"unknown or empty metrics: {sorted(unknown)}")
        # canonical column order
        object.__setattr__(self, "metrics", tuple(m for m in SWEEP_METRICS if m in self.metrics))

    @property
    def header(self) -> list[str]:
        return ["lambda", "iterations", *self.metrics]


def sweep(cfg: RunConfig, spec: SweepSpec) -> list[dict]:
    """One row per (lambda, iterations) pair, lambda-major, in grid order."""
    bundle, concepts = cfg.load()
    want_zip = "zip_bytes" in spec.metrics
    rows = []
    for lam in spec.lambda_grid:
        for iters in spec.iteration_grid:
            run_cfg = RunConfig(bundle, concepts, lam, cfg.lambda1, cfg.lambda2, cfg.erase_scale,
                                iters, cfg.algorithm, parallelism=cfg.parallelism,
                                trace_stride=max(iters, 1), blocks=cfg.blocks)
            rep = run_erasure(run_cfg, with_zip=want_zip)
            values = {
                "sparsity": rep.storage.global_sparsity,
                "deployment_bytes": rep.storage.deployment_bytes,
                "zip_bytes": rep.storage.zip_bytes,
                "wall_time": rep.wall_time,
                "objective": _bundle_objective(cfg, bundle, concepts, rep.edited, lam),
            }
            rows.append({"lambda": lam, "iterations": iters,
                         **{m: values[m] for m in spec.metrics}})
    return rows


def _bundle_objective(cfg, bundle, concepts, edited, lam) -> float:
    total = 0.0
    for t, e in zip(bundle, edited):
        obj = _objective(cfg, t.dense(), concepts)
        total += total_objective(obj, e.dense().astype(np.float64), lam)
    return total


def sweep_to_csv(rows: list[dict], spec: SweepSpec, path=None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=spec.header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def compare_uce_vs_space(cfg: RunConfig) -> dict:
    """Per-layer distance between UCE and unpenalized SPACE, plus storage deltas at ``cfg.lam``."""
    bundle, concepts = cfg.load()
    base = SolverConfig(cfg.algorithm, cfg.iterations, 0.0, record_trace=False)
    sparse = SolverConfig(cfg.algorithm, cfg.iterations, cfg.lam, record_trace=False)

    def one(t: LayerTensor):
        W0 = t.dense()
        if concepts.n_erase == 0:
            return W0, W0, W0, 0.0
        obj = _objective(cfg, W0, concepts)
        uce = closed_form_uce(obj)
        W_plain, _ = solve(obj, base)
        W_sparse, _ = solve(obj, sparse)
        rel = float(np.linalg.norm(uce - W_plain) / max(np.linalg.norm(uce), np.finfo(float).tiny))
        return uce.astype(np.float32), W_plain.astype(np.float32), W_sparse.astype(np.float32), rel

    results = _map_layers(one, bundle, cfg.parallelism)
    uce_b = [LayerTensor(t.name, t.block, t.kind, r[0]) for t, r in zip(bundle, results)]
    space_b = [LayerTensor(t.name, t.block, t.kind, r[2]) for t, r in zip(bundle, results)]
    uce_rep = block_sparsity_report(uce_b, cfg.blocks, with_zip=False)
    space_rep = block_sparsity_report(space_b, cfg.blocks, with_zip=False)
    layers = []
    for t, r, u, s in zip(bundle, results, uce_rep.layers, space_rep.layers):
        layers.append({
            "name": t.name,
            "block": t.block,
            "kind": t.kind,
            "uce_vs_space_lambda0_rel_fro": r[3],
            "uce_sparsity": u.sparsity,
            "space_sparsity": s.sparsity,
            "uce_deployment_bytes": u.deployment_bytes,
            "space_deployment_bytes": s.deployment_bytes,
            "deployment_bytes_delta": s.deployment_bytes - u.deployment_bytes,
        })
    return {
        "lambda": cfg.lam,
        "iterations": cfg.iterations,
        "max_rel_fro_lambda0": max((l["uce_vs_space_lambda0_rel_fro"] for l in layers), default=0.0),
        "uce_deployment_bytes": uce_rep.deployment_bytes,
        "space_deployment_bytes": space_rep.deployment_bytes,
        "uce_sparsity": uce_rep.global_sparsity,
        "space_sparsity": space_rep.global_sparsity,
        "layers": layers,
    }
