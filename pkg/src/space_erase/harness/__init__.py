from .runner import (
    ConceptSpec,
    LayerFailures,
    RunConfig,
    RunReport,
    SweepSpec,
    bundle_zero_threshold,
    compare_uce_vs_space,
    run_erasure,
    sweep,
    sweep_to_csv,
)
from .synthetic import (
    LayerSpec,
    SyntheticSpec,
    default_layout,
    generate_synthetic_problem,
    load_concepts,
    save_concepts,
)
