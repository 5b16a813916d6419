_HESSFLOW_HOME: str = "HESSFLOW_HOME"
_DEFAULT_OUTPUT: str = "hessflow_runs/default"

SCHEMA_VERSION: int = 1
CHECKPOINT_FORMAT: str = "hessflow-checkpoint/1"
DATASET_FORMAT: str = "hessflow-dataset/1"

# Group names
OTHER_GROUP: str = "other"
HIERARCHICAL_GROUPS: tuple = ("word_attention", "sentence_attention")
SELFATTN_GROUPS: tuple = ("query_proj", "key_proj", "value_proj", "output_proj")
CROSSATTN_GROUPS: tuple = ("stream_a_attention", "stream_b_attention", "cross_attention")

MAX_PARAMETERS: int = 20_000
DENSE_GUARD: int = 2000

# Estimator defaults
LANCZOS_TOL: float = 1e-8
LANCZOS_MAX_ITERS: int = 200
HUTCHINSON_PROBES: int = 1024
FLAT_EPS: float = 1e-6
DENSE_LIMIT: int = 400
COUPLING_EPS: float = 1e-12

DEFAULT_ALPHAS: tuple = (0.0, 0.001, 0.01, 0.05, 0.1, 0.5)

# Report files
CHECKPOINT_FILE: str = "checkpoint.bin"
TRAINING_TRACE_FILE: str = "training_trace.csv"
CURVATURE_JSON: str = "curvature.json"
CURVATURE_TEXT: str = "curvature.txt"
TRIALS_CSV: str = "trials.csv"
INTERACTION_JSON: str = "interaction.json"
INTERVENTION_JSON: str = "intervention.json"
SUMMARY_FILE: str = "summary.md"
METADATA_FILE: str = "run_metadata.json"

# Exit codes
EXIT_OK: int = 0
EXIT_FAILURE: int = 1
EXIT_CONFIG: int = 2
EXIT_DIVERGENCE: int = 3
EXIT_MISSING: int = 4

# Reference (group, trace, eigs_min, eigs_max, label) rows checked by selftest
REFERENCE_CURVATURE_ROWS: tuple = (
    ("word_attention", -5.72, -0.4186, 0.4493, "concave-fragile"),
    ("sentence_attention", 2.86, -0.0007, 0.0387, "convex-stable"),
    ("spatial_attention", 1.92, -0.0004, 0.0228, "convex-stable"),
    ("temporal_attention", 4.37, 0.0095, 0.0583, "convex-stable"),
    ("cross_attention", -2.11, -0.2016, 0.1274, "concave-fragile"),
    ("query_proj", -2.24, -0.1473, 0.0611, "concave-fragile"),
    ("key_proj", 3.12, 0.0049, 0.0483, "convex-stable"),
    ("output_proj", 1.75, -0.0006, 0.0483, "convex-stable"),
)
