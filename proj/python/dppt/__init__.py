"""Token-pruned pose transformer with self-distillation (DPPT).

Thin Python layer over the C++ core: model construction and inference,
HTI pruning utilities, synthetic data generation, training, PCKh and
analytical FLOPs reporting.
"""

from ._dppt import (
    ConfigError,
    FormatError,
    Model,
    ModelConfig,
    evaluate,
    flops,
    flops_sweep,
    gen_data,
    generate_samples,
    hti_score,
    keep_count,
    parameter_count,
    pckh,
    render_target,
    retention_schedule,
    train,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Model",
    "ModelConfig",
    "evaluate",
    "flops",
    "flops_sweep",
    "gen_data",
    "generate_samples",
    "hti_score",
    "keep_count",
    "parameter_count",
    "pckh",
    "render_target",
    "retention_schedule",
    "train",
]
