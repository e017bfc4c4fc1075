from .blocks import BlockConfig, bidirectional_compose, forward_block
from .convert import convert_to_dense
from .sequence import (
    TEMPLATES,
    SequenceModel,
    Task,
    TemplateConfig,
    build_model,
    forward,
    materialize_mixers,
    parameter_census,
    predict,
)

__all__ = [
    "BlockConfig",
    "SequenceModel",
    "TEMPLATES",
    "Task",
    "TemplateConfig",
    "bidirectional_compose",
    "build_model",
    "convert_to_dense",
    "forward",
    "forward_block",
    "materialize_mixers",
    "parameter_census",
    "predict",
]
