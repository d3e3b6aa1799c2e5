from .complexity import ComplexityReport, count_complexity
from .model import Network, build, derive_twin, forward, forward_batches, output_points
from .presets import CLASSIFIERS, PRESETS, preset_spec
from .spec import NetworkSpec, infer_stages, spec_json_schema
from .training import TrainConfig, accuracy, chamfer_loss, reconstruction_error, train

__all__ = [
    "CLASSIFIERS", "ComplexityReport", "Network", "NetworkSpec", "PRESETS", "TrainConfig", "accuracy", "build",
    "chamfer_loss", "count_complexity", "derive_twin", "forward", "forward_batches", "infer_stages",
    "output_points", "preset_spec", "reconstruction_error", "spec_json_schema", "train",
]
