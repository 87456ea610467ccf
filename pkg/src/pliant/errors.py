"""Exception types shared across the package.

Every error carries a short machine-parseable ``category`` used by the CLI
for single-line error reporting (``<category>: <message>``).
"""


class PliantError(Exception):
    category = "error"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


# geometry
class DegenerateRotation(PliantError):
    category = "geometry.degenerate_rotation"


# autodiff
class ShapeMismatch(PliantError):
    category = "autodiff.shape_mismatch"


class NonScalarLoss(PliantError):
    category = "autodiff.non_scalar_loss"


# diffusion
class StepOutOfRange(PliantError):
    category = "diffusion.step_out_of_range"


class StepOrderViolation(PliantError):
    category = "diffusion.step_order_violation"


class UnknownScheduleKind(PliantError):
    category = "diffusion.unknown_schedule_kind"


# policy runtime
class MissingStats(PliantError):
    category = "runtime.missing_stats"


class NoCoverage(PliantError):
    category = "runtime.no_coverage"


class EnvTerminated(PliantError):
    category = "runtime.env_terminated"


class InferenceFailure(PliantError):
    category = "runtime.inference_failure"


# compliance
class UnknownPreset(PliantError):
    category = "compliance.unknown_preset"


# simulator
class Diverged(PliantError):
    category = "sim.diverged"


# experts
class TaskMismatch(PliantError):
    category = "expert.task_mismatch"


class ExpertFailure(PliantError):
    category = "expert.failure"


# datastore / checkpoints
class CorruptFile(PliantError):
    category = "io.corrupt_file"

    def __init__(self, message: str, offset: int = -1):
        super().__init__(f"{message} (byte offset {offset})" if offset >= 0 else message)
        self.offset = offset


class VersionMismatch(PliantError):
    category = "io.version_mismatch"


class EmptyDataset(PliantError):
    category = "data.empty_dataset"


class EmptySet(PliantError):
    category = "eval.empty_set"


# cli / config
class ConfigError(PliantError):
    category = "config.invalid"

    def __init__(self, message: str, category: str = "config.invalid"):
        super().__init__(message)
        self.category = category
