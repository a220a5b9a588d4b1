"""Error types shared across the pipeline.

Every error carries the name of the module that raised it so the CLI can
print an attributed message and pick the right exit code.
"""


class BloomsegError(Exception):
    """Base class; `module` names the pipeline stage that failed."""

    def __init__(self, message: str, module: str = "bloomseg"):
        super().__init__(message)
        self.module = module


class DataError(BloomsegError):
    """Invalid input data, malformed files, or contract violations (exit 3)."""


class BackendError(BloomsegError):
    """Segmentation backend failures: training, prediction, protocol (exit 4)."""
