from bloomseg.backend.base import (
    Backend,
    LossReport,
    LossWeights,
    TrainExample,
    TrainSchedule,
    combine_loss,
    lr_at,
)
from bloomseg.backend.external import ExternalBackend
from bloomseg.backend.toy import ToyBackend

__all__ = [
    "Backend",
    "LossReport",
    "LossWeights",
    "TrainExample",
    "TrainSchedule",
    "combine_loss",
    "lr_at",
    "ExternalBackend",
    "ToyBackend",
]


def make_backend(spec: str, **kwargs) -> Backend:
    """Backend factory for CLI-style specs: 'toy' or 'external:<command>'."""
    if spec == "toy":
        return ToyBackend(**kwargs)
    if spec.startswith("external:"):
        return ExternalBackend(command=spec.split(":", 1)[1], **kwargs)
    from bloomseg.errors import BackendError

    raise BackendError(f"unknown backend spec {spec!r}", "backend")
