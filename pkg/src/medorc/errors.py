"""Exception types shared across the pipeline."""


class MedorcError(Exception):
    """Base class for all pipeline errors."""


class TransportError(MedorcError):
    """A backend endpoint could not be reached or returned a non-2xx status."""


class ProtocolError(MedorcError):
    """A backend responded, but the payload did not match the expected shape."""


class LeaseTimeoutError(MedorcError):
    """Timed out waiting for backend capacity."""


class LeaseError(MedorcError):
    """A generation call was made without holding a backend lease."""


class PartialGenerationError(MedorcError):
    """A multi-sample generation failed after some samples succeeded.

    Carries the successful samples so callers can decide whether to salvage.
    """

    def __init__(self, message: str, samples: list):
        super().__init__(message)
        self.samples = samples


class DegenerateDesignError(MedorcError):
    """Perturbation sampling produced a design matrix too singular to fit."""


class TicketStateError(MedorcError):
    """An operation was attempted on a review ticket in the wrong state."""


class PersistenceError(MedorcError):
    """A pipeline result could not be written to disk."""
