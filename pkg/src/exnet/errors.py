"""Error taxonomy shared across modules.

The command line maps these onto exit codes: bad input 2, numeric failure 3,
artifact incompatibility 4.
"""


class ValidationError(ValueError):
    """Malformed input: config keys, dataset records, request payloads."""


class NumericsError(RuntimeError):
    """Non-finite values where finite ones are required (gradients, losses)."""


class ArtifactError(RuntimeError):
    """Persisted artifact unusable: corrupt checkpoint, vocabulary mismatch."""


class InsufficientSupportError(ValueError):
    """A support pool cannot supply the requested number of examples."""
