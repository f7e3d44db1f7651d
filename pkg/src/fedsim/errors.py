"""Exception types shared across the simulator."""


class InputError(ValueError):
    """Bad runtime input: empty dataset, out-of-range index, mismatched sizes."""


class ConfigurationError(ValueError):
    """Invalid configuration or violated structural constraint."""


class IdxParseError(ValueError):
    """Base class for IDX file parsing failures."""


class IdxMagicError(IdxParseError):
    """IDX file has the wrong magic number."""


class IdxTruncatedError(IdxParseError):
    """IDX file is shorter than its header declares."""


class IdxCountMismatchError(IdxParseError):
    """Image and label files disagree on the sample count."""


class DegeneratePartitionError(RuntimeError):
    """Could not produce a partition where every client gets at least one sample."""


class DegenerateUpdateError(ValueError):
    """An update vector is unusable for the requested crafting step (e.g. all-zero)."""


class CraftFailureError(RuntimeError):
    """The attacker could not produce an accepted crafted update."""
