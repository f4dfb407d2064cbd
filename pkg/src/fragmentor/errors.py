"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input: malformed partitions, carrier mismatches, invalid config."""


class CapacityError(ValidationError):
    """A configured guard (state cap, tree cap, cell cap) was exceeded."""


class ConsistencyError(RuntimeError):
    """An internal invariant failed; indicates a bug or a degenerate input."""
