"""Exception taxonomy shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-contract input data (bad shapes, non-finite values,
    out-of-range tokens, unparseable files)."""


class ContractViolation(RuntimeError):
    """An operation was called outside its stated precondition, e.g. a noisy
    unroll with sigma=0."""


class BudgetExceeded(RuntimeError):
    """An exact enumeration would require more paths than the budget allows."""

    def __init__(self, required_paths: int, max_paths: int):
        self.required_paths = required_paths
        self.max_paths = max_paths
        super().__init__(
            f"enumeration needs {required_paths} noise paths, "
            f"budget allows {max_paths}"
        )


class ConfigError(ValueError):
    """Run-config file problem: unknown key, missing key, or bad value."""


class CheckpointError(RuntimeError):
    """Checkpoint file cannot be read back: bad magic, version, truncation,
    or checksum mismatch."""


class NumericsError(RuntimeError):
    """A non-finite objective or gradient was produced during training."""
