"""Exception types and the process exit codes the CLI maps them to."""

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_THRESHOLD = 5


class PdeBlocksError(Exception):
    """Base class for package errors."""

    exit_code = EXIT_FAILURE


class ConfigError(PdeBlocksError):
    """Invalid configuration file, key, or value."""

    exit_code = EXIT_CONFIG


class DataFormatError(PdeBlocksError):
    """Corrupt or incompatible on-disk artifact (magic, version, truncation, CRC)."""

    exit_code = EXIT_DATA


class StabilityError(PdeBlocksError):
    """An explicit time step was asked to run outside its stability region."""

    exit_code = EXIT_DATA


class DivergenceError(PdeBlocksError):
    """A solve or training run produced non-finite values."""

    exit_code = EXIT_DIVERGENCE


class ThresholdError(PdeBlocksError):
    """A configured quality threshold was not met."""

    exit_code = EXIT_THRESHOLD


class DegenerateKernelError(PdeBlocksError):
    """Kernel probe returned a boundary response too small to divide by."""

    exit_code = EXIT_DATA
