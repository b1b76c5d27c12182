"""Exception hierarchy shared across the toolchain.

CLI maps UsageError-like argparse failures to exit 2 and everything below
to exit 1.
"""


class PanographError(Exception):
    """Base class for all toolchain errors."""


class ConfigError(PanographError):
    """Invalid configuration: unknown layout, bad channel plan, out-of-range index."""


class InputError(PanographError):
    """Invalid runtime input: empty dataset, label out of range, malformed record."""


class FormatError(PanographError):
    """Malformed binary container or JSONL stream."""


class ContractError(PanographError):
    """Internal shape/contract violation between pipeline stages."""


class TrainingError(PanographError):
    """Non-finite gradients or otherwise broken optimization state."""
