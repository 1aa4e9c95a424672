"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
usage problems exit 1, numeric failures exit 2, certification violations
exit 3 and refused prunes exit 4.
"""


class ProxslimError(Exception):
    """Base class for all package errors."""


class ShapeError(ProxslimError, ValueError):
    """Operand shapes do not conform to an operation's signature."""


class ContractError(ProxslimError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ProxslimError, ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""

    def __init__(self, message, epoch=None, batch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch}" + (
                f", batch {batch})" if batch is not None else ")"
            )
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ModeError(ProxslimError, RuntimeError):
    """An operation only defined for deterministic full-batch runs was
    invoked on a stochastic run."""


class TopologyError(ProxslimError, ValueError):
    """The network layout does not support the requested transformation."""


class PruneRefusedError(ProxslimError, RuntimeError):
    """Pruning would leave a layer with zero channels."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class UsageError(ProxslimError, ValueError):
    """Bad CLI arguments or configuration."""


class CertificationError(ProxslimError, RuntimeError):
    """A certification run violated one of the checked inequalities."""
