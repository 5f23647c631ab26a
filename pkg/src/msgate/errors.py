"""Exception hierarchy shared across the package.

``DomainError`` is the base for everything the physics/numerics layers can
raise; the CLI maps it to exit code 1. ``ConfigInvalid`` is reserved for
configuration problems and maps to exit code 2.
"""


class DomainError(Exception):
    """Base class for domain-level failures."""


class ConfigInvalid(Exception):
    """Configuration file failed to parse or validate."""


class NonConvergence(DomainError):
    """Iterative solver exhausted its iteration budget."""


class UnstableConfiguration(DomainError):
    """Axial Hessian is not positive definite at the solution."""


class EmptyWindow(DomainError):
    """Spacing window contains fewer than two ions."""


class InvalidCount(DomainError):
    """Ion count outside the valid range for the requested quantity."""


class ZigzagInstability(DomainError):
    """A transverse mode has non-positive stiffness (chain buckles)."""


class OverlappingGates(DomainError):
    """Gate schedule entries overlap in time."""


class NoFeasibleSolution(DomainError):
    """No pulse solution satisfies the constraint at the requested sign."""


class IllConditionedPencil(DomainError):
    """Generalized eigenproblem could not be solved reliably."""


class CutoffInsufficient(DomainError):
    """Fock-space truncation too small: top level gets populated."""


class StepNotConverged(DomainError):
    """Integrator output changed too much under step halving."""


class MissingParameter(DomainError):
    """A budget entry lacks one of its required inputs."""


class MissingValue(DomainError):
    """A requirements-check row has no supplied value."""
