"""Exception hierarchy for the solver stack."""


class MseLabError(Exception):
    """Base class for all package errors."""


class MetricInvalidError(MseLabError):
    """The transversal metric failed an SPD check or the conformal factor
    violated positivity / flatness-at-zero preconditions."""


class DomainEscapeError(MseLabError):
    """The conformal factor became non-positive at a sampled height."""


class NewtonDivergenceError(MseLabError):
    """Newton iteration failed to reduce the residual within the damping
    budget."""

    def __init__(self, message, last_residual=None):
        super().__init__(message)
        self.last_residual = last_residual


class SingularOperatorError(MseLabError):
    """A discrete linear operator was singular or numerically unusable."""


class StencilEscapeError(MseLabError):
    """A finite-difference stencil in the boundary-data parameters left the
    small-data regime."""


class NotClosedError(MseLabError):
    """The 1-form handed to the potential construction is not discretely
    closed."""


class IllPosedError(MseLabError):
    """Least-squares recovery was too ill-conditioned to trust."""


class StagnationError(MseLabError):
    """Gauss-Newton stopped making progress before meeting its tolerance."""

    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class AdjointConstructionError(MseLabError):
    """No boundary bump produced an adjoint solution that is usable at the
    requested interior point."""


class ConfigError(MseLabError):
    """Malformed experiment configuration or expression."""
