"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented invariant (bad probabilities, domain, shape)."""


class CapacityError(RuntimeError):
    """A request exceeds an exact-computation capacity limit."""


class UnderDeterminedError(ValidationError):
    """A fit was requested with fewer experiments than unknowns."""


class NonConvergenceError(RuntimeError):
    """An iterative procedure did not converge to the requested tolerance."""


class LargeStepWarning(UserWarning):
    """A single evolution step is large relative to the generator's norm."""


class IdentifiabilityWarning(UserWarning):
    """The synthesized design is rank-deficient at the true parameters."""
