"""Exception types shared across the package."""


class DegenerateRates(ValueError):
    """Rate combination outside the model's domain, e.g. a diverging bunching amplitude."""


class InvalidInversion(ValueError):
    """Shape parameters cannot be mapped back to a physical rate set."""


class SingularSystem(ValueError):
    """Rate matrix has no unique stationary distribution."""


class IntegrationFailure(RuntimeError):
    """Adaptive ODE integration failed to produce a solution."""


class InvalidGeometry(ValueError):
    """Detection geometry violates the leakage condition or basic bounds."""


class UnknownScenario(ValueError):
    """Preset name not recognised."""


class EmptyStream(ValueError):
    """Correlation requested on a stream without events."""


class UnsortedInput(ValueError):
    """Time tags are not in non-decreasing order."""


class SymmetryViolation(RuntimeError):
    """Swapped-input histograms are not mirror images of each other."""


class NonConvergence(RuntimeError):
    """Fit did not converge within the configured iteration budget."""


class ConfigError(ValueError):
    """Scenario configuration failed validation."""

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
