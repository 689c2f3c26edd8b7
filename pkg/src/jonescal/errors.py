"""Exception types shared across the toolkit."""


class JonescalError(Exception):
    """Base class for all toolkit errors."""


class SingularMatrixError(JonescalError):
    """Hermitian solve hit a pivot below tolerance (degenerate geometry)."""


class SingularNormalMatrixError(JonescalError):
    """Per-antenna normal matrix stayed singular after ridge escalation."""


class DegenerateResidualsError(JonescalError):
    """All residuals (near) zero; speckle update is undefined."""


class DegenerateGainError(JonescalError):
    """Vanishing model power on a polarization; gain update undefined."""


class DegeneratePhaseError(JonescalError):
    """Trace magnitude below tolerance; phase update undefined."""


class DegenerateGeometryError(JonescalError):
    """Antenna positions collinear in (u, v); offset fit is rank deficient."""


class ZeroSignalError(JonescalError):
    """Noise-free signal is identically zero; SNR is undefined."""


class NonFiniteError(JonescalError):
    """An update produced NaN/Inf entries."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(JonescalError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
