"""Exception types raised by the toolkit.

Every error the command line maps to a non-zero exit code derives from
:class:`ContactWKAMError`, so callers can catch the whole family at once.
"""

from __future__ import annotations


class ContactWKAMError(Exception):
    """Base class for all toolkit errors."""


class LegendreBracketFailure(ContactWKAMError):
    """No finite bracket for the Legendre supremum; H is not superlinear in p."""


class BlowUp(ContactWKAMError):
    """An orbit left the guard box |p|, |u| <= guard."""


class DegenerateEquilibrium(ContactWKAMError):
    """The linearization at an equilibrium has an eigenvalue of (near) zero modulus."""


class WindowExhausted(ContactWKAMError):
    """A dynamic-programming step found no reached predecessor at all."""


class BracketFailure(ContactWKAMError):
    """Monotone bracket expansion could not straddle the target value."""


class Diverged(ContactWKAMError):
    """A backward action field left the guard bounds."""


class NotConverged(ContactWKAMError):
    """An iteration stopped at its time budget without meeting its tolerance."""


class NotFound(ContactWKAMError):
    """No transitive orbit was found at the requested resolution."""


class InclusionViolation(ContactWKAMError):
    """The Mather / strongly static / Aubry / Mane chain is broken at a grid point."""

    def __init__(self, message: str, index: int | None = None, position: float | None = None):
        super().__init__(message)
        self.index = index
        self.position = position


class ConfigError(ContactWKAMError):
    """A run configuration is malformed; the message names the key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
