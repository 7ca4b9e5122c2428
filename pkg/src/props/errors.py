"""Exception types shared across the pipeline modules.

Verification routines never raise these for untrusted input; they return
reason codes inside reports instead. Exceptions are for local misuse
(bad arguments, broken preconditions) and for transport failures.
"""


class PropsError(Exception):
    """Base class for every error raised by this package."""


# --- canonical encoding / core ---------------------------------------------

class NonCanonicalValue(PropsError):
    """A value cannot be represented in (or parsed from) the canonical encoding."""


class UnknownKey(PropsError):
    """A key is missing, has the wrong role, or does not match the identity."""


# --- wire / source ----------------------------------------------------------

class WireError(PropsError):
    """Base class for transport-level failures."""


class ConnectFailure(WireError):
    pass


class BindFailure(WireError):
    pass


class MalformedFrame(WireError):
    pass


class AuthDenied(WireError):
    pass


class NotFound(WireError):
    pass


# --- attestor ----------------------------------------------------------------

class AttestorUnavailable(PropsError):
    pass


class MissingSourceSignature(PropsError):
    pass


class BadSourceSignature(PropsError):
    pass


# --- filters -----------------------------------------------------------------

class ParamSchemaMismatch(PropsError):
    """Filter parameters do not match the schema of the filter kind."""


class PathError(PropsError):
    """Base class for content-path failures inside a filter."""


class PathMissing(PathError):
    """A mutate-kind filter addressed a path that does not resolve."""


class PathTypeMismatch(PathError):
    """A path resolved to a value of the wrong type for the filter kind."""


class OutputMismatch(PropsError):
    """A caller-supplied output does not equal the recomputed transform output."""


# --- pinned execution ---------------------------------------------------------

class LengthMismatch(PropsError):
    """Weight vector length differs from the feature path list."""


class UnknownTransform(PropsError):
    """A preprocessing transform id is not in the registry."""


class InexactValue(PropsError):
    """A decimal string is not exactly representable in Q32.32."""


class FeaturePathError(PropsError):
    """A feature path did not resolve to an integer."""


class Overflow(PropsError):
    """Strict-mode arithmetic left the representable Q32.32 range."""


class WeightsDigestMismatch(PropsError):
    """Supplied weights do not hash to the digest pinned in the spec."""


class UnknownService(PropsError):
    """The executor does not operate the requested service id."""


# --- chain / delivery ----------------------------------------------------------

class DecryptFailure(PropsError):
    """Sealed payload could not be opened (wrong key or tampered ciphertext)."""


class ParseError(PropsError):
    """An exported artifact could not be parsed back into its object form."""


# --- harness --------------------------------------------------------------------

class ConfigError(PropsError):
    pass


class UnknownAttack(PropsError):
    pass


class Exists(PropsError):
    """A key name is already taken on disk."""
