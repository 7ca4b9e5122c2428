"""Pure-Python kernels: canonical document encoding and Q32.32 arithmetic.

`props.kernels` picks this module or its compiled twin `props._ckernels`
at import time. The two must agree bit for bit; tests/test_kernels_parity.py
holds them to that.

Encoding rules (see PROTOCOL.md):
  objects   -> '{' k:v pairs sorted bytewise by UTF-8 key, ',' separated '}'
  arrays    -> '[' ... ']'
  strings   -> UTF-8, minimal escaping: '"', '\\', control chars < 0x20
  integers  -> base-10, signed 64-bit only
  true/false/null
  floats, non-string keys, out-of-range integers, unpaired surrogates: rejected
"""

from __future__ import annotations

from .errors import NonCanonicalValue

BACKEND_NAME = "pure-python"

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

Q_FRAC_BITS = 32
Q_ONE = 1 << Q_FRAC_BITS
_Q_HALF_REM = 1 << (Q_FRAC_BITS - 1)

_SHORT_ESCAPES = {
    0x08: "\\b",
    0x09: "\\t",
    0x0A: "\\n",
    0x0C: "\\f",
    0x0D: "\\r",
    0x22: '\\"',
    0x5C: "\\\\",
}


def _escape_string(s: str, out: list) -> None:
    out.append('"')
    start = 0
    for i, ch in enumerate(s):
        cp = ord(ch)
        if cp == 0x22 or cp == 0x5C or cp < 0x20:
            if start < i:
                out.append(s[start:i])
            esc = _SHORT_ESCAPES.get(cp)
            out.append(esc if esc is not None else "\\u%04x" % cp)
            start = i + 1
    if start < len(s):
        out.append(s[start:])
    out.append('"')


def _encode_value(value, out: list) -> None:
    if value is None:
        out.append("null")
        return
    if value is True:
        out.append("true")
        return
    if value is False:
        out.append("false")
        return
    if isinstance(value, int):
        if not (INT64_MIN <= value <= INT64_MAX):
            raise NonCanonicalValue(f"integer out of signed 64-bit range: {value}")
        out.append(str(value))
        return
    if isinstance(value, str):
        _escape_string(value, out)
        return
    if isinstance(value, float):
        raise NonCanonicalValue("floating-point values are not allowed in canonical documents")
    if isinstance(value, dict):
        out.append("{")
        first = True
        for key in sorted(value.keys()):
            if not isinstance(key, str):
                raise NonCanonicalValue(f"object key is not a string: {key!r}")
            if not first:
                out.append(",")
            first = False
            _escape_string(key, out)
            out.append(":")
            _encode_value(value[key], out)
        out.append("}")
        return
    if isinstance(value, (list, tuple)):
        out.append("[")
        first = True
        for item in value:
            if not first:
                out.append(",")
            first = False
            _encode_value(item, out)
        out.append("]")
        return
    raise NonCanonicalValue(f"type {type(value).__name__} is not canonical-encodable")


def encode_canonical(doc) -> bytes:
    """Canonical UTF-8 bytes of a document tree. Unique per logical document."""
    out: list = []
    _encode_value(doc, out)
    try:
        return "".join(out).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise NonCanonicalValue(f"string is not valid UTF-8: {exc}") from exc


# --- Q32.32 saturating fixed point -------------------------------------------
#
# A value v is represented by the signed 64-bit integer round(v * 2**32).
# Multiplication rounds to nearest, ties to even; every operation saturates
# to the representable range.

def q_sat(v: int) -> int:
    if v > INT64_MAX:
        return INT64_MAX
    if v < INT64_MIN:
        return INT64_MIN
    return v


def q_add(a: int, b: int) -> int:
    return q_sat(a + b)


def q_from_int(n: int) -> int:
    return q_sat(n << Q_FRAC_BITS)


def q_mul(a: int, b: int) -> int:
    p = a * b
    q, rem = divmod(p, Q_ONE)
    if rem > _Q_HALF_REM:
        q += 1
    elif rem == _Q_HALF_REM:
        q += q & 1
    return q_sat(q)


def q_dot(weights, features, bias: int) -> int:
    """Saturating fold: sum of rounded products, then the bias term."""
    acc = 0
    for w, f in zip(weights, features):
        acc = q_sat(acc + q_mul(w, f))
    return q_sat(acc + bias)
