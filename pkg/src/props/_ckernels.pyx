# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twin of props._pykernels. Same contract, same bytes.

Keep the two implementations in lockstep: any observable divergence is a
bug caught by tests/test_kernels_parity.py.
"""

from props.errors import NonCanonicalValue

from libc.stdint cimport int64_t, uint64_t

cdef extern from *:
    ctypedef long long int128_t "__int128"

BACKEND_NAME = "cython"

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

Q_FRAC_BITS = 32
Q_ONE = 1 << 32

cdef int64_t _I64_MAX = 9223372036854775807
cdef int64_t _I64_MIN = (-9223372036854775807) - 1
cdef int128_t _I128_I64_MAX = <int128_t>_I64_MAX
cdef int128_t _I128_I64_MIN = <int128_t>_I64_MIN

_PY_INT64_MIN = INT64_MIN
_PY_INT64_MAX = INT64_MAX

_SHORT_ESCAPES = {
    0x08: "\\b",
    0x09: "\\t",
    0x0A: "\\n",
    0x0C: "\\f",
    0x0D: "\\r",
    0x22: '\\"',
    0x5C: "\\\\",
}


cdef void _escape_string(str s, list out):
    cdef Py_ssize_t i, n, start
    cdef Py_UCS4 ch
    cdef unsigned long cp
    out.append('"')
    n = len(s)
    start = 0
    for i in range(n):
        ch = s[i]
        if ch == 0x22 or ch == 0x5C or ch < 0x20:
            if start < i:
                out.append(s[start:i])
            cp = <unsigned long>ch
            esc = _SHORT_ESCAPES.get(cp)
            out.append(esc if esc is not None else "\\u%04x" % cp)
            start = i + 1
    if start < n:
        out.append(s[start:])
    out.append('"')


cdef void _encode_value(object value, list out) except *:
    cdef bint first
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
        if value < _PY_INT64_MIN or value > _PY_INT64_MAX:
            raise NonCanonicalValue(f"integer out of signed 64-bit range: {value}")
        out.append(str(value))
        return
    if isinstance(value, str):
        _escape_string(<str>value, out)
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
            _escape_string(<str>key, out)
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


def encode_canonical(doc):
    """Canonical UTF-8 bytes of a document tree. Unique per logical document."""
    cdef list out = []
    _encode_value(doc, out)
    try:
        return "".join(out).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise NonCanonicalValue(f"string is not valid UTF-8: {exc}") from exc


cdef inline int64_t _sat128(int128_t v):
    if v > _I128_I64_MAX:
        return _I64_MAX
    if v < _I128_I64_MIN:
        return _I64_MIN
    return <int64_t>v


cdef inline int64_t _q_mul_c(int64_t a, int64_t b):
    cdef int128_t p = (<int128_t>a) * (<int128_t>b)
    cdef int128_t q = p >> 32
    cdef uint64_t rem = <uint64_t>(p - (q << 32))
    if rem > <uint64_t>0x80000000u:
        q += 1
    elif rem == <uint64_t>0x80000000u:
        q += q & 1
    return _sat128(q)


def q_sat(v):
    if v > _PY_INT64_MAX:
        return _PY_INT64_MAX
    if v < _PY_INT64_MIN:
        return _PY_INT64_MIN
    return v


def q_add(long long a, long long b):
    return _sat128((<int128_t>a) + (<int128_t>b))


def q_from_int(long long n):
    return _sat128((<int128_t>n) << 32)


def q_mul(long long a, long long b):
    return _q_mul_c(a, b)


def q_dot(weights, features, long long bias):
    """Saturating fold: sum of rounded products, then the bias term."""
    cdef int64_t acc = 0
    cdef int64_t w, f
    for wv, fv in zip(weights, features):
        w = <long long>wv
        f = <long long>fv
        acc = _sat128((<int128_t>acc) + (<int128_t>_q_mul_c(w, f)))
    return _sat128((<int128_t>acc) + (<int128_t>bias))
