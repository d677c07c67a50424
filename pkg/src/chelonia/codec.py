"""Length-prefixed canonical encoding for RPC payloads.

A bencode dialect extended with ``None``, booleans, floats and raw bytes.
Dict keys are sorted, so equal values always encode to equal bytes, and a
mapping with ``k`` fixed-width items always costs ``base + k * width`` bytes.
Every encoded message starts with a one-byte schema version.
"""

from __future__ import annotations

VERSION = 1


class CodecError(ValueError):
    pass


def _enc(obj, out: list[bytes]) -> None:
    kind = type(obj)
    if kind is str:
        raw = obj.encode("utf-8")
        out.append(b"%d:" % len(raw))
        out.append(raw)
    elif kind is dict:
        out.append(b"d")
        for key in sorted(obj):
            if type(key) is not str:
                raise CodecError(f"dict keys must be str, got {type(key).__name__}")
            raw = key.encode("utf-8")
            out.append(b"%d:" % len(raw))
            out.append(raw)
            _enc(obj[key], out)
        out.append(b"e")
    elif obj is None:
        out.append(b"n")
    elif obj is True:
        out.append(b"t")
    elif obj is False:
        out.append(b"f")
    elif isinstance(obj, int):
        out.append(b"i%de" % obj)
    elif isinstance(obj, float):
        raw = repr(obj).encode()
        out.append(b"r%d:" % len(raw))
        out.append(raw)
    elif isinstance(obj, str):
        _enc(str(obj), out)
    elif isinstance(obj, (bytes, bytearray, memoryview)):
        raw = bytes(obj)
        out.append(b"b%d:" % len(raw))
        out.append(raw)
    elif isinstance(obj, (list, tuple)):
        out.append(b"l")
        for item in obj:
            _enc(item, out)
        out.append(b"e")
    elif isinstance(obj, dict):
        _enc(dict(obj), out)
    else:
        raise CodecError(f"cannot encode {type(obj).__name__}")


def _read_len(data: bytes, pos: int) -> tuple[int, int]:
    colon = data.index(b":", pos)
    return int(data[pos:colon]), colon + 1


_DIGITS = frozenset(b"0123456789")
_N, _T, _F, _I, _R, _B, _L, _D, _E = b"ntfirblde"


def _dec(data: bytes, pos: int):
    tag = data[pos]
    if tag in _DIGITS:
        colon = data.index(b":", pos)
        start = colon + 1
        end = start + int(data[pos:colon])
        if end > len(data):
            raise CodecError("truncated string")
        return data[start:end].decode("utf-8"), end
    if tag == _D:
        pos += 1
        result = {}
        while data[pos] != _E:
            key, pos = _dec(data, pos)
            result[key], pos = _dec(data, pos)
        return result, pos + 1
    if tag == _L:
        pos += 1
        items = []
        while data[pos] != _E:
            item, pos = _dec(data, pos)
            items.append(item)
        return items, pos + 1
    if tag == _N:
        return None, pos + 1
    if tag == _T:
        return True, pos + 1
    if tag == _F:
        return False, pos + 1
    if tag == _I:
        end = data.index(b"e", pos)
        return int(data[pos + 1 : end]), end + 1
    if tag == _R:
        n, start = _read_len(data, pos + 1)
        return float(data[start : start + n]), start + n
    if tag == _B:
        n, start = _read_len(data, pos + 1)
        if start + n > len(data):
            raise CodecError("truncated bytes")
        return data[start : start + n], start + n
    raise CodecError(f"bad tag {bytes([tag])!r} at offset {pos}")


def encode(obj) -> bytes:
    out = [bytes([VERSION])]
    _enc(obj, out)
    return b"".join(out)


def decode(data: bytes):
    if not data or data[0] != VERSION:
        raise CodecError("unsupported schema version")
    try:
        obj, pos = _dec(data, 1)
    except (IndexError, ValueError) as exc:
        raise CodecError(str(exc)) from exc
    if pos != len(data):
        raise CodecError("trailing bytes")
    return obj
