"""LEB128 variable-length integers as used by the WebAssembly binary format."""

from .errors import MalformedEncoding

MAX_LEB_BYTES = 10


def decode_uleb128(data, offset=0):
    """Decode an unsigned LEB128 value starting at ``offset``.

    Returns ``(value, length)``. Non-minimal encodings such as ``80 01`` are
    accepted; anything unterminated or longer than ten bytes is rejected.
    """
    if offset < 0 or offset >= len(data):
        raise MalformedEncoding(f"LEB128 offset {offset} out of bounds")
    result = shift = 0
    pos = offset
    while True:
        if pos >= len(data):
            raise MalformedEncoding(f"unterminated LEB128 at offset {offset}")
        if pos - offset >= MAX_LEB_BYTES:
            raise MalformedEncoding(f"LEB128 longer than {MAX_LEB_BYTES} bytes at offset {offset}")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            return result, pos - offset


def decode_sleb128(data, offset=0):
    if offset < 0 or offset >= len(data):
        raise MalformedEncoding(f"LEB128 offset {offset} out of bounds")
    result = shift = 0
    pos = offset
    while True:
        if pos >= len(data):
            raise MalformedEncoding(f"unterminated LEB128 at offset {offset}")
        if pos - offset >= MAX_LEB_BYTES:
            raise MalformedEncoding(f"LEB128 longer than {MAX_LEB_BYTES} bytes at offset {offset}")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            if byte & 0x40:
                result -= 1 << shift
            return result, pos - offset


def encode_uleb128(value):
    """Canonical (shortest) unsigned encoding."""
    if value < 0:
        raise ValueError("unsigned LEB128 requires a non-negative value")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def encode_sleb128(value):
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        done = (value == 0 and not byte & 0x40) or (value == -1 and byte & 0x40)
        if done:
            out.append(byte)
            return bytes(out)
        out.append(byte | 0x80)
