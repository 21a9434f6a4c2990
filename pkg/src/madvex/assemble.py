"""Tiny programmatic assembler for WebAssembly modules.

Used by the synthetic corpus generator and by test fixtures; it emits the
binary format directly so no external toolchain is needed.
"""

import struct

from . import opcodes as op
from .leb128 import encode_sleb128, encode_uleb128
from .wasm import HEADER, Instruction

I32, I64, F32, F64 = 0x7F, 0x7E, 0x7D, 0x7C


def ins(name, *args):
    """Build an :class:`Instruction` from its mnemonic and immediate values."""
    code = op.BY_NAME[name]
    kind = op.OPCODES[code].imm
    if kind == op.NONE:
        imm = b""
    elif kind == op.BLOCKTYPE:
        imm = bytes([args[0] if args else op.VOID_BLOCK])
    elif kind in (op.U32, op.BYTE):
        imm = encode_uleb128(args[0] if args else 0)
    elif kind == op.U32X2:
        imm = encode_uleb128(args[0]) + encode_uleb128(args[1] if len(args) > 1 else 0)
    elif kind == op.MEMARG:
        align = args[0] if args else 0
        offset = args[1] if len(args) > 1 else 0
        imm = encode_uleb128(align) + encode_uleb128(offset)
    elif kind in (op.I32, op.I64):
        imm = encode_sleb128(args[0])
    elif kind == op.F32:
        imm = struct.pack("<f", args[0])
    elif kind == op.F64:
        imm = args[0] if isinstance(args[0], bytes) else struct.pack("<d", args[0])
    elif kind == op.BR_TABLE:
        labels, default = args
        imm = encode_uleb128(len(labels)) + b"".join(encode_uleb128(x) for x in labels)
        imm += encode_uleb128(default)
    else:
        raise ValueError(f"cannot assemble {name}")
    return Instruction(bytes([code]), imm)


def _vec(items):
    return encode_uleb128(len(items)) + b"".join(items)


def _name(s):
    raw = s.encode()
    return encode_uleb128(len(raw)) + raw


def _section(sid, payload):
    return bytes([sid]) + encode_uleb128(len(payload)) + payload


class ModuleBuilder:
    def __init__(self):
        self.types = []
        self.imports = []
        self.functions = []  # (type index, locals, instructions)
        self.memory = None
        self.globals = []
        self.exports = []
        self.data = []

    def add_type(self, params, results):
        sig = (tuple(params), tuple(results))
        if sig not in self.types:
            self.types.append(sig)
        return self.types.index(sig)

    def import_function(self, module, name, params, results):
        if self.functions:
            raise ValueError("imports must be declared before defined functions")
        self.imports.append((module, name, self.add_type(params, results)))
        return len(self.imports) - 1

    def add_function(self, params, results, locals_, body, export=None):
        """``body`` excludes the terminating ``end``; returns the function index."""
        tidx = self.add_type(params, results)
        self.functions.append((tidx, list(locals_), list(body) + [ins("end")]))
        index = len(self.imports) + len(self.functions) - 1
        if export:
            self.exports.append((export, 0, index))
        return index

    def set_memory(self, pages, export=None):
        self.memory = pages
        if export:
            self.exports.append((export, 2, 0))

    def add_global(self, valtype, value, mutable=True, export=None):
        init = ins("i32.const" if valtype == I32 else "i64.const", value)
        self.globals.append(bytes([valtype, int(mutable)]) + init.to_bytes() + b"\x0b")
        index = len(self.globals) - 1
        if export:
            self.exports.append((export, 3, index))
        return index

    def add_data(self, offset, blob):
        self.data.append((offset, bytes(blob)))

    def build(self):
        out = bytearray(HEADER)
        if self.types:
            out += _section(1, _vec([b"\x60" + _vec([bytes([p]) for p in ps]) +
                                     _vec([bytes([r]) for r in rs]) for ps, rs in self.types]))
        if self.imports:
            out += _section(2, _vec([_name(m) + _name(n) + b"\x00" + encode_uleb128(t)
                                     for m, n, t in self.imports]))
        out += _section(3, _vec([encode_uleb128(t) for t, _, _ in self.functions]))
        if self.memory is not None:
            out += _section(5, _vec([b"\x00" + encode_uleb128(self.memory)]))
        if self.globals:
            out += _section(6, _vec(self.globals))
        if self.exports:
            out += _section(7, _vec([_name(n) + bytes([k]) + encode_uleb128(i)
                                     for n, k, i in self.exports]))
        bodies = []
        for _, locals_, body in self.functions:
            raw = _vec([encode_uleb128(c) + bytes([t]) for c, t in locals_])
            raw += b"".join(i.to_bytes() for i in body)
            bodies.append(encode_uleb128(len(raw)) + raw)
        out += _section(10, _vec(bodies))
        if self.data:
            out += _section(11, _vec([b"\x00" + ins("i32.const", off).to_bytes() + b"\x0b" +
                                      encode_uleb128(len(blob)) + blob
                                      for off, blob in self.data]))
        return bytes(out)
