"""WebAssembly binary parsing and re-encoding.

Only the code section is tokenized into instructions; every other section is
kept as an opaque payload. Sections and function bodies that were not edited
are written back verbatim, so ``encode_module(parse_module(b)) == b`` holds
even for inputs that use non-canonical LEB128 size prefixes.
"""

import copy
import struct
from dataclasses import dataclass, field

from . import opcodes as op
from .errors import InvalidModule, MalformedEncoding, MalformedModule, UnsupportedOpcode
from .leb128 import decode_sleb128, decode_uleb128, encode_uleb128

MAGIC = b"\x00asm"
VERSION = 1
HEADER = MAGIC + struct.pack("<I", VERSION)

SECTION_CUSTOM = 0
SECTION_TYPE = 1
SECTION_IMPORT = 2
SECTION_FUNCTION = 3
SECTION_GLOBAL = 6
SECTION_EXPORT = 7
SECTION_CODE = 10
MAX_SECTION_ID = 12


@dataclass
class Instruction:
    opcode: bytes
    immediates: bytes = b""

    @property
    def byte_length(self):
        return len(self.opcode) + len(self.immediates)

    @property
    def name(self):
        if self.opcode[0] == op.PREFIX_FC:
            sub, _ = decode_uleb128(self.opcode, 1)
            return op.PREFIXED_FC[sub].name
        return op.OPCODES[self.opcode[0]].name

    def to_bytes(self):
        return self.opcode + self.immediates


@dataclass
class FunctionBody:
    locals: list
    instructions: list
    modified: bool = False
    original_bytes: bytes = None  # size prefix + body, as read

    def expression_bytes(self):
        return b"".join(ins.to_bytes() for ins in self.instructions)

    def encode_body(self):
        out = bytearray(encode_uleb128(len(self.locals)))
        for count, valtype in self.locals:
            out += encode_uleb128(count)
            out.append(valtype)
        out += self.expression_bytes()
        return bytes(out)

    def encode(self):
        """Return ``(entry_bytes, expression_start)`` relative to the entry."""
        if not self.modified and self.original_bytes is not None:
            expr = self.expression_bytes()
            return self.original_bytes, len(self.original_bytes) - len(expr)
        body = self.encode_body()
        prefix = encode_uleb128(len(body))
        expr_len = sum(ins.byte_length for ins in self.instructions)
        return prefix + body, len(prefix) + len(body) - expr_len

    def local_count(self):
        return sum(count for count, _ in self.locals)


@dataclass
class CodeSection:
    functions: list = field(default_factory=list)
    count_bytes: bytes = None  # verbatim vector-length prefix

    @property
    def modified(self):
        if self.count_bytes is not None:
            count, _ = decode_uleb128(self.count_bytes)
            if count != len(self.functions):
                return True
        return any(f.modified or f.original_bytes is None for f in self.functions)


@dataclass
class RawSection:
    id: int
    payload: bytes
    original_bytes: bytes = None  # id + size prefix + payload, as read


@dataclass
class WasmModule:
    version: int = VERSION
    sections: list = field(default_factory=list)
    code: CodeSection = None

    def section(self, section_id):
        for s in self.sections:
            if s.id == section_id:
                return s
        return None

    def copy(self):
        return copy.deepcopy(self)


# -- parsing ---------------------------------------------------------------

def _uleb(data, pos, what="value"):
    try:
        return decode_uleb128(data, pos)
    except MalformedEncoding as exc:
        raise MalformedModule(f"bad {what} at offset {pos}: {exc}") from None


def read_immediates(data, pos, kind, end):
    """Return the end position of the immediate of ``kind`` starting at ``pos``."""
    if kind == op.NONE:
        return pos
    if kind in (op.U32, op.BYTE, op.I32, op.I64):
        reader = decode_sleb128 if kind in (op.I32, op.I64) else decode_uleb128
        try:
            _, n = reader(data, pos)
        except MalformedEncoding as exc:
            raise MalformedModule(f"bad immediate at offset {pos}: {exc}") from None
        return pos + n
    if kind in (op.U32X2, op.BYTE2, op.MEMARG):
        pos = read_immediates(data, pos, op.U32, end)
        return read_immediates(data, pos, op.U32, end)
    if kind == op.F32:
        return pos + 4
    if kind == op.F64:
        return pos + 8
    if kind == op.BLOCKTYPE:
        if pos >= end:
            raise MalformedModule(f"truncated block type at offset {pos}")
        if data[pos] == op.VOID_BLOCK or data[pos] in op.VALTYPES:
            return pos + 1
        return read_immediates(data, pos, op.I64, end)  # s33 type index
    if kind == op.BR_TABLE:
        count, n = _uleb(data, pos, "br_table length")
        pos += n
        for _ in range(count + 1):
            pos = read_immediates(data, pos, op.U32, end)
        return pos
    if kind == op.SELECT_T:
        count, n = _uleb(data, pos, "select type vector")
        return pos + n + count
    raise AssertionError(kind)


def parse_expression(data, pos, end):
    """Tokenize instructions from ``pos`` up to the ``end`` that closes the body."""
    instructions = []
    depth = 0
    while True:
        if pos >= end:
            raise MalformedModule(f"function body not terminated before offset {end}")
        start = pos
        code = data[pos]
        if code == op.PREFIX_FC:
            sub, n = _uleb(data, pos + 1, "prefixed opcode")
            info = op.PREFIXED_FC.get(sub)
            if info is None:
                raise UnsupportedOpcode(code, start)
            opcode_end = pos + 1 + n
        else:
            info = op.OPCODES.get(code)
            if info is None:
                raise UnsupportedOpcode(code, start)
            opcode_end = pos + 1
        pos = read_immediates(data, opcode_end, info.imm, end)
        if pos > end:
            raise MalformedModule(f"instruction at offset {start} overruns its body")
        instructions.append(Instruction(bytes(data[start:opcode_end]), bytes(data[opcode_end:pos])))
        if code in (op.BLOCK, op.LOOP, op.IF):
            depth += 1
        elif code == op.END:
            if depth == 0:
                if pos != end:
                    raise MalformedModule(f"trailing bytes after function end at offset {pos}")
                return instructions
            depth -= 1


def _parse_code(payload, base):
    count, n = _uleb(payload, 0, "function count")
    code = CodeSection(count_bytes=bytes(payload[:n]))
    pos = n
    for _ in range(count):
        entry_start = pos
        size, n = _uleb(payload, pos, "body size")
        pos += n
        body_end = pos + size
        if body_end > len(payload):
            raise MalformedModule(f"function body at offset {base + entry_start} is truncated")
        nlocals, n = _uleb(payload, pos, "locals count")
        pos += n
        locals_ = []
        for _ in range(nlocals):
            cnt, n = _uleb(payload, pos, "local count")
            pos += n
            if pos >= body_end:
                raise MalformedModule(f"truncated locals at offset {base + pos}")
            locals_.append((cnt, payload[pos]))
            pos += 1
        try:
            instructions = parse_expression(payload, pos, body_end)
        except UnsupportedOpcode as exc:
            raise UnsupportedOpcode(exc.opcode, base + exc.offset) from None
        code.functions.append(FunctionBody(locals_, instructions,
                                           original_bytes=bytes(payload[entry_start:body_end])))
        pos = body_end
    if pos != len(payload):
        raise MalformedModule("code section size does not match its contents")
    return code


def parse_module(data):
    data = bytes(data)
    if len(data) < 8:
        raise InvalidModule("input shorter than the 8-byte header")
    if data[:4] != MAGIC:
        raise InvalidModule("bad magic number")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise InvalidModule(f"unsupported binary version {version}")
    module = WasmModule(version=version)
    pos = 8
    while pos < len(data):
        start = pos
        sid = data[pos]
        if sid > MAX_SECTION_ID:
            raise MalformedModule(f"unknown section id {sid} at offset {pos}")
        size, n = _uleb(data, pos + 1, "section size")
        payload_start = pos + 1 + n
        pos = payload_start + size
        if pos > len(data):
            raise MalformedModule(f"section {sid} at offset {start} is truncated")
        section = RawSection(sid, data[payload_start:pos], data[start:pos])
        module.sections.append(section)
        if sid == SECTION_CODE:
            module.code = _parse_code(section.payload, payload_start)
    return module


# -- encoding --------------------------------------------------------------

def _encode_code(code):
    """Return ``(payload, expression_starts)`` with starts relative to the payload."""
    out = bytearray(code.count_bytes if code.count_bytes is not None and
                    decode_uleb128(code.count_bytes)[0] == len(code.functions)
                    else encode_uleb128(len(code.functions)))
    starts = []
    for fn in code.functions:
        entry, expr_start = fn.encode()
        starts.append(len(out) + expr_start)
        out += entry
    return bytes(out), starts


def encode_with_layout(module):
    """Encode ``module`` and return ``(bytes, expression_starts)``.

    ``expression_starts[i]`` is the absolute offset of the first instruction of
    defined function ``i`` in the output.
    """
    out = bytearray(MAGIC + struct.pack("<I", module.version))
    starts = []
    for section in module.sections:
        if section.id == SECTION_CODE and module.code is not None:
            payload, rel = _encode_code(module.code)
            if module.code.modified or section.original_bytes is None:
                header = bytes([SECTION_CODE]) + encode_uleb128(len(payload))
                section.payload = payload
                section.original_bytes = None
            else:
                header = section.original_bytes[:len(section.original_bytes) - len(section.payload)]
            starts = [len(out) + len(header) + r for r in rel]
            out += header + payload
        elif section.original_bytes is not None:
            out += section.original_bytes
        else:
            out += bytes([section.id]) + encode_uleb128(len(section.payload)) + section.payload
    return bytes(out), starts


def encode_module(module):
    return encode_with_layout(module)[0]


def count_instructions(module):
    if module.code is None:
        return 0
    return sum(len(fn.instructions) for fn in module.code.functions)


# -- light readers for the sections gadget insertion needs -----------------

def function_param_counts(module):
    """Parameter count of every defined function, in code-section order."""
    types = []
    sec = module.section(SECTION_TYPE)
    if sec is not None:
        data = sec.payload
        count, pos = decode_uleb128(data, 0)
        for _ in range(count):
            if data[pos] != 0x60:
                raise MalformedModule(f"unexpected type form 0x{data[pos]:02x}")
            pos += 1
            nparams, n = decode_uleb128(data, pos)
            pos += n + nparams
            nresults, n = decode_uleb128(data, pos)
            pos += n + nresults
            types.append(nparams)
    sec = module.section(SECTION_FUNCTION)
    if sec is None:
        return []
    data = sec.payload
    count, pos = decode_uleb128(data, 0)
    counts = []
    for _ in range(count):
        idx, n = decode_uleb128(data, pos)
        pos += n
        if idx >= len(types):
            raise MalformedModule(f"function references missing type {idx}")
        counts.append(types[idx])
    return counts
