"""Opcode table: mnemonic, immediate layout and (where fixed) stack effect.

Covers WebAssembly 1.0 plus the sign-extension, saturating truncation,
bulk-memory and basic reference-type instructions that current toolchains
emit by default. SIMD (0xFD) and threads (0xFE) are deliberately absent.
"""

from collections import namedtuple

OpInfo = namedtuple("OpInfo", ["name", "imm", "effect"])

# immediate kinds
NONE = "none"
BLOCKTYPE = "blocktype"
U32 = "u32"
U32X2 = "u32x2"
BR_TABLE = "br_table"
MEMARG = "memarg"
BYTE = "byte"
BYTE2 = "byte2"
I32 = "i32"
I64 = "i64"
F32 = "f32"
F64 = "f64"
SELECT_T = "select_t"

BLOCK, LOOP, IF, ELSE, END = 0x02, 0x03, 0x04, 0x05, 0x0B
BR_IF = 0x0D
DROP = 0x1A
LOCAL_GET, LOCAL_SET, LOCAL_TEE = 0x20, 0x21, 0x22
F64_CONST = 0x44
F64_ADD, F64_DIV, F64_GT = 0xA0, 0xA3, 0x64
PREFIX_FC = 0xFC
VOID_BLOCK = 0x40

VALTYPES = {0x7F: "i32", 0x7E: "i64", 0x7D: "f32", 0x7C: "f64", 0x70: "funcref", 0x6F: "externref"}
F64_TYPE = 0x7C

OPCODES = {
    0x00: OpInfo("unreachable", NONE, None),
    0x01: OpInfo("nop", NONE, (0, 0)),
    0x02: OpInfo("block", BLOCKTYPE, None),
    0x03: OpInfo("loop", BLOCKTYPE, None),
    0x04: OpInfo("if", BLOCKTYPE, None),
    0x05: OpInfo("else", NONE, None),
    0x0B: OpInfo("end", NONE, None),
    0x0C: OpInfo("br", U32, None),
    0x0D: OpInfo("br_if", U32, (1, 0)),
    0x0E: OpInfo("br_table", BR_TABLE, None),
    0x0F: OpInfo("return", NONE, None),
    0x10: OpInfo("call", U32, None),
    0x11: OpInfo("call_indirect", U32X2, None),
    0x1A: OpInfo("drop", NONE, (1, 0)),
    0x1B: OpInfo("select", NONE, (3, 1)),
    0x1C: OpInfo("select_t", SELECT_T, (3, 1)),
    0x20: OpInfo("local.get", U32, (0, 1)),
    0x21: OpInfo("local.set", U32, (1, 0)),
    0x22: OpInfo("local.tee", U32, (1, 1)),
    0x23: OpInfo("global.get", U32, (0, 1)),
    0x24: OpInfo("global.set", U32, (1, 0)),
    0x25: OpInfo("table.get", U32, (1, 1)),
    0x26: OpInfo("table.set", U32, (2, 0)),
    0x3F: OpInfo("memory.size", BYTE, (0, 1)),
    0x40: OpInfo("memory.grow", BYTE, (1, 1)),
    0x41: OpInfo("i32.const", I32, (0, 1)),
    0x42: OpInfo("i64.const", I64, (0, 1)),
    0x43: OpInfo("f32.const", F32, (0, 1)),
    0x44: OpInfo("f64.const", F64, (0, 1)),
    0xD0: OpInfo("ref.null", BYTE, (0, 1)),
    0xD1: OpInfo("ref.is_null", NONE, (1, 1)),
    0xD2: OpInfo("ref.func", U32, (0, 1)),
}

_LOADS = ["i32.load", "i64.load", "f32.load", "f64.load",
          "i32.load8_s", "i32.load8_u", "i32.load16_s", "i32.load16_u",
          "i64.load8_s", "i64.load8_u", "i64.load16_s", "i64.load16_u",
          "i64.load32_s", "i64.load32_u"]
_STORES = ["i32.store", "i64.store", "f32.store", "f64.store",
           "i32.store8", "i32.store16", "i64.store8", "i64.store16", "i64.store32"]
for _i, _n in enumerate(_LOADS):
    OPCODES[0x28 + _i] = OpInfo(_n, MEMARG, (1, 1))
for _i, _n in enumerate(_STORES):
    OPCODES[0x36 + _i] = OpInfo(_n, MEMARG, (2, 0))

# numeric instructions: contiguous runs with a shared stack effect
_NUMERIC = [
    (0x45, ["i32.eqz"], (1, 1)),
    (0x46, ["i32.eq", "i32.ne", "i32.lt_s", "i32.lt_u", "i32.gt_s", "i32.gt_u",
            "i32.le_s", "i32.le_u", "i32.ge_s", "i32.ge_u"], (2, 1)),
    (0x50, ["i64.eqz"], (1, 1)),
    (0x51, ["i64.eq", "i64.ne", "i64.lt_s", "i64.lt_u", "i64.gt_s", "i64.gt_u",
            "i64.le_s", "i64.le_u", "i64.ge_s", "i64.ge_u"], (2, 1)),
    (0x5B, ["f32.eq", "f32.ne", "f32.lt", "f32.gt", "f32.le", "f32.ge"], (2, 1)),
    (0x61, ["f64.eq", "f64.ne", "f64.lt", "f64.gt", "f64.le", "f64.ge"], (2, 1)),
    (0x67, ["i32.clz", "i32.ctz", "i32.popcnt"], (1, 1)),
    (0x6A, ["i32.add", "i32.sub", "i32.mul", "i32.div_s", "i32.div_u", "i32.rem_s",
            "i32.rem_u", "i32.and", "i32.or", "i32.xor", "i32.shl", "i32.shr_s",
            "i32.shr_u", "i32.rotl", "i32.rotr"], (2, 1)),
    (0x79, ["i64.clz", "i64.ctz", "i64.popcnt"], (1, 1)),
    (0x7C, ["i64.add", "i64.sub", "i64.mul", "i64.div_s", "i64.div_u", "i64.rem_s",
            "i64.rem_u", "i64.and", "i64.or", "i64.xor", "i64.shl", "i64.shr_s",
            "i64.shr_u", "i64.rotl", "i64.rotr"], (2, 1)),
    (0x8B, ["f32.abs", "f32.neg", "f32.ceil", "f32.floor", "f32.trunc", "f32.nearest",
            "f32.sqrt"], (1, 1)),
    (0x92, ["f32.add", "f32.sub", "f32.mul", "f32.div", "f32.min", "f32.max",
            "f32.copysign"], (2, 1)),
    (0x99, ["f64.abs", "f64.neg", "f64.ceil", "f64.floor", "f64.trunc", "f64.nearest",
            "f64.sqrt"], (1, 1)),
    (0xA0, ["f64.add", "f64.sub", "f64.mul", "f64.div", "f64.min", "f64.max",
            "f64.copysign"], (2, 1)),
    (0xA7, ["i32.wrap_i64", "i32.trunc_f32_s", "i32.trunc_f32_u", "i32.trunc_f64_s",
            "i32.trunc_f64_u", "i64.extend_i32_s", "i64.extend_i32_u", "i64.trunc_f32_s",
            "i64.trunc_f32_u", "i64.trunc_f64_s", "i64.trunc_f64_u", "f32.convert_i32_s",
            "f32.convert_i32_u", "f32.convert_i64_s", "f32.convert_i64_u", "f32.demote_f64",
            "f64.convert_i32_s", "f64.convert_i32_u", "f64.convert_i64_s",
            "f64.convert_i64_u", "f64.promote_f32", "i32.reinterpret_f32",
            "i64.reinterpret_f64", "f32.reinterpret_i32", "f64.reinterpret_i64"], (1, 1)),
    (0xC0, ["i32.extend8_s", "i32.extend16_s", "i64.extend8_s", "i64.extend16_s",
            "i64.extend32_s"], (1, 1)),
]
for _start, _names, _eff in _NUMERIC:
    for _i, _n in enumerate(_names):
        OPCODES[_start + _i] = OpInfo(_n, NONE, _eff)

# 0xFC-prefixed instructions, keyed by sub-opcode
PREFIXED_FC = {}
for _i, _n in enumerate(["i32.trunc_sat_f32_s", "i32.trunc_sat_f32_u", "i32.trunc_sat_f64_s",
                         "i32.trunc_sat_f64_u", "i64.trunc_sat_f32_s", "i64.trunc_sat_f32_u",
                         "i64.trunc_sat_f64_s", "i64.trunc_sat_f64_u"]):
    PREFIXED_FC[_i] = OpInfo(_n, NONE, (1, 1))
PREFIXED_FC.update({
    8: OpInfo("memory.init", U32X2, (3, 0)),
    9: OpInfo("data.drop", U32, (0, 0)),
    10: OpInfo("memory.copy", BYTE2, (3, 0)),
    11: OpInfo("memory.fill", BYTE, (3, 0)),
    12: OpInfo("table.init", U32X2, (3, 0)),
    13: OpInfo("elem.drop", U32, (0, 0)),
    14: OpInfo("table.copy", U32X2, (3, 0)),
    15: OpInfo("table.grow", U32, (2, 1)),
    16: OpInfo("table.size", U32, (0, 1)),
    17: OpInfo("table.fill", U32, (3, 0)),
})

BY_NAME = {info.name: op for op, info in OPCODES.items()}
