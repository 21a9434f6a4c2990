"""Semantic-preserving gadgets that carry an 8-byte editable payload.

Two templates exist:

* size-efficient (SE): ``f64.const <payload>; drop`` -- 10 bytes.
* optimizer-resistant (OR): a loop that adds the payload to a scratch f64
  local, divides the sum by itself and branches back only if the quotient
  exceeds 42.0. ``x / x`` is 1.0 or NaN, so the branch is never taken and the
  body runs exactly once, yet an optimizer cannot prove that cheaply.
"""

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from . import opcodes as op
from .errors import InvalidDensity, MalformedModule, NotInstrumentable
from .leb128 import decode_uleb128, encode_uleb128
from .wasm import (Instruction, count_instructions, encode_with_layout, function_param_counts,
                   read_immediates)

PAYLOAD_SIZE = 8
INITIAL_PAYLOAD = b"\x80" * PAYLOAD_SIZE
FORTY_TWO = struct.pack("<d", 42.0)


class GadgetKind(str, enum.Enum):
    SE = "se"
    OR = "or"


@dataclass
class PayloadMap:
    offsets: list
    gadget_count: int
    kind: GadgetKind
    rng_seed: int
    density: float = None
    function_indices: list = field(default_factory=list)

    def to_json(self):
        return {
            "kind": self.kind.value,
            "gadget_count": self.gadget_count,
            "rng_seed": self.rng_seed,
            "density": self.density,
            "offsets": list(self.offsets),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(list(doc["offsets"]), doc["gadget_count"], GadgetKind(doc["kind"]),
                   doc["rng_seed"], doc.get("density"))


def _check_payload(payload):
    payload = bytes(payload)
    if len(payload) != PAYLOAD_SIZE:
        raise ValueError(f"payload must be {PAYLOAD_SIZE} bytes, got {len(payload)}")
    return payload


def make_se_gadget(payload=INITIAL_PAYLOAD):
    payload = _check_payload(payload)
    return [Instruction(bytes([op.F64_CONST]), payload), Instruction(bytes([op.DROP]))]


def make_or_gadget(payload=INITIAL_PAYLOAD, scratch_local_index=0):
    payload = _check_payload(payload)
    local = encode_uleb128(scratch_local_index)
    return [
        Instruction(bytes([op.LOOP]), bytes([op.VOID_BLOCK])),
        Instruction(bytes([op.LOCAL_GET]), local),
        Instruction(bytes([op.F64_CONST]), payload),
        Instruction(bytes([op.F64_ADD])),
        Instruction(bytes([op.LOCAL_TEE]), local),
        Instruction(bytes([op.LOCAL_GET]), local),
        Instruction(bytes([op.F64_DIV])),
        Instruction(bytes([op.F64_CONST]), FORTY_TWO),
        Instruction(bytes([op.F64_GT])),
        Instruction(bytes([op.BR_IF]), b"\x00"),
        Instruction(bytes([op.END])),
    ]


def gadget_bytes(instructions):
    return b"".join(i.to_bytes() for i in instructions)


def payload_index(kind):
    """Position of the payload-carrying ``f64.const`` within a gadget."""
    return 0 if kind == GadgetKind.SE else 2


def verify_stack_neutrality(data):
    """Symbolically execute ``data`` and check it leaves the stack unchanged.

    Only straight-line code and void ``block``/``loop`` constructs are
    understood; anything that makes the stack polymorphic (``br``,
    ``return``, ...) or whose effect depends on a signature makes the check
    fail conservatively.
    """
    data = bytes(data)
    height = 0
    frames = []  # stack height at each open block
    pos = 0
    while pos < len(data):
        code = data[pos]
        if code == op.PREFIX_FC:
            sub, n = decode_uleb128(data, pos + 1)
            info = op.PREFIXED_FC.get(sub)
            pos += 1 + n
        else:
            info = op.OPCODES.get(code)
            pos += 1
        if info is None:
            return False
        imm_start = pos
        pos = _skip_immediates(data, pos, info.imm)
        if pos is None:
            return False
        floor = frames[-1] if frames else 0
        if code in (op.BLOCK, op.LOOP):
            if data[imm_start] != op.VOID_BLOCK:
                return False
            frames.append(height)
        elif code == op.END:
            if not frames or height != frames.pop():
                return False
        elif info.effect is None:
            return False
        else:
            pops, pushes = info.effect
            if height - pops < floor:
                return False
            height += pushes - pops
    return height == 0 and not frames


def _skip_immediates(data, pos, kind):
    try:
        end = read_immediates(data, pos, kind, len(data))
    except (MalformedModule, IndexError):
        return None
    return end if end <= len(data) else None


def _rng_for(seed):
    return np.random.default_rng(seed)


def gadget_count_for(density, total_instructions):
    if not density > 0:
        raise InvalidDensity(f"density must be positive, got {density}")
    if density > 1:
        raise InvalidDensity(f"density must be at most 1, got {density}")
    return max(1, int(np.floor(density * total_instructions)))


def insert_gadgets(module, kind, density, seed=0):
    """Insert ``max(1, floor(density * N))`` gadgets at random instruction slots.

    A slot is the position before an existing instruction, so gadgets can be
    placed in front of the terminating ``end`` of a body but never after it.
    Returns a new module and the :class:`PayloadMap` of the encoded result.
    """
    kind = GadgetKind(kind)
    if module.code is None or not module.code.functions:
        raise NotInstrumentable("module has no defined functions to instrument")
    total = count_instructions(module)
    n = gadget_count_for(density, total)
    rng = _rng_for(seed)
    slots = np.sort(rng.choice(total, size=n, replace=False))

    out = module.copy()
    functions = out.code.functions
    bounds = np.cumsum([0] + [len(f.instructions) for f in functions])
    func_of_slot = np.searchsorted(bounds, slots, side="right") - 1

    param_counts = function_param_counts(out) if kind == GadgetKind.OR else None
    # (function index, index of payload instruction after insertion)
    payload_sites = []
    for fidx in np.unique(func_of_slot):
        fn = functions[fidx]
        local_slots = [int(s - bounds[fidx]) for s in slots[func_of_slot == fidx]]
        if kind == GadgetKind.SE:
            template = make_se_gadget
        else:
            scratch = param_counts[fidx] + fn.local_count()
            fn.locals.append((1, op.F64_TYPE))
            template = lambda p, _s=scratch: make_or_gadget(p, _s)
        new = []
        prev = 0
        sites = []
        for s in local_slots:
            new.extend(fn.instructions[prev:s])
            gadget = template(INITIAL_PAYLOAD)
            sites.append(len(new) + payload_index(kind))
            new.extend(gadget)
            prev = s
        new.extend(fn.instructions[prev:])
        fn.instructions = new
        fn.modified = True
        payload_sites.extend((int(fidx), i) for i in sites)

    _, starts = encode_with_layout(out)
    offsets = []
    positions = {}
    for fidx, idx in payload_sites:
        if fidx not in positions:
            lengths = [i.byte_length for i in functions[fidx].instructions]
            positions[fidx] = np.concatenate([[0], np.cumsum(lengths)])
        pos = starts[fidx] + int(positions[fidx][idx]) + 1
        offsets.extend(range(pos, pos + PAYLOAD_SIZE))
    pmap = PayloadMap(offsets, n, kind, seed, density,
                      [fidx for fidx, _ in payload_sites])
    return out, pmap


def payload_starts(offsets):
    """First byte offset of every gadget payload (offsets list every payload byte)."""
    return list(offsets[::PAYLOAD_SIZE])


def write_payloads(data, offsets, payloads):
    """Return ``data`` with one 8-byte payload written per gadget."""
    out = bytearray(data)
    for off, payload in zip(payload_starts(offsets), payloads, strict=True):
        out[off:off + PAYLOAD_SIZE] = _check_payload(payload)
    return bytes(out)
