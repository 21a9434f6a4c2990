import math
import struct

import numpy as np
import pytest

from madvex.errors import InvalidDensity, NotInstrumentable
from madvex.gadgets import (GadgetKind, PayloadMap, gadget_bytes, gadget_count_for,
                            insert_gadgets, make_or_gadget, make_se_gadget, payload_starts,
                            verify_stack_neutrality, write_payloads)
from madvex.wasm import count_instructions, encode_module, parse_module
from test_wasm import HEADER, NOP_MODULE

# f64.const 0; drop
SE_ZERO = bytes.fromhex("44 0000000000000000 1a")
# loop; local.get 2; f64.const 0; f64.add; local.tee 2; local.get 2; f64.div;
# f64.const 42; f64.gt; br_if 0; end
OR_ZERO_L2 = bytes.fromhex(
    "03 40 20 02 44 0000000000000000 a0 22 02 20 02 a3"
    "44 0000000000004540 64 0d 00 0b")


class TestTemplates:
    def test_se_bytes(self):
        assert gadget_bytes(make_se_gadget(bytes(8))) == SE_ZERO
        assert len(SE_ZERO) == 10

    def test_or_bytes(self):
        assert gadget_bytes(make_or_gadget(bytes(8), 2)) == OR_ZERO_L2
        assert len(OR_ZERO_L2) == 32

    def test_or_constant_is_42(self):
        assert struct.unpack("<d", OR_ZERO_L2[-12:-4])[0] == 42.0

    def test_or_wide_local_index(self):
        raw = gadget_bytes(make_or_gadget(bytes(8), 200))
        assert len(raw) == 35  # three local references, one extra LEB byte each
        assert raw[2:5] == bytes([0x20, 0xC8, 0x01])

    def test_payload_length_checked(self):
        with pytest.raises(ValueError):
            make_se_gadget(b"\x00" * 7)

    @pytest.mark.parametrize("payload", [bytes(8), b"\xff" * 8, struct.pack("<d", math.nan)])
    def test_stack_neutral(self, payload):
        assert verify_stack_neutrality(gadget_bytes(make_se_gadget(payload)))
        assert verify_stack_neutrality(gadget_bytes(make_or_gadget(payload, 5)))

    @pytest.mark.parametrize("raw", [
        b"\x41\x01",          # i32.const 1 leaves a value
        b"\x1a",              # drop underflows
        b"\x0c\x00",          # br is not straight-line
        b"\x02\x7f\x41\x01\x0b",  # typed block
        b"\x03\x40",          # unterminated loop
    ])
    def test_not_stack_neutral(self, raw):
        assert not verify_stack_neutrality(raw)


class TestCount:
    @pytest.mark.parametrize("density,n,expected", [
        (0.02, 1000, 20), (0.02, 1049, 20), (0.02, 10, 1), (1.0, 7, 7), (0.5, 3, 1),
        (1e-9, 5, 1),
    ])
    def test_formula(self, density, n, expected):
        assert gadget_count_for(density, n) == expected

    @pytest.mark.parametrize("density", [0.0, -0.1, 1.5, math.nan])
    def test_invalid(self, density):
        with pytest.raises(InvalidDensity) as info:
            gadget_count_for(density, 100)
        assert info.value.exit_code == 5


class TestInsert:
    def test_single_se_on_nop(self):
        m, pmap = insert_gadgets(parse_module(NOP_MODULE), GadgetKind.SE, 0.01, seed=0)
        out = encode_module(m)
        assert pmap.gadget_count == 1
        assert len(out) == len(NOP_MODULE) + 10
        assert len(pmap.offsets) == 8
        assert all(out[o] == 0x80 for o in pmap.offsets)
        assert out[pmap.offsets[0] - 1] == 0x44 and out[pmap.offsets[-1] + 1] == 0x1A

    def test_input_not_mutated(self):
        m = parse_module(NOP_MODULE)
        insert_gadgets(m, "or", 1.0)
        assert encode_module(m) == NOP_MODULE

    def test_no_code_section(self):
        with pytest.raises(NotInstrumentable) as info:
            insert_gadgets(parse_module(HEADER), "se", 0.1)
        assert info.value.exit_code == 4

    def test_deterministic(self, small_corpus):
        data = small_corpus[0].data
        a = insert_gadgets(parse_module(data), "se", 0.05, seed=3)
        b = insert_gadgets(parse_module(data), "se", 0.05, seed=3)
        c = insert_gadgets(parse_module(data), "se", 0.05, seed=4)
        assert encode_module(a[0]) == encode_module(b[0])
        assert a[1].offsets == b[1].offsets
        assert a[1].offsets != c[1].offsets

    @pytest.mark.parametrize("kind", ["se", "or"])
    def test_offsets_address_payloads(self, small_corpus, kind):
        for s in small_corpus[:4]:
            m, pmap = insert_gadgets(parse_module(s.data), kind, 0.1, seed=1)
            out = encode_module(m)
            starts = payload_starts(pmap.offsets)
            assert len(starts) == pmap.gadget_count
            assert pmap.offsets == sorted(set(pmap.offsets))
            for st in starts:
                assert out[st - 1] == 0x44
                assert out[st:st + 8] == b"\x80" * 8
                assert out[st + 8] == (0x1A if kind == "se" else 0xA0)

    def test_counts_and_sizes(self, small_corpus):
        for s in small_corpus:
            m = parse_module(s.data)
            n_before = count_instructions(m)
            out, pmap = insert_gadgets(m, "se", 0.02)
            assert pmap.gadget_count == max(1, int(0.02 * n_before))
            assert count_instructions(out) == n_before + 2 * pmap.gadget_count

    def test_or_adds_one_scratch_local_per_function(self, programs):
        m = parse_module(programs["recursion"])  # $fib(1 param), $ack(2 params), main
        before = [list(f.locals) for f in m.code.functions]
        out, pmap = insert_gadgets(m, "or", 1.0, seed=0)
        for fn, old in zip(out.code.functions, before):
            assert fn.locals == old + [(1, 0x7C)]
        for fidx, expected in [(0, 1), (1, 2), (2, 0)]:
            gets = [i for i in out.code.functions[fidx].instructions if i.opcode == b"\x22"]
            assert {g.immediates[0] for g in gets} == {expected}

    def test_end_stays_last(self, small_corpus):
        m, _ = insert_gadgets(parse_module(small_corpus[1].data), "or", 1.0)
        for fn in m.code.functions:
            assert fn.instructions[-1].opcode == b"\x0b"
        blob = encode_module(m)
        assert encode_module(parse_module(blob)) == blob

    @pytest.mark.parametrize("kind", ["se", "or"])
    def test_validates(self, small_corpus, kind):
        wasmtime = pytest.importorskip("wasmtime")
        for s in small_corpus[:3]:
            m, _ = insert_gadgets(parse_module(s.data), kind, 0.1, seed=2)
            wasmtime.Module.validate(wasmtime.Engine(), encode_module(m))


class TestPayloadMap:
    def test_json_round_trip(self, small_corpus):
        _, pmap = insert_gadgets(parse_module(small_corpus[0].data), "or", 0.01, seed=9)
        back = PayloadMap.from_json(pmap.to_json())
        assert back.offsets == pmap.offsets
        assert back.kind is GadgetKind.OR
        assert back.rng_seed == 9 and back.gadget_count == pmap.gadget_count

    def test_write_payloads(self, small_corpus):
        m, pmap = insert_gadgets(parse_module(small_corpus[0].data), "se", 0.01, seed=1)
        blob = encode_module(m)
        rng = np.random.default_rng(0)
        pats = [rng.bytes(8) for _ in range(pmap.gadget_count)]
        out = write_payloads(blob, pmap.offsets, pats)
        assert len(out) == len(blob)
        diff = [i for i in range(len(blob)) if blob[i] != out[i]]
        assert set(diff) <= set(pmap.offsets)
        for st, p in zip(payload_starts(pmap.offsets), pats):
            assert out[st:st + 8] == p
