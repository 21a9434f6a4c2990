import os
import sys

import pytest

from madvex import external
from madvex.errors import ExternalToolError
from test_wasm import NOP_MODULE


class TestValidate:
    def test_good_and_bad(self):
        pytest.importorskip("wasmtime")
        assert external.validate(NOP_MODULE) is True
        bad = bytearray(NOP_MODULE)
        bad[-2] = 0x6A  # i32.add on an empty stack
        assert external.validate(bytes(bad)) is False

    def test_without_wasmtime(self, monkeypatch):
        monkeypatch.setattr(external, "wasmtime", None)
        assert external.validate(NOP_MODULE) is None
        with pytest.raises(ExternalToolError):
            external.run_module(NOP_MODULE)


class TestRun:
    def test_program_state(self, programs):
        result, memory, globals_ = external.run_module(programs["hash_kernel"])
        assert isinstance(result, int)
        assert len(memory) == 65536 and "h" in globals_

    def test_trap(self):
        from conftest import wat
        blob = wat('(module (func (export "main") (result i32) unreachable))')
        assert external.run_module(blob)[0] == "trap"

    def test_module_entry(self, tmp_path, programs):
        p = tmp_path / "r.wasm"
        p.write_bytes(programs["recursion"])
        assert external.main([str(p)]) == 0
        assert external.main([]) == 2


class TestCommands:
    def test_time_runtime(self, tmp_path):
        p = tmp_path / "x.wasm"
        p.write_bytes(NOP_MODULE)
        times = external.time_runtime(f"{sys.executable} -c pass {{wasm}}", str(p), repetitions=2)
        assert len(times) == 2 and all(t > 0 for t in times)

    def test_failing_command(self, tmp_path):
        with pytest.raises(ExternalToolError):
            external.time_runtime(f"{sys.executable} -c 'raise SystemExit(3)'", "x", 1)
        with pytest.raises(ExternalToolError):
            external.time_runtime("definitely-not-a-real-binary {wasm}", "x", 1)

    def test_optimize_passthrough(self):
        cmd = f"{sys.executable} -c \"import shutil,sys; shutil.copy(sys.argv[1], sys.argv[2])\" {{in}} {{out}}"
        assert external.optimize(cmd, NOP_MODULE) == NOP_MODULE

    def test_env_names(self):
        assert external.RUNTIME_ENV == "MADVEX_RUNTIME_CMD"
        assert external.OPTIMIZER_ENV == "MADVEX_OPTIMIZER_CMD"
        assert os.environ.get("MADVEX_NOT_SET") is None
