"""Hooks to tools outside the package: a Wasm runtime, a validator, an optimizer.

The in-process runtime uses the ``wasmtime`` Python bindings when they are
installed. Command templates use ``{wasm}`` for the module to run and
``{in}``/``{out}`` for optimizer input and output paths.
"""

import os
import shlex
import subprocess
import sys
import tempfile
import time

from .errors import ExternalToolError

try:
    import wasmtime
except ImportError:  # optional
    wasmtime = None

RUNTIME_ENV = "MADVEX_RUNTIME_CMD"
OPTIMIZER_ENV = "MADVEX_OPTIMIZER_CMD"


def have_wasmtime():
    return wasmtime is not None


def _require_wasmtime():
    if wasmtime is None:
        raise ExternalToolError("the wasmtime package is not installed (pip install wasmtime)")


def validate(data):
    """True/False from the reference validator, or None when none is available."""
    if wasmtime is None:
        return None
    try:
        wasmtime.Module.validate(wasmtime.Engine(), bytes(data))
    except wasmtime.WasmtimeError:
        return False
    return True


def run_module(data, export="main", args=()):
    """Instantiate ``data`` and call ``export``.

    Returns ``(result, memory bytes, exported global values)`` so callers can
    compare whole observable states. Traps are returned as the string
    ``"trap"`` instead of a result.
    """
    _require_wasmtime()
    engine = wasmtime.Engine()
    store = wasmtime.Store(engine)
    module = wasmtime.Module(engine, bytes(data))
    instance = wasmtime.Instance(store, module, [])
    exports = instance.exports(store)
    try:
        result = exports[export](store, *args)
    except wasmtime.Trap:
        result = "trap"
    memory = b""
    globals_ = {}
    for name, item in exports.items():
        if isinstance(item, wasmtime.Memory):
            memory = bytes(item.read(store, 0, item.data_len(store)))
        elif isinstance(item, wasmtime.Global):
            globals_[name] = item.value(store)
    return result, memory, globals_


def _run(argv, timeout):
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    except FileNotFoundError as exc:
        raise ExternalToolError(f"cannot run {argv[0]}: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise ExternalToolError(f"{argv[0]} timed out after {timeout}s") from exc
    if proc.returncode != 0:
        raise ExternalToolError(f"{argv[0]} exited with {proc.returncode}: "
                                f"{proc.stderr.decode(errors='replace')[-500:]}")
    return proc


def time_runtime(cmd, wasm_path, repetitions=5, timeout=120):
    """Wall-clock seconds of each run of ``cmd`` (a ``{wasm}`` template)."""
    argv = [a.format(wasm=wasm_path) for a in shlex.split(cmd)]
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        _run(argv, timeout)
        times.append(time.perf_counter() - start)
    return times


def optimize(cmd, data, timeout=300):
    """Pass ``data`` through an optimizer command template with ``{in}`` and ``{out}``."""
    with tempfile.TemporaryDirectory() as tmp:
        src, dst = os.path.join(tmp, "in.wasm"), os.path.join(tmp, "out.wasm")
        with open(src, "wb") as f:
            f.write(data)
        argv = [a.replace("{in}", src).replace("{out}", dst) for a in shlex.split(cmd)]
        _run(argv, timeout)
        with open(dst, "rb") as f:
            return f.read()


def main(argv=None):
    """``python -m madvex.external module.wasm``: run ``main`` and print its result."""
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 1:
        print("usage: python -m madvex.external module.wasm", file=sys.stderr)
        return 2
    with open(args[0], "rb") as f:
        result, _, _ = run_module(f.read())
    print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
