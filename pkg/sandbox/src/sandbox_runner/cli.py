"""Parent CLI: one isolated script execution per invocation.

Spawns the driver in its own session so a timed-out script and any children
it forked can be killed as a group. The parent owns the timeout and always
leaves a parseable result envelope at --out.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import subprocess
import sys
from pathlib import Path

from . import EXIT_CRASH, EXIT_MISSING_ANSWER, EXIT_OK, EXIT_TIMEOUT
from .driver import DEFAULT_MEMORY_BYTES

DEFAULT_TIMEOUT_S = 30
_KNOWN_EXITS = {EXIT_OK, EXIT_CRASH, EXIT_MISSING_ANSWER}


def execute(script: str, table: str, types: str, timeout_s: float, out: str, memory_bytes: int = DEFAULT_MEMORY_BYTES) -> int:
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    cmd = [
        sys.executable,
        "-m",
        "sandbox_runner.driver",
        "--script", script,
        "--table", table,
        "--out", out,
        "--memory", str(memory_bytes),
    ]
    if types:
        cmd += ["--types", types]

    proc = subprocess.Popen(
        cmd,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.PIPE,
        start_new_session=True,
    )
    try:
        _, stderr = proc.communicate(timeout=timeout_s)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.wait()
        out_path.write_text(json.dumps({"status": "timeout", "stderr": f"exceeded {timeout_s}s"}))
        return EXIT_TIMEOUT

    if proc.returncode in _KNOWN_EXITS and out_path.exists():
        return proc.returncode

    # driver died before writing (OOM kill, interpreter failure); report crash
    out_path.write_text(
        json.dumps({"status": "crash", "stderr": (stderr or b"").decode(errors="replace") or f"driver exit {proc.returncode}"})
    )
    return EXIT_CRASH


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sandbox-runner", description=__doc__)
    parser.add_argument("--script", required=True, help="python solution script path")
    parser.add_argument("--table", required=True, help="table CSV path")
    parser.add_argument("--types", default="", help="sidecar JSON of column types")
    parser.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT_S, help="seconds")
    parser.add_argument("--out", required=True, help="result envelope path")
    parser.add_argument("--memory", type=int, default=DEFAULT_MEMORY_BYTES, help="address-space limit in bytes")
    args = parser.parse_args(argv)
    return execute(args.script, args.table, args.types, args.timeout, args.out, args.memory)


if __name__ == "__main__":
    sys.exit(main())
