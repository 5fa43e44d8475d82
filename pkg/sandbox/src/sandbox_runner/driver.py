"""Child-process driver: load the table, run the script, emit the envelope.

Runs inside the resource-limited subprocess started by the CLI. The result
envelope is written to the --out path; nothing the script prints can corrupt
it. Exit code mirrors the envelope status (0 ok, 11 crash, 12 missing-answer;
timeouts are enforced and reported by the parent as 10).
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys
import traceback
from pathlib import Path

FINAL_ANSWER_VAR = "final_answer_python"
DEFAULT_MEMORY_BYTES = 1 << 30

from . import EXIT_CRASH, EXIT_MISSING_ANSWER, EXIT_OK


def _apply_limits(memory_bytes: int) -> None:
    try:
        import resource

        resource.setrlimit(resource.RLIMIT_AS, (memory_bytes, memory_bytes))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
    except (ImportError, ValueError):  # non-POSIX or limit below current usage
        pass


def _block_network() -> None:
    import socket

    def refused(*args, **kwargs):
        raise OSError("network access is disabled inside the sandbox")

    socket.socket = refused  # type: ignore[misc]
    socket.create_connection = refused  # type: ignore[assignment]
    socket.getaddrinfo = refused  # type: ignore[assignment]


def load_dataframe(table_csv: str, types_json: str):
    import pandas as pd

    df = pd.read_csv(table_csv, dtype=str, keep_default_na=False)
    types = json.loads(Path(types_json).read_text()) if types_json else {}
    for col, kind in types.items():
        if kind == "number" and col in df.columns:
            df[col] = pd.to_numeric(df[col].str.replace(",", "", regex=False), errors="coerce")
    return df


def jsonable(value):
    """Coerce common pandas/numpy results to plain JSON values."""
    import pandas as pd

    if isinstance(value, pd.DataFrame):
        return value.to_dict(orient="records")
    if isinstance(value, pd.Series):
        return value.tolist()
    if hasattr(value, "item"):
        try:
            return value.item()
        except Exception:
            pass
    if isinstance(value, set):
        return sorted(value, key=repr)
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [jsonable(v) for v in value]
    return value


def run_script(script_path: str, table_csv: str, types_json: str) -> tuple[dict, int]:
    try:
        df = load_dataframe(table_csv, types_json)
        source = Path(script_path).read_text()
    except Exception:
        return {"status": "crash", "stderr": traceback.format_exc()}, EXIT_CRASH

    namespace = {"df": df, "__name__": "__sandbox__"}
    captured = io.StringIO()
    try:
        with contextlib.redirect_stdout(captured), contextlib.redirect_stderr(captured):
            exec(compile(source, script_path, "exec"), namespace)
    except BaseException:
        return {"status": "crash", "stderr": captured.getvalue() + traceback.format_exc()}, EXIT_CRASH

    if FINAL_ANSWER_VAR not in namespace:
        return {
            "status": "missing-answer",
            "stderr": f"script did not define {FINAL_ANSWER_VAR}",
        }, EXIT_MISSING_ANSWER

    try:
        value = jsonable(namespace[FINAL_ANSWER_VAR])
        json.dumps(value)  # fail here, not while writing a half-open file
    except (TypeError, ValueError):
        return {"status": "crash", "stderr": "final answer is not JSON-serializable"}, EXIT_CRASH
    return {"status": "ok", "value": value, "stderr": captured.getvalue()}, EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sandbox-runner-driver")
    parser.add_argument("--script", required=True)
    parser.add_argument("--table", required=True)
    parser.add_argument("--types", default="")
    parser.add_argument("--out", required=True)
    parser.add_argument("--memory", type=int, default=DEFAULT_MEMORY_BYTES)
    args = parser.parse_args(argv)

    _apply_limits(args.memory)
    _block_network()
    envelope, code = run_script(args.script, args.table, args.types)
    Path(args.out).write_text(json.dumps(envelope, ensure_ascii=False))
    return code


if __name__ == "__main__":
    sys.exit(main())
