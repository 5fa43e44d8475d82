"""Dual-path answer verification.

The SQL-derived answer is validated against an independently generated
Python solution executed in an isolated sandbox; disagreements are settled
by an equivalence precheck and, only when undecided, an LLM judge.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

from .canonical import CanonicalValue, canonicalize, normalize_text, numeric_payload
from .gateway import Gateway
from .ingest import RawTable, table_to_markdown
from .sqlrun import write_table_csv

log = logging.getLogger(__name__)

FINAL_ANSWER_VAR = "final_answer_python"
NUMERIC_REL_TOL = 1e-6
DEFAULT_TIMEOUT_S = 30
DEFAULT_MEMORY_BYTES = 1 << 30

EXIT_OK, EXIT_TIMEOUT, EXIT_CRASH, EXIT_MISSING = 0, 10, 11, 12
_EXIT_STATUS = {EXIT_OK: "ok", EXIT_TIMEOUT: "timeout", EXIT_CRASH: "crash", EXIT_MISSING: "missing-answer"}


class VerifyError(Exception):
    pass


class ScriptExtractionError(VerifyError):
    """No usable script in the gateway response; sample dropped."""


class ConsensusParseError(VerifyError):
    """Judge verdict unparseable; treated as non-consensus."""


@dataclass(frozen=True)
class SolutionScript:
    source: str

    def __post_init__(self):
        if FINAL_ANSWER_VAR not in self.source:
            raise ValueError(f"script must declare {FINAL_ANSWER_VAR}")


@dataclass(frozen=True)
class ScriptAnswer:
    status: str  # ok | timeout | crash | missing-answer
    value: CanonicalValue | None = None
    stdout: str = ""
    stderr: str = ""

    def __post_init__(self):
        if (self.value is not None) != (self.status == "ok"):
            raise ValueError("value must be present iff status is ok")


@dataclass(frozen=True)
class ConsensusVerdict:
    equivalent: bool
    explanation: str
    decided_by: str  # exact | numeric | llm

    def __post_init__(self):
        if self.decided_by == "exact" and not self.equivalent:
            raise ValueError("exact decisions are always equivalent")

    def to_dict(self) -> dict:
        return {"equivalent": self.equivalent, "explanation": self.explanation, "decided_by": self.decided_by}


_CODE_FENCE_RE = re.compile(r"```(?:python)?\s*\n(.*?)```", re.DOTALL)


def generate_solution_script(table: RawTable, metadata: str, question: str, gateway: Gateway) -> SolutionScript:
    response = gateway.ask(
        "solution_generation",
        {
            "table": table_to_markdown(table.headers, table.rows),
            "metadata": metadata,
            "question": question,
        },
    ).text
    m = _CODE_FENCE_RE.search(response)
    source = m.group(1) if m else (response if FINAL_ANSWER_VAR in response and "=" in response else None)
    if source is None:
        raise ScriptExtractionError("no code block in solution response")
    if FINAL_ANSWER_VAR not in source:
        raise ScriptExtractionError(f"script does not declare {FINAL_ANSWER_VAR}")
    return SolutionScript(source=source)


class SubprocessSandbox:
    """Invokes the sandbox-runner CLI over its file-based protocol."""

    def __init__(self, command: list[str] | None = None, timeout_s: int = DEFAULT_TIMEOUT_S):
        self.command = command or ["sandbox-runner"]
        self.timeout_s = timeout_s

    def execute(self, script_path: Path, table_csv: Path, types_json: Path, out_path: Path) -> dict:
        argv = [
            *self.command,
            "--script", str(script_path),
            "--table", str(table_csv),
            "--types", str(types_json),
            "--timeout", str(self.timeout_s),
            "--out", str(out_path),
        ]
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout_s + 30)
        if out_path.exists():
            return json.loads(out_path.read_text())
        status = _EXIT_STATUS.get(proc.returncode, "crash")
        return {"status": status, "stderr": proc.stderr}


class InProcessSandbox:
    """Test stub honoring the sandbox envelope schema without a subprocess."""

    def __init__(self, timeout_s: int = DEFAULT_TIMEOUT_S):
        self.timeout_s = timeout_s

    def execute(self, script_path: Path, table_csv: Path, types_json: Path, out_path: Path) -> dict:
        import csv as _csv

        types = json.loads(Path(types_json).read_text())
        with open(table_csv, newline="", encoding="utf-8") as fh:
            rows = list(_csv.reader(fh))
        header, data = rows[0], rows[1:]

        try:
            import pandas as pd

            df = pd.DataFrame(data, columns=header)
            for col, t in types.items():
                if t == "number" and col in df.columns:
                    df[col] = pd.to_numeric(df[col].str.replace(",", "", regex=False), errors="coerce")
        except ImportError:
            df = data  # degenerate frame; enough for len()-style scripts

        envelope: dict = {}

        def run():
            import contextlib
            import io

            namespace = {"df": df}
            try:
                with contextlib.redirect_stdout(io.StringIO()):
                    exec(compile(Path(script_path).read_text(), str(script_path), "exec"), namespace)
            except BaseException as exc:  # noqa: BLE001 - scripts may raise anything
                envelope.update({"status": "crash", "stderr": repr(exc)})
                return
            if FINAL_ANSWER_VAR not in namespace:
                envelope.update({"status": "missing-answer", "stderr": ""})
                return
            envelope.update({"status": "ok", "value": _jsonable(namespace[FINAL_ANSWER_VAR]), "stderr": ""})

        thread = threading.Thread(target=run, daemon=True)
        thread.start()
        thread.join(self.timeout_s)
        if thread.is_alive():
            envelope = {"status": "timeout", "stderr": f"exceeded {self.timeout_s}s"}
        Path(out_path).write_text(json.dumps(envelope, ensure_ascii=False))
        return envelope


def _jsonable(value):
    try:
        import pandas as pd

        if isinstance(value, pd.DataFrame):
            return value.to_dict(orient="records")
        if isinstance(value, pd.Series):
            return value.tolist()
    except ImportError:
        pass
    if hasattr(value, "item"):  # numpy scalars
        try:
            return value.item()
        except Exception:
            pass
    if isinstance(value, (set, tuple)):
        return sorted(value) if isinstance(value, set) else list(value)
    return value


def run_solution(script: SolutionScript, table: RawTable, sandbox) -> ScriptAnswer:
    """Execute the script against the table through the sandbox protocol."""
    with tempfile.TemporaryDirectory(prefix="forge-sandbox-") as tmp:
        tmpdir = Path(tmp)
        script_path = tmpdir / "solution.py"
        script_path.write_text(script.source)
        csv_path = tmpdir / "table.csv"
        types_path = tmpdir / "types.json"
        write_table_csv(table, csv_path, types_path)
        out_path = tmpdir / "result.json"
        envelope = sandbox.execute(script_path, csv_path, types_path, out_path)

    status = envelope.get("status", "crash")
    if status == "ok":
        return ScriptAnswer(
            status="ok",
            value=canonicalize(envelope.get("value")),
            stdout=envelope.get("stdout", ""),
            stderr=envelope.get("stderr", ""),
        )
    return ScriptAnswer(status=status, stdout=envelope.get("stdout", ""), stderr=envelope.get("stderr", ""))


def _normal_form(value: CanonicalValue):
    def norm(v):
        if isinstance(v, str):
            return normalize_text(v)
        if isinstance(v, bool):
            return normalize_text(str(v))
        if isinstance(v, (int, float)):
            return float(v)
        if isinstance(v, dict):
            return tuple(sorted((normalize_text(str(k)), norm(x)) for k, x in v.items()))
        if isinstance(v, (list, tuple)):
            return tuple(norm(x) for x in v)
        return v

    return value.kind.split("-")[0] if value.kind.startswith("scalar") else value.kind, norm(value.payload)


def precheck_equivalence(a: CanonicalValue, b: CanonicalValue) -> ConsensusVerdict | None:
    """Cheap symmetric equivalence check; None means the judge must decide."""
    num_a, num_b = numeric_payload(a), numeric_payload(b)
    if num_a is not None and num_b is not None:
        if num_a == num_b:
            return ConsensusVerdict(True, "identical numeric values", "exact")
        scale = max(abs(num_a), abs(num_b))
        if scale > 0 and abs(num_a - num_b) / scale <= NUMERIC_REL_TOL:
            return ConsensusVerdict(True, f"numeric values within {NUMERIC_REL_TOL} relative", "numeric")
        return None
    kind_a, norm_a = _normal_form(a)
    kind_b, norm_b = _normal_form(b)
    if kind_a == kind_b and norm_a == norm_b:
        return ConsensusVerdict(True, "identical after normalization", "exact")
    return None


_VERDICT_RE = re.compile(r"\b(true|false)\b", re.IGNORECASE)


def judge_consensus(a: CanonicalValue, b: CanonicalValue, metadata: str, gateway: Gateway) -> ConsensusVerdict:
    """LLM judgment for pairs the precheck left undecided."""

    def payload(v: CanonicalValue) -> str:
        body = {"result": v.payload}
        if metadata:
            body["question_metadata"] = metadata
        return json.dumps(body, ensure_ascii=False)

    response = gateway.ask("answer_comparison", {"result1": payload(a), "result2": payload(b)}).text
    m = _VERDICT_RE.search(response)
    if not m:
        raise ConsensusParseError("no True/False verdict in judge response")
    return ConsensusVerdict(
        equivalent=m.group(1).lower() == "true",
        explanation=response.strip(),
        decided_by="llm",
    )


def check_consensus(a: CanonicalValue, b: CanonicalValue, metadata: str, gateway: Gateway) -> ConsensusVerdict:
    verdict = precheck_equivalence(a, b)
    if verdict is not None:
        return verdict
    return judge_consensus(a, b, metadata, gateway)
