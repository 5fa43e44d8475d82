"""Stage-graph orchestration with per-sample checkpointing and reporting."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import context as ctx
from . import dataset as ds
from .canonical import CanonicalValue
from .expansion import (
    ExpandedTable,
    ExpansionAbortedError,
    ExpansionParseError,
    expand_table,
    gather_link_knowledge,
    verify_expansion,
)
from .gateway import Gateway, GatewayError
from .htmltext import html_to_text
from .ingest import (
    RawTable,
    TableFilterPolicy,
    classify_columns,
    eligible_link_column,
    extract_tables,
    filter_table,
    render_metadata,
)
from .qa import NO_CONDITION, QaExhaustedError, QualityRatings, TableEnvelope, select_condition_column, synthesize_qa
from .trace import ReasoningTrace, TraceValidationError, generate_trace, validate_trace, trace_statistics
from .verify import InProcessSandbox, ScriptExtractionError, ConsensusParseError, check_consensus, generate_solution_script, run_solution
from .wiki import DisambiguationPageError, FixtureWikiClient, PageNotFoundError, WikiPage, fetch_page

log = logging.getLogger(__name__)

STAGES = ("ingest", "expand", "qa", "verify", "context", "trace", "assemble")


class PipelineError(Exception):
    pass


class ConfigError(PipelineError):
    pass


class CorruptCheckpointError(PipelineError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    seed_list: str = ""
    wiki_fixture_dir: str = ""
    search_fixture_dir: str = ""
    output_dir: str = "out"
    checkpoint_dir: str = "checkpoints"
    stages: list[str] = field(default_factory=lambda: list(STAGES))

    # table filter
    min_rows: int = 5
    max_rows: int = 30
    min_data_cols: int = 2
    max_data_cols: int = 6

    # expansion / qa
    qa_max_attempts: int = 3
    web_results_n: int = 10

    # context
    context_budget_tokens: int = 96_000
    chunk_chars: int = 1024
    noisy_chunk_tokens: int = 256
    eval_limit_tokens: int = ctx.EVAL_COMPACT_THRESHOLD

    # gateway / trace
    provider: dict = field(default_factory=lambda: {"mode": "mock"})
    temperature: float | None = None
    teacher_map: dict = field(default_factory=dict)  # student id -> teacher id
    student_id: str = "student"
    self_distill: bool = False

    inline_context: bool = False
    topic_map: dict = field(default_factory=dict)  # page title -> topic label

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        import yaml

        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except Exception as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(data)

    def filter_policy(self) -> TableFilterPolicy:
        return TableFilterPolicy(self.min_rows, self.max_rows, self.min_data_cols, self.max_data_cols)

    def teacher_for(self, student: str) -> str:
        if self.self_distill:
            return student
        return self.teacher_map.get(student, "teacher")


def _stable_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, ensure_ascii=False, default=str).encode()).hexdigest()[:16]


class Checkpoint:
    """Per-sample, per-stage result store with content-hash invalidation."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._validate()

    def _path(self, stage: str, unit_id: str) -> Path:
        safe = unit_id.replace("/", "_")[:120]
        return self.directory / stage / f"{safe}.json"

    def _validate(self) -> None:
        for path in self.directory.glob("*/*.json"):
            try:
                entry = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise CorruptCheckpointError(f"unreadable checkpoint entry {path}: {exc}") from exc
            if "input_hash" not in entry or "status" not in entry:
                raise CorruptCheckpointError(f"malformed checkpoint entry {path}: missing keys")

    def lookup(self, stage: str, unit_id: str, input_hash: str) -> dict | None:
        path = self._path(stage, unit_id)
        if not path.exists():
            return None
        entry = json.loads(path.read_text())
        if entry.get("input_hash") != input_hash:
            return None
        return entry

    def store(self, stage: str, unit_id: str, input_hash: str, status: str, output=None, reason: str | None = None) -> dict:
        entry = {"input_hash": input_hash, "status": status, "output": output, "reason": reason}
        path = self._path(stage, unit_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(entry, ensure_ascii=False, sort_keys=True))
        return entry


def _cached(checkpoint: Checkpoint, stage: str, unit_id: str, inputs, compute):
    """Run ``compute`` unless an up-to-date checkpoint entry exists.

    ``compute`` returns (status, output, reason).
    """
    input_hash = _stable_hash(inputs)
    entry = checkpoint.lookup(stage, unit_id, input_hash)
    if entry is not None:
        return entry
    status, output, reason = compute()
    return checkpoint.store(stage, unit_id, input_hash, status, output, reason)


@dataclass
class RunReport:
    stage_counts: dict = field(default_factory=dict)
    drops: dict = field(default_factory=dict)  # unit id -> reason
    records: int = 0
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage_counts": self.stage_counts,
            "drops": dict(sorted(self.drops.items())),
            "records": self.records,
            "outputs": self.outputs,
        }


def build_gateway(config: PipelineConfig, provider=None) -> Gateway:
    if provider is None:
        mode = config.provider.get("mode", "mock")
        if mode == "mock":
            from .mockllm import PipelineMockProvider

            provider = PipelineMockProvider()
        else:
            from .gateway import HttpChatProvider, ProviderConfig

            provider = HttpChatProvider(ProviderConfig.from_dict({k: v for k, v in config.provider.items() if k != "mode"}))
    return Gateway(provider)


def _page_seed(config: PipelineConfig, *parts: str) -> int:
    return int(_stable_hash([config.seed, *parts]), 16) % (2**31)


def run_pipeline(config: PipelineConfig, gateway: Gateway | None = None, wiki_client=None, search_provider=None, sandbox=None) -> RunReport:
    """Execute ingest -> expand -> qa -> verify -> context -> trace -> assemble.

    Every stage result is checkpointed per sample; rerunning with an intact
    checkpoint directory reuses all unchanged work.
    """
    if not config.seed_list or not Path(config.seed_list).exists():
        raise ConfigError(f"seed list not found: {config.seed_list!r}")
    gateway = gateway or build_gateway(config)
    wiki_client = wiki_client or FixtureWikiClient(config.wiki_fixture_dir)
    if search_provider is None:
        if config.search_fixture_dir:
            search_provider = ctx.FixtureSearchProvider(config.search_fixture_dir)
        else:
            raise ConfigError("no search provider configured")
    sandbox = sandbox or InProcessSandbox()
    checkpoint = Checkpoint(config.checkpoint_dir)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport()
    policy = config.filter_policy()
    policy_dict = dataclasses.asdict(policy)

    titles = [t.strip() for t in Path(config.seed_list).read_text().splitlines() if t.strip()]

    # -- ingest -------------------------------------------------------------
    tables: list[tuple[WikiPage, RawTable]] = []
    pages: dict[str, WikiPage] = {}
    n_extracted = 0
    for title in titles:
        def ingest_page(title=title):
            try:
                page = fetch_page(title, wiki_client)
            except (PageNotFoundError, DisambiguationPageError) as exc:
                return "dropped", None, f"page: {type(exc).__name__}"
            extracted = [classify_columns(t) for t in extract_tables(page)]
            kept, dropped = [], {}
            for t in extracted:
                decision = filter_table(t, policy)
                if decision.keep:
                    kept.append(t.to_dict())
                else:
                    dropped[t.table_id] = decision.reason
            return "done", {"page": page.to_dict(), "kept": kept, "dropped": dropped, "extracted": len(extracted)}, None

        entry = _cached(checkpoint, "ingest", title, [title, policy_dict], ingest_page)
        if entry["status"] == "dropped":
            report.drops[f"page:{title}"] = entry["reason"]
            continue
        page = WikiPage.from_dict(entry["output"]["page"])
        pages[title] = page
        n_extracted += entry["output"]["extracted"]
        for table_id, reason in entry["output"]["dropped"].items():
            report.drops[f"table:{table_id}"] = reason
        for t in entry["output"]["kept"]:
            tables.append((page, RawTable.from_dict(t)))
    report.stage_counts["ingest"] = {"pages": len(pages), "tables_extracted": n_extracted, "tables_kept": len(tables)}
    enabled = set(config.stages)
    if "expand" not in enabled:
        return report

    # -- expand -------------------------------------------------------------
    envelopes: list[tuple[WikiPage, TableEnvelope, list]] = []
    n_expanded = 0
    for page, table in sorted(tables, key=lambda pt: pt[1].table_id):
        metadata = render_metadata(page, table)

        def do_expand(page=page, table=table, metadata=metadata):
            col = eligible_link_column(table)
            if col is None:
                return "done", {"expanded": None, "summaries": []}, None
            try:
                summaries = gather_link_knowledge(table, col, wiki_client)
            except ExpansionAbortedError as exc:
                return "done", {"expanded": None, "summaries": [], "note": str(exc)}, None
            expanded = None
            for attempt in range(2):  # response-unparseable is retriable once
                try:
                    expanded = expand_table(table, metadata, summaries, gateway)
                    break
                except (ExpansionParseError, ExpansionAbortedError) as exc:
                    last = str(exc)
            if expanded is None:
                return "done", {"expanded": None, "summaries": [], "note": f"expansion failed: {last}"}, None
            verdict = verify_expansion(table, expanded, summaries, gateway)
            if not verdict.passed:
                return "done", {"expanded": None, "summaries": [], "note": "; ".join(verdict.reasons)}, None
            return "done", {
                "expanded": expanded.to_dict(),
                "summaries": [
                    {"target_title": s.target_title, "summary_text": s.summary_text, "source_column": s.source_column, "row": s.row}
                    for s in summaries
                ],
            }, None

        entry = _cached(checkpoint, "expand", table.table_id, [table.to_dict(), metadata], do_expand)
        out = entry["output"]
        if out["expanded"] is not None:
            expanded = ExpandedTable.from_dict(out["expanded"])
            n_expanded += 1
            cond = select_condition_column(expanded, _page_seed(config, "cond", table.table_id))
            envelope = TableEnvelope(table=expanded, metadata=metadata, condition_column=cond or NO_CONDITION)
        else:
            envelope = TableEnvelope(table=table, metadata=metadata)
        envelopes.append((page, envelope, out["summaries"]))
    report.stage_counts["expand"] = {"expanded": n_expanded, "unexpanded": len(envelopes) - n_expanded}
    if "qa" not in enabled:
        return report

    # -- qa + verify + context + trace + assemble, per envelope --------------
    records: list[ds.DatasetRecord] = []
    contexts: dict[str, str] = {}
    qa_done = verify_done = context_done = trace_done = 0
    for page, envelope, summaries in envelopes:
        flat = envelope.flat_table
        base_id = envelope.table.base.table_id if envelope.from_expanded else flat.table_id
        unit = flat.table_id

        def do_qa(envelope=envelope, unit=unit):
            try:
                cand = synthesize_qa(envelope, gateway, max_attempts=config.qa_max_attempts, seed=_page_seed(config, "qa", unit))
            except QaExhaustedError as exc:
                return "dropped", None, "qa-exhausted: " + "; ".join(exc.reasons)
            except GatewayError as exc:
                return "dropped", None, f"qa-gateway: {exc}"
            return "done", {
                "question": cand.question,
                "sql": cand.sql,
                "attempt": cand.attempt,
                "ratings": cand.ratings.as_dict(),
                "answer": cand.sql_answer.to_dict(),
            }, None

        entry = _cached(checkpoint, "qa", unit, [flat.to_dict(), envelope.metadata, envelope.condition_column, config.seed, config.qa_max_attempts], do_qa)
        if entry["status"] == "dropped":
            report.drops[f"table:{base_id}"] = entry["reason"]
            continue
        qa = entry["output"]
        qa_done += 1
        answer = CanonicalValue.from_dict(qa["answer"])
        if "verify" not in enabled:
            continue

        def do_verify(flat=flat, envelope=envelope, qa=qa, answer=answer):
            try:
                script = generate_solution_script(flat, envelope.metadata, qa["question"], gateway)
            except ScriptExtractionError as exc:
                return "dropped", None, f"verify-script: {exc}"
            result = run_solution(script, flat, sandbox)
            if result.status != "ok":
                return "dropped", None, f"verify-execution: {result.status}"
            try:
                verdict = check_consensus(answer, result.value, qa["question"], gateway)
            except ConsensusParseError as exc:
                return "dropped", None, f"verify-judge: {exc}"
            if not verdict.equivalent:
                return "dropped", None, "verify-no-consensus"
            return "done", {"script_answer": result.value.to_dict(), "verdict": verdict.to_dict()}, None

        entry = _cached(checkpoint, "verify", unit, [flat.to_dict(), qa], do_verify)
        if entry["status"] == "dropped":
            report.drops[f"table:{base_id}"] = entry["reason"]
            continue
        verify_done += 1
        if "context" not in enabled:
            continue

        def do_context(page=page, envelope=envelope, summaries=summaries, qa=qa, unit=unit):
            docs = [
                ctx.EvidenceDoc(
                    doc_id=f"wiki:{page.title}",
                    origin="wiki-evidence",
                    title=page.title,
                    # traces must ground in prose, so the structured tables
                    # are dropped from the evidence text
                    text=html_to_text(page.html, skip_tables=True),
                    is_evidence=True,
                )
            ]
            for s in summaries:
                docs.append(
                    ctx.EvidenceDoc(
                        doc_id=f"wiki:{s['target_title']}",
                        origin="wiki-evidence",
                        title=s["target_title"],
                        text=s["summary_text"],
                        is_evidence=True,
                    )
                )
            docs.extend(ctx.search_web(qa["question"], search_provider, n=config.web_results_n))
            try:
                compacted = ctx.compact_context(
                    qa["question"], docs, budget_tokens=config.context_budget_tokens, chunk_chars=config.chunk_chars
                )
            except ctx.EvidenceOverBudgetError as exc:
                return "dropped", None, f"context-over-budget: {exc}"
            if not ctx.validate_evidence_presence(compacted, docs):
                return "dropped", None, "context-evidence-missing"
            return "done", {"text": compacted.render(), "token_count": compacted.token_count, "evidence": list(compacted.evidence_manifest)}, None

        entry = _cached(checkpoint, "context", unit, [page.title, qa["question"], config.context_budget_tokens, config.chunk_chars, len(summaries)], do_context)
        if entry["status"] == "dropped":
            report.drops[f"table:{base_id}"] = entry["reason"]
            continue
        context_out = entry["output"]
        context_done += 1
        if "trace" not in enabled:
            continue

        teacher_id = config.teacher_for(config.student_id)

        def do_trace(flat=flat, qa=qa, answer=answer, context_out=context_out, teacher_id=teacher_id):
            last = ""
            for attempt in range(2):  # invalid traces regenerated once
                try:
                    trace = generate_trace(qa["question"], answer, context_out["text"], gateway, table=flat, teacher_id=teacher_id)
                except TraceValidationError as exc:
                    last = str(exc)
                    continue
                validation = validate_trace(trace, answer)
                for warning in validation.warnings:
                    log.warning("trace %s: %s", flat.table_id, warning)
                if validation.passed:
                    return "done", trace.to_dict(), None
                last = "; ".join(validation.reasons)
            return "dropped", None, f"trace-invalid: {last}"

        entry = _cached(checkpoint, "trace", unit, [qa["question"], context_out["token_count"], teacher_id], do_trace)
        if entry["status"] == "dropped":
            report.drops[f"table:{base_id}"] = entry["reason"]
            continue
        trace = ReasoningTrace.from_dict(entry["output"])
        trace_done += 1
        if "assemble" not in enabled:
            continue

        record = ds.assemble_record(
            page=page.title,
            table_id=base_id,
            question=qa["question"],
            answer=answer,
            context_ref=f"contexts/{unit}.txt",
            trace=trace,
            ratings=QualityRatings(**qa["ratings"]),
            from_expanded=envelope.from_expanded,
            condition_column=envelope.condition_column if envelope.condition_column != NO_CONDITION else None,
            teacher_id=teacher_id,
        )
        contexts[record.context_ref] = context_out["text"]
        records.append(record)

    report.stage_counts["qa"] = {"done": qa_done}
    report.stage_counts["verify"] = {"done": verify_done}
    report.stage_counts["context"] = {"done": context_done}
    report.stage_counts["trace"] = {"done": trace_done}

    # -- emit ----------------------------------------------------------------
    contexts_dir = out_dir / "contexts"
    contexts_dir.mkdir(exist_ok=True)
    for ref, text in sorted(contexts.items()):
        (out_dir / ref).write_text(text, encoding="utf-8")
    records_path = out_dir / "records.jsonl"
    ds.write_records_jsonl(records, records_path, contexts=contexts, inline_context=config.inline_context)
    report.records = len(records)
    report.outputs["records"] = str(records_path)
    report_path = out_dir / "run_report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
    report.outputs["report"] = str(report_path)
    return report


def resume(config: PipelineConfig, checkpoint_dir: str | Path, **kwargs) -> RunReport:
    """Re-run with an existing checkpoint; only pending or changed samples execute."""
    config = dataclasses.replace(config, checkpoint_dir=str(checkpoint_dir))
    Checkpoint(checkpoint_dir)  # validates; raises CorruptCheckpointError with diagnostics
    return run_pipeline(config, **kwargs)


def report_stats(records: list[ds.DatasetRecord], topic_map: dict | None = None) -> dict:
    """Topic distribution (percent), rating distribution (counts), trace lengths."""
    topic_map = topic_map or {}
    topics: dict[str, int] = {}
    for r in records:
        topic = topic_map.get(r.provenance.get("page", ""), "Unlabeled")
        topics[topic] = topics.get(topic, 0) + 1
    total = len(records)
    topic_pct = {t: round(100 * c / total, 1) for t, c in sorted(topics.items(), key=lambda kv: -kv[1])} if total else {}

    ratings = {crit: {score: 0 for score in range(1, 6)} for crit in ("complexity", "self_containedness", "naturalness")}
    for r in records:
        for crit, value in r.ratings.as_dict().items():
            ratings[crit][value] += 1

    return {
        "n_records": total,
        "topic_distribution_pct": topic_pct,
        "rating_distribution": {crit: dict(counts) for crit, counts in ratings.items()},
        "trace_lengths": trace_statistics([r.trace.token_count for r in records]),
    }


def render_stats_text(stats: dict) -> str:
    lines = [f"records: {stats['n_records']}", "", "topics (%):"]
    for topic, pct in stats["topic_distribution_pct"].items():
        lines.append(f"  {topic:<40} {pct:>6}")
    lines.append("")
    lines.append("ratings (counts per score 1..5):")
    for crit, counts in stats["rating_distribution"].items():
        row = "  ".join(f"{s}:{counts[s]}" for s in sorted(counts))
        lines.append(f"  {crit:<20} {row}")
    tl = stats["trace_lengths"]
    lines.append("")
    lines.append(f"trace length median: {tl['median']}")
    for b in tl["histogram"]:
        lines.append(f"  [{b['lo']:>9} .. {b['hi']:>9}) {'#' * b['count']} ({b['count']})")
    return "\n".join(lines)
