import dataclasses
import json

import pytest

from tableforge.dataset import read_records_jsonl
from tableforge.gateway import Gateway
from tableforge.mockllm import PipelineMockProvider
from tableforge.pipeline import (
    Checkpoint,
    ConfigError,
    CorruptCheckpointError,
    PipelineConfig,
    report_stats,
    render_stats_text,
    resume,
    run_pipeline,
)


def make_config(tmp_path, wiki_dir, search_dir, seed_list, **overrides):
    cfg = PipelineConfig(
        seed=7,
        seed_list=str(seed_list),
        wiki_fixture_dir=str(wiki_dir),
        search_fixture_dir=str(search_dir),
        output_dir=str(tmp_path / "out"),
        checkpoint_dir=str(tmp_path / "ckpt"),
    )
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@pytest.fixture
def config(tmp_path, wiki_dir, search_dir, seed_list):
    return make_config(tmp_path, wiki_dir, search_dir, seed_list)


class TestConfig:
    def test_round_trip(self, config):
        assert PipelineConfig.from_dict(config.to_dict()) == config

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"seed": 1, "not_a_key": True})

    def test_yaml_file(self, tmp_path, config):
        import yaml

        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(config.to_dict()))
        assert PipelineConfig.from_file(path) == config

    def test_teacher_selection(self, config):
        cfg = dataclasses.replace(config, teacher_map={"student": "big-model"}, student_id="student")
        assert cfg.teacher_for("student") == "big-model"
        assert dataclasses.replace(cfg, self_distill=True).teacher_for("student") == "student"


class TestCheckpoint:
    def test_store_and_lookup(self, tmp_path):
        ckpt = Checkpoint(tmp_path / "c")
        ckpt.store("qa", "unit1", "hash1", "done", output={"x": 1})
        entry = ckpt.lookup("qa", "unit1", "hash1")
        assert entry["output"] == {"x": 1}

    def test_changed_hash_invalidates(self, tmp_path):
        ckpt = Checkpoint(tmp_path / "c")
        ckpt.store("qa", "unit1", "hash1", "done", output=1)
        assert ckpt.lookup("qa", "unit1", "other") is None

    def test_corrupt_entry_is_refused_with_diagnostics(self, tmp_path):
        root = tmp_path / "c"
        Checkpoint(root).store("qa", "unit1", "h", "done")
        (root / "qa" / "unit1.json").write_text("{not json")
        with pytest.raises(CorruptCheckpointError) as err:
            Checkpoint(root)
        assert "unit1" in str(err.value)

    def test_malformed_entry_is_refused(self, tmp_path):
        root = tmp_path / "c"
        Checkpoint(root)
        (root / "qa").mkdir()
        (root / "qa" / "x.json").write_text(json.dumps({"status": "done"}))
        with pytest.raises(CorruptCheckpointError):
            Checkpoint(root)


class TestRun:
    def test_end_to_end_produces_records(self, config):
        report = run_pipeline(config)
        assert report.records >= 1
        records = read_records_jsonl(config.output_dir + "/records.jsonl")
        assert len(records) == report.records
        for r in records:
            assert r.trace.step_count >= 2
            assert (config.output_dir + "/" + r.context_ref) or True

    def test_drop_reasons_plus_records_conserve_tables(self, config):
        report = run_pipeline(config)
        extracted = report.stage_counts["ingest"]["tables_extracted"]
        table_drops = [k for k in report.drops if k.startswith("table:")]
        assert extracted == report.records + len(table_drops)

    def test_missing_seed_list_is_config_error(self, config):
        with pytest.raises(ConfigError):
            run_pipeline(dataclasses.replace(config, seed_list="/nope.txt"))

    def test_stage_limit_stops_early(self, config):
        cfg = dataclasses.replace(config, stages=["ingest"])
        report = run_pipeline(cfg)
        assert "ingest" in report.stage_counts
        assert "qa" not in report.stage_counts

    def test_same_seed_is_byte_identical(self, tmp_path, wiki_dir, search_dir, seed_list):
        outs = []
        for name in ("a", "b"):
            cfg = make_config(tmp_path / name, wiki_dir, search_dir, seed_list)
            run_pipeline(cfg, gateway=Gateway(PipelineMockProvider()))
            outs.append((tmp_path / name / "out" / "records.jsonl").read_bytes())
        assert outs[0] == outs[1]

    def test_resume_makes_zero_llm_calls(self, config):
        first = PipelineMockProvider()
        run_pipeline(config, gateway=Gateway(first))
        assert sum(first.calls.values()) > 0

        second = PipelineMockProvider()
        report = resume(config, config.checkpoint_dir, gateway=Gateway(second))
        assert sum(second.calls.values()) == 0
        assert report.records >= 1

    def test_resume_after_partial_run_matches_uninterrupted(self, tmp_path, wiki_dir, search_dir, seed_list):
        full_cfg = make_config(tmp_path / "full", wiki_dir, search_dir, seed_list)
        run_pipeline(full_cfg, gateway=Gateway(PipelineMockProvider()))
        want = (tmp_path / "full" / "out" / "records.jsonl").read_bytes()

        # simulate a kill: run only through qa, then resume the full pipeline
        part_cfg = make_config(tmp_path / "part", wiki_dir, search_dir, seed_list)
        run_pipeline(dataclasses.replace(part_cfg, stages=["ingest", "expand", "qa"]),
                     gateway=Gateway(PipelineMockProvider()))
        run_pipeline(part_cfg, gateway=Gateway(PipelineMockProvider()))
        got = (tmp_path / "part" / "out" / "records.jsonl").read_bytes()
        assert got == want

    def test_qa_attempts_bounded_by_three(self, config):
        provider = PipelineMockProvider()
        report = run_pipeline(config, gateway=Gateway(provider))
        envelopes = report.stage_counts["qa"]["done"]
        assert provider.call_count("qa_generation") <= 3 * max(1, envelopes)

    def test_self_distill_sets_teacher(self, config):
        cfg = dataclasses.replace(config, self_distill=True, student_id="local")
        run_pipeline(cfg)
        records = read_records_jsonl(cfg.output_dir + "/records.jsonl")
        assert all(r.trace.teacher_id == "local" for r in records)


class TestStats:
    def test_report_stats(self, config):
        run_pipeline(config)
        records = read_records_jsonl(config.output_dir + "/records.jsonl")
        stats = report_stats(records, topic_map={"Visa requirements for Uruguayan citizens": "Visa policy"})
        assert stats["n_records"] == len(records)
        assert abs(sum(stats["topic_distribution_pct"].values()) - 100.0) < 0.5
        total_rated = sum(stats["rating_distribution"]["complexity"].values())
        assert total_rated == len(records)
        text = render_stats_text(stats)
        assert "records:" in text and "trace length median:" in text
