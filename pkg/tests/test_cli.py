import csv
import json

import pytest
import yaml

from asmb.cli import CliError, load_config_file, main, record_filename, resolve_config, env_overrides
from asmb.policy import ForgetfulPolicy, parse_policy_spec


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    path = tmp_path_factory.mktemp("suite") / "s.jsonl"
    assert main(["gen", "--out", str(path), "--tasks", "10", "--seed", "1"], environ={}) == 0
    return path


@pytest.fixture(scope="module")
def oracle_run(suite, tmp_path_factory):
    run = tmp_path_factory.mktemp("run") / "r"
    assert main(["run", str(suite), "--out", str(run), "--policy", "oracle"], environ={}) == 0
    return run


def test_gen_writes_one_line_per_task(suite):
    assert len(suite.read_bytes().splitlines()) == 10
    assert json.loads((suite.parent / "s.jsonl.manifest.json").read_text())["num_tasks"] == 10


def test_gen_is_deterministic(suite, tmp_path):
    again = tmp_path / "again.jsonl"
    main(["gen", "--out", str(again), "--tasks", "10", "--seed", "1"], environ={})
    assert again.read_bytes() == suite.read_bytes()


def test_gen_rejects_gap_beyond_length(tmp_path, capsys):
    code = main(["gen", "--out", str(tmp_path / "x.jsonl"), "--length", "10,12", "--gap", "20,30"], environ={})
    assert code == 2
    assert "invalid generation config" in capsys.readouterr().err


def test_selfcheck(suite, capsys):
    assert main(["selfcheck", str(suite)], environ={}) == 0
    assert "0 with problems" in capsys.readouterr().out


def test_run_writes_every_cell(oracle_run):
    assert len(list((oracle_run / "records").glob("*.json"))) == 30
    for name in ("manifest.json", "summary.json", "config.yaml", "suite.jsonl"):
        assert (oracle_run / name).exists()


def test_rerun_skips_completed_cells(suite, oracle_run, capsys):
    assert main(["run", str(suite), "--out", str(oracle_run), "--policy", "oracle"], environ={}) == 0
    assert "executed=0 skipped=30" in capsys.readouterr().out


def test_changed_config_invalidates_cells(suite, tmp_path, capsys):
    run = tmp_path / "r"
    main(["run", str(suite), "--out", str(run), "--modes", "asm"], environ={})
    main(["run", str(suite), "--out", str(run), "--modes", "asm", "--budget", "500"], environ={})
    assert "executed=10 skipped=0" in capsys.readouterr().out.splitlines()[-1]


def test_forgetful_spec():
    p = parse_policy_spec("forgetful:window=5")
    assert isinstance(p, ForgetfulPolicy) and p.window == 5 and p.name == "forgetful:window=5"
    with pytest.raises(ValueError):
        parse_policy_spec("forgetful:depth=3")
    assert record_filename("s1-t0001", "forgetful:window=5", "raw") == "s1-t0001__forgetful-window-5__raw.json"


def test_eval_table(oracle_run, capsys):
    assert main(["eval", str(oracle_run)], environ={}) == 0
    out = capsys.readouterr().out
    assert "100.00" in out and "AMS" in out and "Avg Token" in out
    metrics = json.loads((oracle_run / "eval" / "metrics.json").read_text())
    assert metrics["cells"]["oracle|asm"]["tcr"] == 100.0 and not metrics["partial"]


def test_eval_reports_missing_records(suite, tmp_path, capsys):
    run = tmp_path / "r"
    main(["run", str(suite), "--out", str(run), "--modes", "raw"], environ={})
    victim = next((run / "records").glob("*.json"))
    victim.unlink()
    assert main(["eval", str(run)], environ={}) == 0
    out = capsys.readouterr().out
    assert f"missing: {victim.name}" in out and "partial run" in out


def test_report_one_row_per_bucket(oracle_run, tmp_path):
    out = tmp_path / "rep"
    assert main(["report", str(oracle_run), "--out", str(out)], environ={}) == 0
    rows = list(csv.DictReader(open(out / "buckets.csv")))
    buckets = [r["bucket"] for r in rows]
    assert len(buckets) == len(set(buckets)) > 0
    assert sum(int(r["tasks"]) for r in rows) == 10
    assert all(float(r["oracle|raw ams"]) == 100.0 for r in rows)
    assert (out / "comparison.txt").read_text().startswith("AMS / TCR")


@pytest.mark.parametrize(
    "argv, code",
    [
        (["run", "/nonexistent/suite.jsonl", "--out", "{tmp}/r"], 3),
        (["eval", "{tmp}/nothing"], 3),
        (["run", "{suite}", "--out", "{tmp}/r", "--policy", "bogus"], 2),
        (["run", "{suite}", "--out", "{tmp}/r", "--modes", "raw,everything"], 2),
        (["run", "{suite}", "--out", "{tmp}/r", "--policy", "chat"], 2),
        (["frobnicate"], 2),
        (["selfcheck", "{suite}"], 0),
    ],
)
def test_exit_codes(argv, code, suite, tmp_path):
    argv = [a.format(tmp=tmp_path, suite=suite) for a in argv]
    assert main(argv, environ={}) == code


def test_bad_suite_line_is_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x"}\n')
    assert main(["selfcheck", str(bad)], environ={}) == 2
    assert "line 1" in capsys.readouterr().err


class TestConfig:
    def test_precedence(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("budget: 100\nseed: 1\nconcurrency: 2\n")
        cfg = resolve_config(load_config_file(f), env_overrides({"ASMB_BUDGET": "200", "ASMB_SEED": "7"}), {"budget": 300})
        assert (cfg.budget, cfg.seed, cfg.concurrency) == (300, 7, 2)

    def test_unknown_key(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("budgett: 100\n")
        with pytest.raises(CliError) as e:
            load_config_file(f)
        assert e.value.code == 2

    def test_wrong_type(self):
        with pytest.raises(CliError):
            resolve_config({"budget": "lots"}, {}, {})

    def test_env_strings_stay_raw(self):
        assert env_overrides({"ASMB_MODEL": "123", "ASMB_TEMPERATURE": "0.5"}) == {"model": "123", "temperature": 0.5}

    def test_unknown_key_exit_code(self, suite, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("nope: 1\n")
        assert main(["selfcheck", str(suite), "--config", str(f)], environ={}) == 2


def test_api_key_is_redacted(suite, tmp_path):
    run = tmp_path / "r"
    env = {"ASMB_API_KEY": "sk-secret-value", "ASMB_ENDPOINT": "http://127.0.0.1:9", "ASMB_MODEL": "m"}
    main(["run", str(suite), "--out", str(run), "--policy", "oracle", "--modes", "raw"], environ=env)
    assert "sk-secret-value" not in (run / "manifest.json").read_text()
    assert "sk-secret-value" not in (run / "config.yaml").read_text()


def test_unreachable_endpoint_degrades(tmp_path, capsys):
    suite = tmp_path / "one.jsonl"
    main(["gen", "--out", str(suite), "--tasks", "1", "--length", "20,20"], environ={})
    run = tmp_path / "r"
    argv = ["run", str(suite), "--out", str(run), "--policy", "chat", "--modes", "asm",
            "--endpoint", "http://127.0.0.1:9", "--model", "m", "--max-retries", "0", "--timeout", "0.5"]
    assert main(argv, environ={}) == 0
    out = capsys.readouterr().out
    assert "failures=1" in out
    rec = json.loads(next((run / "records").glob("*.json")).read_text())["record"]
    assert all(e["type"] == "decision_failure" for e in rec["errors"]) and len(rec["errors"]) == 20


def test_config_yaml_replays_the_run(suite, oracle_run, tmp_path):
    cfg = yaml.safe_load((oracle_run / "config.yaml").read_text())
    assert cfg["policies"] == ["oracle"]
    replay = tmp_path / "replay"
    assert main(["run", str(suite), "--out", str(replay), "--config", str(oracle_run / "config.yaml")], environ={}) == 0
    for f in sorted((oracle_run / "records").glob("*.json")):
        assert (replay / "records" / f.name).read_bytes() == f.read_bytes()
    assert (replay / "summary.json").read_bytes() == (oracle_run / "summary.json").read_bytes()
