import json

from bluesim.cli import main
from bluesim.metrics import parse_trace_jsonl


class TestRun:
    def test_run_writes_trace_and_metrics(self, tmp_path, capsys):
        trace_path = tmp_path / "out.jsonl"
        metrics_path = tmp_path / "metrics.json"
        code = main(["run", "table1", "--trace", str(trace_path),
                     "--metrics", str(metrics_path)])
        assert code == 0
        trace = parse_trace_jsonl(trace_path.read_text())
        assert any(e["kind"] == "agent-installed" for e in trace)
        metrics = json.loads(metrics_path.read_text())
        assert metrics["false_positives"] == 0
        assert "events" in capsys.readouterr().out

    def test_repository_dump(self, tmp_path):
        repo_path = tmp_path / "repo.jsonl"
        main(["run", "table1", "--repository", str(repo_path),
              "--metrics", str(tmp_path / "m.json")])
        rows = [json.loads(line) for line in repo_path.read_text().splitlines()]
        # the protagonist synced its containment lessons at run end
        assert rows and all(row["origin"] == "Blue-17" for row in rows)
        assert {row["action"] for row in rows} >= {"honeypot-isolate", "quarantine"}

    def test_metrics_recomputable_from_trace_file(self, tmp_path):
        # an independent reader of the JSONL file gets the same numbers
        from bluesim.metrics import compute_metrics
        trace_path = tmp_path / "out.jsonl"
        metrics_path = tmp_path / "metrics.json"
        main(["run", "table1", "--trace", str(trace_path),
              "--metrics", str(metrics_path)])
        recomputed = compute_metrics(parse_trace_jsonl(trace_path.read_text()))
        assert recomputed.to_dict() == json.loads(metrics_path.read_text())

    def test_seed_override_changes_cover_traffic(self, tmp_path):
        paths = []
        for seed in (1, 2):
            path = tmp_path / f"t{seed}.jsonl"
            main(["run", "table1", "--seed", str(seed), "--trace", str(path)])
            paths.append(path.read_text())
        assert paths[0] != paths[1]

    def test_scenario_file_path(self, tmp_path):
        from bluesim.scenario import builtin_scenario_path
        source = builtin_scenario_path("clean").read_text()
        path = tmp_path / "copy.json"
        path.write_text(source)
        assert main(["run", str(path)]) == 0

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["run", str(bad)]) == 2

    def test_missing_scenario_exit_code(self):
        assert main(["run", "/no/such/file.json"]) == 2

    def test_scripted_decisions(self, tmp_path):
        decisions = tmp_path / "decisions.json"
        decisions.write_text(json.dumps([{"decision": "deny", "rationale": "hold"}]))
        trace_path = tmp_path / "semi.jsonl"
        code = main(["run", "table1-semi", "--decisions", str(decisions),
                     "--trace", str(trace_path)])
        assert code == 0
        trace = parse_trace_jsonl(trace_path.read_text())
        resolved = [e for e in trace if e["kind"] == "deferral-resolved"]
        assert resolved and resolved[0]["details"]["decision"] == "deny"
        assert not any(e["kind"] == "honeypot-isolated" for e in trace)


class TestVerify:
    def test_pass_exit_zero(self, capsys):
        assert main(["verify-table1"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_fail_exit_one(self, tmp_path, capsys):
        from bluesim.scenario import builtin_scenario_path
        raw = json.loads(builtin_scenario_path("table1").read_text())
        raw["blue_agents"][0]["policy"]["peer_wait"] = 2.0
        path = tmp_path / "perturbed.json"
        path.write_text(json.dumps(raw))
        assert main(["verify-table1", "--scenario", str(path)]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestReplay:
    def test_pretty_print_and_filter(self, tmp_path, capsys):
        trace_path = tmp_path / "t.jsonl"
        main(["run", "table1", "--trace", str(trace_path), "--metrics",
              str(tmp_path / "m.json")])
        capsys.readouterr()
        assert main(["replay", str(trace_path), "--kind", "quarantine"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1 and "quarantine" in out[0]


class TestInteractiveGuard:
    def test_requires_semi_agent(self, capsys):
        assert main(["interactive", "table1", "--listen", "127.0.0.1:0"]) == 2
