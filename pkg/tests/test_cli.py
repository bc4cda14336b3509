import io
import json
import subprocess
import sys

import pytest

from speclab.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main

MEAS = "model_id,tar,t_draft_ms,t_target_ms\nOPT-125M,3.0,43.7,60\nOPT-350M,3.1,79.8,60\n"


def run(argv):
    out = io.StringIO()
    code = main(argv, stdout=out)
    return code, out.getvalue()


@pytest.fixture
def meas(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(MEAS)
    return str(path)


def test_predict_prints_csv():
    code, out = run(["predict", "--tar", "3.70", "--t-draft-ms", "53.5", "--t-target-ms", "60.03"])
    assert code == EXIT_OK
    header, row = out.strip().splitlines()
    assert round(float(row.split(",")[-1]), 2) == 32.59


def test_parity_json_and_out_dir(meas, tmp_path):
    code, out = run(["parity", "--measurements", meas, "--baseline", "OPT-125M", "--format", "json",
                     "--out-dir", str(tmp_path / "res")])
    assert code == EXIT_OK
    rows = json.loads(out)
    assert rows[0]["reduction_pct"] == pytest.approx(0.0, abs=1e-9)
    assert len(list((tmp_path / "res").glob("parity-*.csv"))) == 1
    assert len(list((tmp_path / "res").glob("parity-*.json"))) == 1


def test_extra_and_required_tar(meas):
    code, out = run(["extra-tar", "--measurements", meas, "--baseline", "OPT-125M", "--lookahead", "7"])
    assert code == EXIT_OK and "feasible" in out.splitlines()[0]
    code, out = run(["required-tar", "--measurements", meas, "--throughputs", "30,40"])
    assert code == EXIT_OK and len(out.strip().splitlines()) == 5


def test_explore_and_compare():
    code, out = run(["explore", "--budget", "125000000", "--depths", "12", "--heads", "12"])
    assert code == EXIT_OK and "125239296" in out
    code, out = run(["compare", "--config-a", "NoFT-1.3B", "--config-b", "NoFT-Wide-1.3B",
                     "--tar-a", "3.81", "--tar-b", "3.70", "--t-target-ms", "60",
                     "--latency-a-ms", "105.1", "--latency-b-ms", "53.5", "--label-b", "wide"])
    assert code == EXIT_OK and ",wide," in out


def test_sweep_and_run(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("\n".join(f"the quick brown fox number {i} jumps over the lazy dog" for i in range(50)))
    code, out = run(["sweep-lookahead", "--draft", "ngram:1", "--target", "ngram:3", "--dataset", str(corpus),
                     "--lookaheads", "1:3", "--num-prompts", "2", "--max-new", "16"])
    assert code == EXIT_OK and len(out.strip().splitlines()) == 4
    code, out = run(["run-specdec", "--draft", "ngram:2", "--target", "ngram:3", "--dataset", str(corpus),
                     "--num-prompts", "2", "--max-new", "16", "--baseline", "--format", "json"])
    assert code == EXIT_OK and all(r["matches_baseline"] for r in json.loads(out))


def test_bench_latency_cli():
    code, out = run(["bench-latency", "--depths", "1,2", "--widths", "32", "--repetitions", "2",
                     "--warmup", "0"])
    assert code == EXIT_OK and len(out.strip().splitlines()) == 3


def test_config_file_supplies_params(tmp_path):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({"kind": "predict", "params": {"measurements": [
        {"model_id": "x", "tar": 2.0, "t_draft_ms": 50, "t_target_ms": 50}]}}))
    code, out = run(["--config", str(cfg), "predict"])
    assert code == EXIT_OK and out.strip().endswith(",20.0")
    cfg.write_text(json.dumps({"kind": "parity"}))
    assert run(["--config", str(cfg), "predict", "--tar", "2", "--t-draft-ms", "1",
                "--t-target-ms", "1"])[0] == EXIT_INVALID


def test_ingest(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("ab\ncd e\n")
    code, out = run(["ingest", str(path), "--out-dir", str(tmp_path / "o")])
    assert code == EXIT_OK
    assert out.strip().splitlines()[1:] == ["0,3", "1,5"]
    lines = (tmp_path / "o" / "c.tokens.jsonl").read_text().splitlines()
    assert json.loads(lines[0]) == [97, 98, 256]


@pytest.mark.parametrize("argv", [
    ["predict", "--tar", "3"],
    ["predict", "--tar", "-1", "--t-draft-ms", "1", "--t-target-ms", "1"],
    ["parity", "--measurements", "/nonexistent.csv", "--baseline", "x"],
    ["explore", "--budget", "100", "--tolerance", "0.9"],
    ["bogus"],
    ["predict", "--tar", "abc"],
])
def test_validation_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        code, _ = run(argv)
        raise SystemExit(code)
    assert exc.value.code == EXIT_INVALID


def test_malformed_jsonl_exit_1(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"text": "a"}\n{oops\n')
    assert run(["ingest", str(path)])[0] == EXIT_INVALID


def test_runtime_failure_exit_2(tmp_path):
    # a replay script that runs out mid-generation fails after validation
    script = json.dumps({"type": "replay", "script": [[1.0, 0.0]]})
    code, _ = run(["run-specdec", "--draft", script, "--target", script, "--max-new", "5",
                   "--num-prompts", "1", "--prompt-len", "2"])
    assert code == EXIT_RUNTIME


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "speclab", "predict", "--tar", "2", "--t-draft-ms", "50",
                          "--t-target-ms", "50"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip().endswith(",20.0")
