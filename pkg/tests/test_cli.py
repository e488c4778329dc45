import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path


from ppdesign import io
from ppdesign.cli import THREADS_ENV, main
from ppdesign.core import validate_design
from ppdesign.scenarios import case_study_space

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

SMALL_SA = {
    "seed": 4,
    "draws": 32,
    "problem": {"preset": "bench", "bench": {"profiles_per_set": 2, "num_constant": 1, "num_interactions": 2}},
    "optimizer": {"kind": "sa", "stopping": "max_iterations", "max_iterations": 400},
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=2))
    return p


def run(command, cfg, out, *extra):
    return main([command, "--config", str(cfg), "--out", str(out), *extra])


def test_generate_writes_valid_round_trippable_design(tmp_path):
    cfg = write(tmp_path, SMALL_SA)
    assert run("generate", cfg, tmp_path / "o") == 0
    out = tmp_path / "o"
    report = json.loads((out / "report.json").read_text())
    design = io.read_design_csv(out / "design.csv")
    space = io.space_from_dict(json.loads((out / "design.json").read_text())["space"])
    assert validate_design(design, space) == []
    assert io.read_design_json(out / "design.json") == design
    assert report["violations"] == []
    rows = list(csv.DictReader((out / "trace.csv").open()))
    assert len(rows) > 0 and "temperature" in rows[0]


def test_resolved_config_lists_defaults(tmp_path):
    cfg = write(tmp_path, SMALL_SA)
    run("generate", cfg, tmp_path / "o")
    conf = json.loads((tmp_path / "o" / "report.json").read_text())["config"]
    assert conf["draw_method"] == "sobol"
    assert conf["threads"] == 1
    assert conf["optimizer"]["reheat_stall"] == 1000
    assert conf["optimizer"]["target_acceptance"] == 0.8
    assert conf["problem"]["bench"]["kappa"] == 1.0


def test_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL_SA)
    run("generate", cfg, tmp_path / "a")
    run("generate", cfg, tmp_path / "b")
    for name in ("design.csv", "design.constants.json", "design.json", "report.json", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def _without_elapsed(path):
    return [r[:-1] for r in csv.reader(path.open())]


def test_ce_reruns_are_identical_except_wall_clock(tmp_path):
    cfg = CONFIGS / "generate_explicit_ce.json"
    assert run("generate", cfg, tmp_path / "a") == 0
    run("generate", cfg, tmp_path / "b")
    for name in ("design.csv", "design.json", "report.json", "master.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert _without_elapsed(tmp_path / "a" / "trace.csv") == _without_elapsed(tmp_path / "b" / "trace.csv")
    header = next(csv.reader((tmp_path / "a" / "trace.csv").open()))
    assert header == ["start", "cycle", "criterion", "elapsed_ms"]


def test_seed_flag_overrides_config(tmp_path):
    cfg = write(tmp_path, SMALL_SA)
    run("generate", cfg, tmp_path / "a", "--seed", "99", "--draws", "16")
    conf = json.loads((tmp_path / "a" / "report.json").read_text())["config"]
    assert (conf["seed"], conf["draws"]) == (99, 16)


def test_generate_on_case_study_space_honours_constraints(tmp_path):
    doc = {"seed": 2, "draws": 16, "problem": {"preset": "case_study", "criterion": "main"},
           "optimizer": {"kind": "sa", "stopping": "max_iterations", "max_iterations": 300}}
    assert run("generate", write(tmp_path, doc), tmp_path / "o") == 0
    design = io.read_design_csv(tmp_path / "o" / "design.csv")
    assert validate_design(design, case_study_space()) == []


def test_evaluate_against_itself_is_one(tmp_path):
    data = tmp_path / "data"
    shutil.copytree(ROOT / "tests" / "data", data)
    doc = {"draws": 32, "problem": {"preset": "robust_study"},
           "designs": {"a": "data/robust_study_robust.csv", "b": "data/robust_study_robust.csv"},
           "reference": "a", "models": [{"name": "I", "preset_model": "I"}]}
    assert run("evaluate", write(tmp_path, doc), tmp_path / "o") == 0
    rows = list(csv.DictReader((tmp_path / "o" / "efficiency.csv").open()))
    assert [float(r["efficiency"]) for r in rows] == [1.0, 1.0]


def test_benchmark_two_scenarios_gives_two_rows_and_median(tmp_path):
    doc = {"draws": 16, "budget": "evaluations",
           "scenarios": [{"profiles_per_set": 2, "num_constant": 1, "num_interactions": 0},
                         {"profiles_per_set": 3, "num_constant": 2, "num_interactions": 2}],
           "ce": {"num_starts": 1, "max_cycles": 2}}
    assert run("benchmark", write(tmp_path, doc), tmp_path / "o") == 0
    rows = list(csv.reader((tmp_path / "o" / "races.csv").open()))
    assert len(rows) == 4 and rows[-1][0] == "median"
    assert all(0 < float(r[6]) for r in rows[1:])


def test_simulate_writes_rows_and_summary(tmp_path):
    doc = {"seed": 1, "problem": {"preset": "case_study"},
           "designs": {"orig": str(ROOT / "src/ppdesign/data/case_study_original.csv")},
           "respondents_per_group": 50, "replications": 4}
    assert run("simulate", write(tmp_path, doc), tmp_path / "o") == 0
    rows = list(csv.DictReader((tmp_path / "o" / "sq_errors.csv").open()))
    assert len(rows) == 4 and set(rows[0]) == {"design_id", "replication", "sq_error", "converged"}
    summary = json.loads((tmp_path / "o" / "emse.json").read_text())["emse"]["orig"]
    assert summary["used"] + summary["excluded"] == 4


def test_invalid_json_reports_line(tmp_path, capsys):
    cfg = write(tmp_path, '{\n  "seed": 1,\n  "problem": {"preset": "bench"\n}\n')
    assert run("generate", cfg, tmp_path / "o") == 2
    assert "line " in capsys.readouterr().err


def test_schema_error_is_line_anchored(tmp_path, capsys):
    text = json.dumps(SMALL_SA, indent=2).replace('"max_iterations": 400', '"max_iterations": -5')
    cfg = write(tmp_path, text)
    assert run("generate", cfg, tmp_path / "o") == 2
    line = next(i + 1 for i, s in enumerate(text.splitlines()) if "-5" in s)
    assert f"line {line}" in capsys.readouterr().err


def test_unknown_key_and_bad_family_scale_exit_2(tmp_path):
    assert run("generate", write(tmp_path, {**SMALL_SA, "sed": 1}), tmp_path / "o") == 2
    doc = json.loads(json.dumps(SMALL_SA))
    doc["problem"]["bench"]["lambda"] = 0.7
    assert run("generate", write(tmp_path, doc), tmp_path / "o") == 2


def test_missing_config_exit_2(tmp_path):
    assert run("generate", tmp_path / "nope.json", tmp_path / "o") == 2


def test_infeasible_space_exit_3(tmp_path, capsys):
    doc = {"problem": {"space": {"num_choice_sets": 2, "profiles_per_set": 3, "attribute_levels": [2, 2],
                                 "num_constant_attributes": 1},
                       "model": {"prior": {"mean": [0, 0], "sd": [1, 1]}}},
           "optimizer": {"kind": "sa", "stopping": "max_iterations", "max_iterations": 10}}
    assert run("generate", write(tmp_path, doc), tmp_path / "o") == 3
    assert "infeasible" in capsys.readouterr().err


def test_singular_problem_exit_4(tmp_path):
    doc = {"draws": 8, "problem": {"space": {"num_choice_sets": 1, "profiles_per_set": 2, "attribute_levels": [3, 3]},
                                   "model": {"prior": {"mean": [0, 0, 0, 0], "sd": [1, 1, 1, 1]}}},
           "optimizer": {"kind": "sa", "stopping": "max_iterations", "max_iterations": 50}}
    assert run("generate", write(tmp_path, doc), tmp_path / "o") == 4


def test_thread_env_override(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL_SA)
    monkeypatch.setenv(THREADS_ENV, "3")
    run("generate", cfg, tmp_path / "a")
    assert json.loads((tmp_path / "a" / "report.json").read_text())["config"]["threads"] == 3
    run("generate", cfg, tmp_path / "b", "--threads", "2")
    assert json.loads((tmp_path / "b" / "report.json").read_text())["config"]["threads"] == 2
    monkeypatch.setenv(THREADS_ENV, "many")
    assert run("generate", cfg, tmp_path / "c") == 2


def test_shipped_configs_parse(tmp_path):
    from ppdesign.config import load_config

    for path in CONFIGS.glob("*.json"):
        command = path.stem.split("_")[0]
        load_config(command, path.read_text(), {})


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ppdesign.cli", "generate", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "--threads" in proc.stdout
