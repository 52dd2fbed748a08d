import csv
import json
import subprocess
import sys

import pytest

from piml import problems
from piml.cli import main
from piml.config import ConfigError, validate
from piml.problems import Box, ProblemSpec

POISSON = {
    "schema": "piml.experiment/1", "problem": "poisson1d", "mode": "vanilla", "seed": 0, "epochs": 5,
    "network": {"hidden": [6]}, "collocation": {"interior": 8, "boundary": 1, "strategy": "equispaced"},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_validate_prints_defaults(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, POISSON)]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["lr"] == 1e-3 and cfg["network"]["activation"] == "tanh"
    assert cfg["weights"] == {"w_f": 1.0, "w_b": 1.0, "w_i": 1.0, "w_g": []}


@pytest.mark.parametrize("patch, field", [
    ({"mode": "xpinnn"}, "mode"),
    ({"problem": "poisson2d"}, "problem"),
    ({"network": {"hidden": [0]}}, "network.hidden"),
    ({"collocation": {"strategy": "sobol"}}, "collocation.strategy"),
    ({"mode": "gpinn"}, "weights.w_g"),
    ({"xpinn": {"cuts": [[0, 9.0]]}, "mode": "xpinn"}, "xpinn.cuts[0]"),
    ({"colocation": {}}, "colocation"),
])
def test_validation_errors_name_the_field(tmp_path, capsys, patch, field):
    assert main(["validate", "--config", write(tmp_path, {**POISSON, **patch})]) == 1
    assert capsys.readouterr().err.startswith(f"config error: {field}:")


def test_missing_fields_and_bad_files(tmp_path, capsys):
    cfg = dict(POISSON)
    del cfg["seed"]
    assert main(["validate", "--config", write(tmp_path, cfg)]) == 1
    assert "seed: missing required field" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert main(["validate", "--config", str(tmp_path / "broken.json")]) == 1
    assert main(["validate", "--config", str(tmp_path / "absent.json")]) == 1


def test_gpinn_rejects_third_order_residual(monkeypatch):
    cubic = ProblemSpec("cubic", ("x",), Box((0.0,), (1.0,)), ("u",),
                        lambda ctx: ctx["u"].d((0, 0, 0)), {"u": ((0, 0, 0),)})
    monkeypatch.setitem(problems.REGISTRY, "cubic", lambda: cubic)
    with pytest.raises(ConfigError) as exc:
        validate({**POISSON, "problem": "cubic", "mode": "gpinn", "weights": {"w_g": 1.0}})
    assert exc.value.path == "mode"
    validate({**POISSON, "problem": "cubic"})


def test_problem_params_pass_through(tmp_path):
    cfg = {**POISSON, "problem": "diffusion_reaction", "problem_params": {"hard_constraints": True},
           "collocation": {"interior": 6, "boundary": 0}, "epochs": 2}
    out = tmp_path / "o"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    saved = json.loads((out / "config.json").read_text())
    assert saved["problem_params"] == {"hard_constraints": True}
    with pytest.raises(ConfigError):
        validate({**POISSON, "problem_params": {"nonsense": 1}})


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", write(tmp_path, POISSON), "--out", str(out)]) == 0
    hist = rows(out / "history.csv")
    assert len(hist) == 1 + 5 and hist[0][0] == "epoch"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and "u" in summary["l2_rel_error"]
    assert (out / summary["checkpoints"]["u"]).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"config_sha256", "version", "start", "end"} <= set(manifest)


def test_zero_epochs_header_only(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", write(tmp_path, {**POISSON, "epochs": 0}), "--out", str(out)]) == 0
    assert len(rows(out / "history.csv")) == 1


def test_reruns_are_byte_identical(tmp_path):
    for cfg in (POISSON, {**POISSON, "mode": "sa"}, {**POISSON, "mode": "gpinn", "weights": {"w_g": 0.1}}):
        path = write(tmp_path, cfg)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", path, "--out", str(a)]) == 0
        assert main(["run", "--config", path, "--out", str(b)]) == 0
        assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()


def test_xpinn_per_subdomain_outputs(tmp_path):
    cfg = {**POISSON, "mode": "xpinn",
           "xpinn": {"cuts": [[0, 0.0]], "interface_mode": "cpinn", "interface_weight": 20}}
    out = tmp_path / "o"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out), "--threads", "2"]) == 0
    assert len(rows(out / "history_sub0.csv")) == 6 and len(rows(out / "history_sub1.csv")) == 6
    assert rows(out / "interfaces.csv")[0] == ["epoch", "iface0_0_1"]
    summary = json.loads((out / "summary.json").read_text())
    assert [s["id"] for s in summary["subdomains"]] == [0, 1]
    assert "u" in summary["l2_rel_error"]
    one = tmp_path / "t1"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(one), "--threads", "1"]) == 0
    for f in ("history_sub0.csv", "history_sub1.csv", "interfaces.csv"):
        assert (one / f).read_bytes() == (out / f).read_bytes()


def test_graph_tasks_run(tmp_path):
    for task, key in (("diffusion", "alpha_hat"), ("stencil", "theta_hat")):
        out = tmp_path / task
        cfg = {"schema": "piml.experiment/1", "mode": "graph", "seed": 0, "graph": {"task": task}}
        assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
        assert key in json.loads((out / "summary.json").read_text())
    cfg = {"schema": "piml.experiment/1", "mode": "graph", "seed": 0, "epochs": 20,
           "graph": {"task": "flux", "model": "polynomial", "random": {"n": 6, "p": 0.5}}}
    out = tmp_path / "flux"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert len(json.loads((out / "summary.json").read_text())["theta_hat"]) == 3


def test_sweep_rows(tmp_path):
    cfg = {**POISSON, "mode": "gpinn", "epochs": 2, "weights": {"w_g": 1.0},
           "sweep": {"grid": {"weights.w_g": [1, 0.1, 0.01]}}}
    out = tmp_path / "s"
    assert main(["sweep", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    table = rows(out / "sweep.csv")
    assert table[0] == ["cell", "weights.w_g", "status", "loss_total", "l2_rel_error", "error"]
    assert [r[1] for r in table[1:]] == ["1", "0.1", "0.01"]
    assert all(r[2] == "ok" for r in table[1:])


def test_sweep_failed_cell_is_recorded(tmp_path):
    out = tmp_path / "s"
    grid = json.dumps({"collocation.interior": [4, -1, 6]})
    assert main(["sweep", "--config", write(tmp_path, {**POISSON, "epochs": 1}), "--out", str(out),
                 "--grid", grid]) == 0
    table = rows(out / "sweep.csv")
    assert [r[2] for r in table[1:]] == ["ok", "failed", "ok"]
    assert "collocation.interior" in table[2][5]


def test_sweep_empty_grid(tmp_path, capsys):
    assert main(["sweep", "--config", write(tmp_path, POISSON), "--out", str(tmp_path / "s"), "--grid", "{}"]) == 1
    assert "sweep.grid" in capsys.readouterr().err
    assert main(["sweep", "--config", write(tmp_path, POISSON), "--out", str(tmp_path / "s")]) == 1


def test_abort_exit_code(tmp_path, capsys):
    cfg = {**POISSON, "lr": 1e300, "epochs": 20}
    out = tmp_path / "o"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out)]) == 2
    assert capsys.readouterr().err.startswith("error:")
    assert json.loads((out / "summary.json").read_text())["status"] == "aborted"


def test_seed_override_and_threads(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, POISSON), "--seed-override", "7"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 7
    assert main(["validate", "--config", write(tmp_path, POISSON), "--threads", "0"]) == 1


def test_check_verb_and_module_entry():
    out = subprocess.run([sys.executable, "-m", "piml", "check"], capture_output=True, text=True)
    assert out.returncode == 0, out.stdout + out.stderr
    lines = out.stdout.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
