import json

import pytest
from click.testing import CliRunner

from shadowlab.cli import main

SADDLE = {"matrix": [[-2.0, 0.0], [0.0, 1.0]]}


def write(tmp_path, system, suite, params=None, name="exp.json"):
    cfg = {"seed": 1, "suite": suite, "system": system, "params": params or {}}
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def invoke(*args):
    return CliRunner().invoke(main, list(args))


def sections(output):
    out, cur = {}, None
    for line in output.splitlines():
        if line.startswith("--- ") and line.endswith(" ---"):
            cur = line[4:-4]
            out[cur] = []
        elif cur is not None and not line.startswith("report:"):
            out[cur].append(line)
    return out


def test_run_pass_writes_figures(tmp_path):
    cfg = write(tmp_path, {"kind": "pendulum"}, "manifolds")
    res = invoke("run", cfg, "-o", str(tmp_path / "out"))
    assert res.exit_code == 0, res.output
    sec = sections(res.output)
    assert sec["verdicts"][0] == "claim,status,statistic,threshold"
    assert [r.split(",")[:2] for r in sec["verdicts"][1:]] == [["MF-01", "pass"], ["MF-02", "pass"]]
    pngs = [r.split(",")[0] for r in sec["artifacts"] if r.split(",")[0].endswith(".png")]
    assert pngs
    for name in pngs:
        assert (tmp_path / "out" / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert (tmp_path / "out" / "verdicts.csv").exists()


def test_run_fail_exit_code(tmp_path):
    cfg = write(tmp_path, {"kind": "linear", "params": SADDLE}, "shadowing",
                {"orbits": 1, "segments": 40, "shadow_tol": 1e-9})
    res = invoke("run", cfg, "-o", str(tmp_path / "out"), "--no-csv")
    assert res.exit_code == 1
    assert "SH-01,fail" in res.output
    assert not (tmp_path / "out" / "verdicts.csv").exists()


def test_run_inconclusive_exit_code(tmp_path):
    cfg = write(tmp_path, {"kind": "linear", "params": {"matrix": [[0.0, 1.0], [-1.0, 0.0]]}}, "hyperbolicity")
    res = invoke("run", cfg, "-o", str(tmp_path / "out"))
    assert res.exit_code == 2
    assert "HY-01,inconclusive" in res.output


def test_run_without_applicable_claims(tmp_path):
    cfg = write(tmp_path, {"kind": "lorenz"}, "manifolds")
    res = invoke("run", cfg, "-o", str(tmp_path / "out"))
    assert res.exit_code == 2
    assert sections(res.output)["verdicts"] == ["claim,status,statistic,threshold"]


@pytest.mark.parametrize("text", ['{"seed": 1, "suite": "manifolds"}', "{not json"])
def test_config_errors_exit_3(tmp_path, text):
    p = tmp_path / "bad.json"
    p.write_text(text)
    res = invoke("run", str(p))
    assert res.exit_code == 3
    assert "configuration error" in res.output


def test_build_error_exit_3(tmp_path):
    cfg = write(tmp_path, {"kind": "pendulum", "params": {"mass": 1.0}}, "manifolds")
    res = invoke("run", cfg, "-o", str(tmp_path / "out"))
    assert res.exit_code == 3


def test_claims_listing():
    res = invoke("claims", "--json")
    ids = [c["id"] for c in json.loads(res.output)]
    assert len(ids) == 24 and ids == sorted(ids)
    assert "SH-01" in invoke("claims").output


def test_catalog_listing():
    out = invoke("catalog").output
    assert "suspended_toral_automorphism:" in out and "defaults:" in out


def test_graph_command(tmp_path):
    cfg = write(tmp_path, {"kind": "gradient_morse_smale"}, "chain_dynamics", {"depth": 4})
    res = invoke("graph", cfg, "-o", str(tmp_path / "g"))
    assert res.exit_code == 0, res.output
    assert "nodes,256" in res.output
    assert (tmp_path / "g" / "graph_edges.csv").exists()
    assert json.loads((tmp_path / "g" / "graph_boxes.json").read_text())
