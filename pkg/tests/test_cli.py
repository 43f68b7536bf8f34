import csv
import io
import json
import subprocess
import sys

import pytest

from varscope.cli import run


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_enumerate_count():
    code, out, _ = call("enumerate", "--K", "2")
    doc = json.loads(out)
    assert code == 0 and doc["count"] == 5
    assert doc["command"] == "varscope enumerate --K 2" and "version" in doc


def test_enumerate_list_json_and_csv():
    doc = json.loads(call("enumerate", "--K", "3", "--M", "2", "--u", "2", "--list")[1])
    assert doc["count"] == 6 == len(doc["plans"])
    rows = list(csv.reader(io.StringIO(call("enumerate", "--K", "2", "--list", "--out", "csv")[1])))
    assert rows[0] == ["index", "blocks", "latent"] and len(rows) == 6


def test_conjugate_point_mass():
    code, out, _ = call("conjugate", "normal-known-var", "--s2e", "1", "--t2", "0", "--n", "7")
    assert code == 0
    assert json.loads(out)["report"]["terms"] == [1.0, 0.0]


@pytest.mark.parametrize("argv", [
    ["conjugate", "beta-binomial", "--alpha", "2", "--beta", "3", "--successes", "4", "--trials", "9", "--m", "3"],
    ["conjugate", "poisson-gamma", "--alpha", "2", "--beta", "1", "--s", "5", "--n", "3"],
    ["conjugate", "nng", "--alpha0", "3", "--beta0", "2", "--y", "1,-1", "--order", "lambda_first"],
    ["conjugate", "bpg", "--s", "3", "--n", "2", "--order", "lambda_first", "--no-reduce"],
    ["conjugate", "normal-3level", "--b2", "1", "--n", "1"],
])
def test_every_family_reachable(argv):
    code, out, _ = call(*argv)
    rep = json.loads(out)["report"]
    assert code == 0
    assert abs(sum(rep["terms"]) - rep["total"]) <= 1e-12 * max(1, rep["total"])
    code, out, _ = call(*argv, "--out", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["report", "k", "block", "value"] and rows[-1][1] == "total"


def test_anova_limit_and_sweep():
    doc = json.loads(call("anova", "--T", "10000", "--B", "2", "--s2e", "1", "--s2t", "2", "--s2b", "2")[1])
    assert abs(doc["terms"][2] - 0.4) <= 1e-3 and abs(doc["total"] - 1.4) <= 1e-3
    out = call("anova", "--T", "1", "--B", "2", "--s2e", "1", "--s2t", "2", "--s2b", "2",
               "--sweep", "T=1:30:1", "--out", "csv")[1]
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == ["axis", "term1", "term2", "term3", "total", "prop1", "prop2", "prop3"]
    assert len(rows) == 30


def test_anova_bad_sweep_is_usage_error():
    code, _, err = call("anova", "--T", "1", "--B", "2", "--s2e", "1", "--s2t", "2", "--s2b", "2", "--sweep", "T=1")
    assert code == 2 and "sweep" in err


def test_domain_error_exit_code():
    code, out, err = call("conjugate", "normal-known-var", "--s2e", "-1")
    assert code == 1 and out == "" and "sigma0_sq" in err


def test_usage_error_exit_code():
    assert call("nonsense")[0] == 2
    assert call("enumerate")[0] == 2


def _spec(tmp_path):
    p = tmp_path / "nng.json"
    p.write_text(json.dumps({
        "K": 2,
        "levels": [{"name": "mu", "dist": "normal"}, {"name": "lambda2", "dist": "gamma"}],
        "likelihood": {"dist": "nng", "params": {"mu0": 0, "kappa0": 1, "alpha0": 3, "beta0": 2, "y": [1, -1]}},
    }))
    return p


def test_mc_reruns_identical(tmp_path):
    p = _spec(tmp_path)
    argv = ["mc", "--model", str(p), "--plan", "lambda2|mu", "--outer", "300", "--inner", "4", "--seed", "11"]
    a, b = call(*argv), call(*argv)
    assert a[0] == 0 and a[1] == b[1]
    doc = json.loads(a[1])
    assert doc["seed"] == 11 and doc["report"]["method"] == "monte_carlo"
    c = json.loads(call(*argv, "--threads", "4")[1])
    assert c["report"] == doc["report"]


def test_mc_bad_plan(tmp_path):
    code, _, err = call("mc", "--model", str(_spec(tmp_path)), "--plan", "mu|sigma", "--outer", "10")
    assert code == 1 and "sigma" in err


def test_mc_missing_file():
    assert call("mc", "--model", "/nonexistent.json", "--plan", "mu")[0] == 1


def test_implications_dot_and_json(tmp_path):
    cif = tmp_path / "ci.json"
    cif.write_text(json.dumps([{"left": ["V3"], "right": ["V1", "V2"], "given": ["D"]}]))
    code, out, _ = call("implications", "--K", "3", "--zero", "123:3", "--ci", str(cif), "--out", "dot")
    assert code == 0 and out.startswith("digraph") and '"T[312]_1"' in out
    doc = json.loads(call("implications", "--K", "3", "--zero", "123:3")[1])
    assert [z["term"] for z in doc["zero_terms"]] == ["T[123]_3", "T[213]_3"]


def test_bma_both_orders(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("v1_label,v2_label,pred_mean,pred_var\na,x,1,0.5\na,y,2,0.5\nb,x,3,1\nb,y,5,1\n")
    a = json.loads(call("bma", "--draws", str(p), "--order", "v1,v2")[1])["report"]
    b = json.loads(call("bma", "--draws", str(p), "--order", "v2,v1")[1])["report"]
    assert a["total"] == b["total"]
    assert call("bma", "--draws", str(p), "--order", "v3")[0] == 2


def test_challenger_small(tmp_path):
    argv = ["challenger", "--seed", "5", "--draws-per-model", "200", "--burn-in", "200"]
    code, out, _ = call(*argv)
    doc = json.loads(out)
    assert code == 0 and 0 <= doc["posterior_mean_p"] <= 1
    assert set(doc["reports"]) == {"link_then_model", "model_then_link"}
    assert call(*argv)[1] == out


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "varscope", "enumerate", "--K", "2"], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["count"] == 5
