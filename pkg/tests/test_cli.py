import json
import os

import numpy as np
import pytest

from nbdisp import cli, io
from nbdisp.errors import ParseError, ValidationError


def write_tsv(path, header, rows, newline="\n"):
    lines = ["\t".join(header)] + ["\t".join(str(x) for x in r) for r in rows]
    path.write_bytes((newline.join(lines) + newline).encode())
    return path


def test_ingest_well_formed(tmp_path):
    p = write_tsv(tmp_path / "m.tsv", ["gene", "a", "b"], [["x", 10, 20], ["y", 40, 80]])
    m = io.ingest_tsv(p)
    assert m.gene_ids == ["x", "y"] and m.sample_names == ["a", "b"]
    np.testing.assert_array_equal(m.counts, [[10, 20], [40, 80]])
    assert m.group_sizes is None


def test_ingest_crlf_matches_lf(tmp_path):
    rows = [["x", 1, 2, 3], ["y", 4, 5, 6]]
    a = io.ingest_tsv(write_tsv(tmp_path / "a.tsv", ["g", "s1", "s2", "s3"], rows))
    b = io.ingest_tsv(write_tsv(tmp_path / "b.tsv", ["g", "s1", "s2", "s3"], rows, newline="\r\n"))
    assert a.gene_ids == b.gene_ids and a.sample_names == b.sample_names
    np.testing.assert_array_equal(a.counts, b.counts)


@pytest.mark.parametrize("bad,line", [("-3", 3), ("2.5", 3), ("abc", 3)])
def test_ingest_bad_value_names_line(tmp_path, bad, line):
    p = write_tsv(tmp_path / "m.tsv", ["gene", "a", "b"], [["x", 1, 2], ["y", bad, 4]])
    with pytest.raises(ParseError) as e:
        io.ingest_tsv(p)
    assert e.value.line == line and f"line {line}" in str(e.value)


def test_ingest_wrong_field_count(tmp_path):
    p = write_tsv(tmp_path / "m.tsv", ["gene", "a", "b"], [["x", 1, 2], ["y", 4]])
    with pytest.raises(ParseError) as e:
        io.ingest_tsv(p)
    assert e.value.line == 3


def test_ingest_duplicate_id(tmp_path):
    p = write_tsv(tmp_path / "m.tsv", ["gene", "a", "b"], [["x", 1, 2], ["x", 4, 5]])
    with pytest.raises(ValidationError, match="duplicate"):
        io.ingest_tsv(p)


def test_ingest_with_labels_reorders(tmp_path):
    p = write_tsv(tmp_path / "m.tsv", ["gene", "a", "b", "c", "d"], [["x", 1, 2, 3, 4]])
    m = io.ingest_tsv(p, ["T", "C", "T", "C"])
    assert m.group_sizes == (2, 2) and m.sample_names == ["a", "c", "b", "d"]
    np.testing.assert_array_equal(m.counts, [[1, 3, 2, 4]])
    with pytest.raises(ValidationError):
        io.ingest_tsv(p, ["T", "C", "X", "C"])


def test_csv_round_trip(tmp_path):
    p = tmp_path / "o.csv"
    io.write_csv(p, "test", [["g,1", 1.5, 0.25, 1.0, 2.0, 1.0, 1, "quadrature", True, 0.75]])
    schema, header, rows = io.read_csv(p)
    assert schema == "nbdisp-test/1"
    assert header == io.SCHEMAS["test"][2]
    assert rows[0]["gene_id"] == "g,1" and float(rows[0]["log_bf10"]) == 1.5 and rows[0]["selected"] == "true"


def test_staged_outputs_discard_on_error(tmp_path):
    final = tmp_path / "x.csv"
    with pytest.raises(RuntimeError):
        with io.staged_outputs() as out:
            with open(out.path(final), "w") as fh:
                fh.write("partial")
            raise RuntimeError
    assert list(tmp_path.iterdir()) == []


# --- command line ----------------------------------------------------------

def run(argv, capsys=None):
    return cli.main([str(a) for a in argv])


def test_normalize_worked_example(tmp_path):
    p = write_tsv(tmp_path / "m.tsv", ["gene", "a", "b"], [["x", 10, 20], ["y", 40, 80]])
    out = tmp_path / "n.csv"
    assert run(["normalize", p, "-o", out]) == 0
    _, header, rows = io.read_csv(out)
    assert header == ["sample", "abundance"]
    np.testing.assert_allclose([float(r["abundance"]) for r in rows], [0.7071, 1.4142], atol=1e-4)


def test_estimate_table1(tmp_path):
    rows = [["r1", 2, 3, 4, 5, 8], ["r2", 2, 3, 4, 5, 9], ["r3", 2, 3, 4, 3, 11], ["r4", 2, 3, 4, 2, 12]]
    p = write_tsv(tmp_path / "t1.tsv", ["gene", "a", "b", "c", "d", "e"], rows)
    out = tmp_path / "e.csv"
    assert run(["estimate", p, "-o", out]) == 0
    _, header, got = io.read_csv(out)
    assert header == io.SCHEMAS["estimate"][2]
    assert float(got[3]["alpha_mle"]) == pytest.approx(0.329, abs=1e-3)
    assert float(got[3]["sd_hat"]) == pytest.approx(3.402, abs=1e-3)
    assert got[0]["mle_truncated"] == "true"


def test_unknown_subcommand_exits_1(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_input_exits_1(tmp_path):
    assert run(["normalize", tmp_path / "nope.tsv", "-o", tmp_path / "x.csv"]) == 1


def _de_table(tmp_path, identical=False, n=60, seed=0):
    rng = np.random.default_rng(seed)
    mu = np.exp(rng.uniform(np.log(20), np.log(400), n))
    g1 = rng.negative_binomial(5, 5 / (5 + mu[:, None]), size=(n, 3))
    g2 = g1.copy() if identical else rng.negative_binomial(5, 5 / (5 + mu[:, None] * np.where(np.arange(n) < 8, 10, 1)[:, None]), size=(n, 3))
    rows = [[f"g{i}", *g1[i], *g2[i]] for i in range(n)]
    return write_tsv(tmp_path / "de.tsv", ["gene", "c1", "c2", "c3", "t1", "t2", "t3"], rows)


def test_test_identical_groups_selects_nothing(tmp_path):
    p = _de_table(tmp_path, identical=True)
    out = tmp_path / "r.csv"
    assert run(["test", p, "--groups", "c,c,c,t,t,t", "--abundances", "unit", "-o", out, "--fdp-target", "0.05"]) == 0
    summary = json.loads((tmp_path / "r.json").read_text())
    assert summary["n_selected"] == 0
    _, _, rows = io.read_csv(out)
    assert not any(r["selected"] == "true" for r in rows)


def test_test_output_schema_and_summary(tmp_path):
    p = _de_table(tmp_path)
    out, curve = tmp_path / "r.csv", tmp_path / "curve.csv"
    groups = tmp_path / "groups.csv"
    groups.write_text("sample,group\nc1,ctl\nc2,ctl\nc3,ctl\nt1,trt\nt2,trt\nt3,trt\n")
    code = run(["test", p, "--groups-file", groups, "--abundances", "unit", "-o", out, "--curve", curve, "--fdp-target", "0.5"])
    assert code == 0
    schema, header, rows = io.read_csv(out)
    assert schema == "nbdisp-test/1"
    assert header == ["gene_id", "log_bf10", "post_prob_h1", "mu1_hat", "mu2_hat", "log2_fold_change", "rank", "method", "selected", "expected_fdp"]
    probs = [float(r["post_prob_h1"]) for r in rows]
    assert probs == sorted(probs, reverse=True)
    assert [int(r["rank"]) for r in rows] == list(range(1, len(rows) + 1))
    summary = json.loads((tmp_path / "r.json").read_text())
    assert set(summary) >= {"pi1_hat", "u0", "v0", "u1", "v1", "n_selected", "expected_fdp"}
    assert summary["n_selected"] == sum(r["selected"] == "true" for r in rows)
    _, cheader, crows = io.read_csv(curve)
    assert cheader == ["n_selected", "expected_fdp"] and len(crows) == len(rows)


def test_test_known_abundances_and_threads(tmp_path, monkeypatch):
    p = _de_table(tmp_path, n=12)
    ab = tmp_path / "ab.csv"
    ab.write_text("sample,abundance\nc1,0.8\nc2,1.0\nc3,1.2\nt1,0.8\nt2,1.0\nt3,1.2\n")
    common = ["test", p, "--groups", "c,c,c,t,t,t", "--abundances", f"known:{ab}", "--n-iter", "2000", "--burn-in", "200"]
    monkeypatch.setenv("NBDISP_SEED", "17")
    assert run(common + ["-o", tmp_path / "a.csv", "--threads", "1"]) == 0
    assert run(common + ["-o", tmp_path / "b.csv", "--threads", "3"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    # a flag beats the environment
    assert run(common + ["-o", tmp_path / "c.csv", "--seed", "18"]) == 0
    assert (tmp_path / "c.csv").read_bytes() != (tmp_path / "a.csv").read_bytes()
    _, _, rows = io.read_csv(tmp_path / "a.csv")
    assert {r["method"] for r in rows} == {"mcmc"}


def test_numerical_failure_exits_2_and_leaves_no_output(tmp_path):
    # every gene has the same counts, so the gamma fit to the estimates is degenerate
    rows = [[f"g{i}", 3, 9, 4, 3, 9, 4] for i in range(5)]
    p = write_tsv(tmp_path / "d.tsv", ["gene", "a", "b", "c", "d", "e", "f"], rows)
    (tmp_path / "out").mkdir()
    out = tmp_path / "out" / "r.csv"
    assert run(["test", p, "--groups", "1,1,1,2,2,2", "--abundances", "unit", "-o", out]) == 2
    assert not out.exists() and not (tmp_path / "out" / "r.json").exists()
    assert os.listdir(tmp_path / "out") == []


def test_validation_failure_exits_1(tmp_path):
    p = _de_table(tmp_path, n=5)
    assert run(["test", p, "--groups", "c,c,t,t", "-o", tmp_path / "r.csv"]) == 1
    assert not (tmp_path / "r.csv").exists()


def test_bootstrap_command(tmp_path):
    out = tmp_path / "b.csv"
    assert run(["bootstrap", "118,131,136,176,274,1022,1675,14137,15714,60886", "--n-boot", "50", "-o", out, "--seed", "1"]) == 0
    _, header, rows = io.read_csv(out)
    assert header == ["alpha_hat", "sd"] and len(rows) == 50
    assert run(["bootstrap", "1,-2", "-o", out]) == 1


def test_simulate_command(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("preset = study1b\nn_genes = 30\nn_deg = 5\nn_replicates = 2\n")
    outdir = tmp_path / "sim"
    assert run(["simulate", cfg, "-o", outdir, "--seed", "3"]) == 0
    names = sorted(os.listdir(outdir))
    assert names == ["fdp_0.csv", "fdp_1.csv", "genes_0.csv", "genes_1.csv", "roc_0.csv", "roc_1.csv", "summary.json"]
    _, header, rows = io.read_csv(outdir / "roc_0.csv")
    assert header == ["fpr", "tpr"] and rows[-1] == {"fpr": "1.0", "tpr": "1.0"}
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["scenario"]["seed"] == 3 and len(summary["replicates"]) == 2


def test_simulate_table2(tmp_path):
    outdir = tmp_path / "t2"
    assert run(["simulate", "--table2", "--reps", "20", "-o", outdir]) == 0
    assert len((outdir / "table2.csv").read_text().splitlines()) == 25
    assert run(["simulate", "-o", outdir]) == 1
