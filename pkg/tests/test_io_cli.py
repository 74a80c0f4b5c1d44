from __future__ import annotations

import csv
import json
import struct

import numpy as np
import pytest

from sparsex.cli import main
from sparsex.io import FormatError, export_instance, load_matrix, load_sxgm, load_vector, save_sxgm
from sparsex.synth import generate_problem, trial_rng


class TestSXGM:
    def test_roundtrip(self, tmp_path, rng):
        a = rng.standard_normal((7, 5))
        save_sxgm(tmp_path / "a.sxgm", a)
        np.testing.assert_array_equal(load_sxgm(tmp_path / "a.sxgm"), a)

    def test_header_layout(self, tmp_path):
        a = np.arange(6, dtype=float).reshape(2, 3)
        save_sxgm(tmp_path / "a.sxgm", a)
        raw = (tmp_path / "a.sxgm").read_bytes()
        assert raw[:4] == b"SXGM"
        assert struct.unpack("<IQQ", raw[4:24]) == (1, 2, 3)
        # row-major little-endian doubles
        np.testing.assert_array_equal(np.frombuffer(raw[24:], "<f8"), np.arange(6.0))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.sxgm").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FormatError):
            load_sxgm(tmp_path / "x.sxgm")

    def test_bad_version(self, tmp_path):
        (tmp_path / "x.sxgm").write_bytes(struct.pack("<4sIQQ", b"SXGM", 2, 0, 0))
        with pytest.raises(FormatError):
            load_sxgm(tmp_path / "x.sxgm")

    def test_truncated(self, tmp_path):
        (tmp_path / "x.sxgm").write_bytes(struct.pack("<4sIQQ", b"SXGM", 1, 2, 2) + bytes(8))
        with pytest.raises(FormatError):
            load_sxgm(tmp_path / "x.sxgm")
        (tmp_path / "y.sxgm").write_bytes(b"SXGM")
        with pytest.raises(FormatError):
            load_sxgm(tmp_path / "y.sxgm")

    def test_csv_and_vectors(self, tmp_path):
        (tmp_path / "m.csv").write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(load_matrix(tmp_path / "m.csv"), [[1, 2], [3, 4]])
        save_sxgm(tmp_path / "v.sxgm", np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(load_vector(tmp_path / "v.sxgm"), [1, 2, 3])
        with pytest.raises(FormatError):
            load_vector(tmp_path / "m.csv")

    def test_export_instance(self, tmp_path):
        p = generate_problem(12, 9, 2, 3.0, rng=trial_rng(4), seed=4)
        paths = export_instance(p, tmp_path / "inst")
        np.testing.assert_array_equal(load_sxgm(paths["X"]), p.X.data)
        np.testing.assert_array_equal(load_vector(paths["y"]), p.y)
        meta = json.loads((tmp_path / "inst.json").read_text())
        assert meta["support"] == p.w_star.support.tolist()
        assert meta["instance_hash"] == p.instance_hash


class TestCLI:
    def test_generate_then_solve(self, tmp_path, capsys):
        stem = tmp_path / "inst"
        assert main(["generate", "--n", "60", "--d", "80", "--k", "4", "--snr", "300",
                     "--seed", "3", "--out", str(stem)]) == 0
        meta = json.loads((tmp_path / "inst.json").read_text())
        capsys.readouterr()
        assert main(["solve", str(tmp_path / "inst.sxgm"), str(tmp_path / "inst.y.sxgm"),
                     "--k", "4", "--trace", str(tmp_path / "tr.csv"),
                     "--out", str(tmp_path / "res.json")]) == 0
        res = json.loads((tmp_path / "res.json").read_text())
        assert res["support"] == meta["support"]
        assert len((tmp_path / "tr.csv").read_text().strip().splitlines()) == 5

    def test_solve_csv_input(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 6))
        y = X[:, 2] * 3.0
        np.savetxt(tmp_path / "X.csv", X, delimiter=",")
        np.savetxt(tmp_path / "y.csv", y, delimiter=",")
        assert main(["solve", str(tmp_path / "X.csv"), str(tmp_path / "y.csv"), "--k", "1",
                     "--solver", "cosamp"]) == 0
        res = json.loads(capsys.readouterr().out)
        assert res["support"] == [2]

    def test_solve_dimension_mismatch(self, tmp_path):
        np.savetxt(tmp_path / "X.csv", np.ones((4, 3)), delimiter=",")
        np.savetxt(tmp_path / "y.csv", np.ones(5), delimiter=",")
        assert main(["solve", str(tmp_path / "X.csv"), str(tmp_path / "y.csv"), "--k", "1"]) == 1

    def test_bench_columns_and_summary(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        rc = main(["bench", "--n", "40", "--d", "60", "--k", "3", "--trials", "2",
                   "--solver", "omp", "--selector", "exact,greedy", "--out", str(out)])
        assert rc == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert ",".join(rows[0]) == ("trial,solver,selector,stopping,n,d,k,snr,f_measure,"
                                     "residual,iterations,macs,wall_time_ms,agree_exact,seed,"
                                     "instance_hash")
        assert len(rows) == 5
        jl = [json.loads(line) for line in (tmp_path / "b.jsonl").read_text().splitlines()]
        assert len(jl) == 4 and all(r["status"] == "ok" for r in jl)
        capsys.readouterr()
        assert main(["summarize", str(out), "--out", str(tmp_path / "s.csv")]) == 0
        assert "greedy" in capsys.readouterr().out

    def test_bench_config_file(self, tmp_path):
        cfg = tmp_path / "exp.ini"
        cfg.write_text(
            "[problem]\nn = 40\nd = 50\nk = 3, 4\nsnr = 10\ntrials = 2\nseed = 5\n\n"
            "[run]\nout = %s\n\n"
            "[cell exact-omp]\nsolver = omp\nselector = exact\n\n"
            "[cell halving]\nsolver = omp\nselector = halving-nonstoch\nbudget_ratio = 0.3\n"
            % (tmp_path / "c.csv"))
        assert main(["bench", "--config", str(cfg), "--quiet"]) == 0
        with open(tmp_path / "c.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 2 * 2
        assert {r["stopping"] for r in rows} == {"full", "budget:0.3"}
        assert {r["k"] for r in rows} == {"3", "4"}

    def test_bench_failed_cell_exit_code(self, tmp_path, capsys):
        # k=8 > n=6 makes every OMP cell fail its precondition
        rc = main(["bench", "--n", "6", "--d", "20", "--k", "8", "--trials", "1",
                   "--solver", "omp", "--selector", "exact", "--out", str(tmp_path / "f.csv"),
                   "--quiet"])
        assert rc == 2
        jl = [json.loads(line) for line in (tmp_path / "f.jsonl").read_text().splitlines()]
        assert jl[0]["status"] == "failed" and "exceeds" in jl[0]["error"]

    def test_bad_arguments(self, tmp_path, capsys):
        assert main(["bench", "--trials", "0", "--out", str(tmp_path / "z.csv")]) == 1
        assert main(["bench", "--selector", "ucb", "--out", str(tmp_path / "z.csv")]) == 1
