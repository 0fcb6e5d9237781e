import json
import os

import numpy as np
import pytest

from tetherquad import report
from tetherquad.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from tetherquad.scenarios import load_scenario, run

SHORT_FIG2 = "[scenario]\npreset = fig2\nname = short2\nduration = 0.3\n"
SHORT_FIG5 = ("[scenario]\npreset = fig5\nname = short5\nduration = 0.4\n"
              "[controller.flexible]\nt_switch = 0.2\n")
DIVERGING = ("[scenario]\npreset = fig2\nname = wild\nmodel = simplified\nduration = 2\n"
             "[controller.gains]\nk_q = 1e5\nk_w = 1e3\n[integrator]\nh = 0.01\n")


@pytest.fixture(scope="module")
def short_traj():
    cfg = load_scenario(SHORT_FIG5)
    return cfg, run(cfg).trajectory


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestCsv:
    def test_header_schema(self):
        h = report.csv_header(2)
        assert h[:7] == ["t", "q1x", "q1y", "q1z", "q2x", "q2y", "q2z"]
        assert h[-1] == "phase" and "exd_z" in h and "R33" in h
        assert len(h) == 1 + 12 + 9 + 3 + 1 + 3 + 3 + 1 + 18 + 1

    def test_round_trip_bit_exact(self, tmp_path, short_traj):
        _, tr = short_traj
        path = str(tmp_path / "a.csv")
        report.write_csv(tr, path)
        back = report.read_csv(path)
        for name in ("t", "q", "w", "R", "Om", "f", "M", "u", "T", "e_q", "e_w", "e_R",
                     "e_Om", "e_x", "e_xd", "phase"):
            np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))

    def test_nan_written_as_empty(self, tmp_path, short_traj):
        _, tr = short_traj
        path = str(tmp_path / "a.csv")
        report.write_csv(tr, path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            row = fh.readline().strip().split(",")
        # the tension column is undefined for a multi-link tether
        assert row[header.index("T")] == ""
        assert row[header.index("phase")] == "1"

    def test_rejects_bad_header(self, tmp_path):
        path = write(tmp_path, "bad.csv", "t,x,y\n0,1,2\n")
        with pytest.raises(ValueError):
            report.read_csv(path)

    def test_meta_round_trip(self, tmp_path, short_traj):
        cfg, _ = short_traj
        path = str(tmp_path / "a.meta.json")
        report.write_meta(path, cfg.params, 2e-4, {"k_x": 4.0})
        meta = report.read_meta(path)
        np.testing.assert_array_equal(meta["params"].M, cfg.params.M)
        assert meta["h"] == 2e-4 and meta["k_x"] == 4.0
        assert report.meta_path("out/x.csv") == os.path.join("out", "x.meta.json")

    def test_json_nan_is_null(self, tmp_path):
        path = str(tmp_path / "m.json")
        report.write_json(path, {"a": float("nan"), "b": [np.float64(1.5)], "c": np.int64(3)})
        assert json.loads(open(path).read()) == {"a": None, "b": [1.5], "c": 3}


class TestRun:
    def test_outputs_and_verify(self, tmp_path, capsys):
        cfg = write(tmp_path, "s.ini", SHORT_FIG5)
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out, "--audit", "--decimate", "2"]) == EXIT_OK
        files = sorted(os.listdir(out))
        assert files == ["short5.csv", "short5.meta.json", "short5.metrics.json"]
        metrics = json.load(open(os.path.join(out, "short5.metrics.json")))
        assert metrics["audit"]["passed"] and metrics["n"] == 5
        assert main(["verify", os.path.join(out, "short5.csv")]) == EXIT_OK
        assert "max_el_residual" in capsys.readouterr().out

    def test_deterministic_csv(self, tmp_path):
        cfg = write(tmp_path, "s.ini", SHORT_FIG2)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["run", cfg, "--out", a]) == EXIT_OK
        assert main(["run", cfg, "--out", b]) == EXIT_OK
        data = [open(os.path.join(d, "short2.csv"), "rb").read() for d in (a, b)]
        assert data[0] == data[1]

    def test_svg_only_on_request(self, tmp_path):
        pytest.importorskip("matplotlib")
        cfg = write(tmp_path, "s.ini", SHORT_FIG2)
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out, "--svg"]) == EXIT_OK
        with open(os.path.join(out, "short2.svg")) as fh:
            assert "<svg" in fh.read()

    def test_parallel_jobs(self, tmp_path):
        a = write(tmp_path, "a.ini", SHORT_FIG2)
        b = write(tmp_path, "b.ini", SHORT_FIG2.replace("short2", "other2"))
        out = str(tmp_path / "out")
        assert main(["run", a, b, "--out", out, "--jobs", "2"]) == EXIT_OK
        assert {"short2.csv", "other2.csv"} <= set(os.listdir(out))


class TestExitCodes:
    def test_unknown_preset(self, tmp_path, capsys):
        assert main(["run", "fig9", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_missing_field(self, tmp_path, capsys):
        cfg = write(tmp_path, "s.ini", "[scenario]\ncontroller = taut_n1\n[system]\nlinks = 1\n")
        assert main(["run", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "[system] quad_mass" in capsys.readouterr().err

    def test_bad_decimate(self, tmp_path):
        assert main(["run", "fig2", "--decimate", "0", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_numerical_failure(self, tmp_path, capsys):
        cfg = write(tmp_path, "s.ini", DIVERGING)
        assert main(["run", cfg, "--out", str(tmp_path / "out")]) == EXIT_NUMERICAL
        assert "numerical failure" in capsys.readouterr().err
        assert not os.path.exists(tmp_path / "out" / "wild.csv")

    def test_worst_code_wins(self, tmp_path):
        good = write(tmp_path, "g.ini", SHORT_FIG2)
        assert main(["run", good, "fig9", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_verify_missing_file(self, tmp_path):
        assert main(["verify", str(tmp_path / "none.csv")]) == EXIT_CONFIG

    def test_verify_mismatched_meta(self, tmp_path):
        out = str(tmp_path / "out")
        assert main(["run", write(tmp_path, "s.ini", SHORT_FIG2), "--out", out]) == EXIT_OK
        meta = os.path.join(out, "short2.meta.json")
        m = json.load(open(meta))
        m["params"]["link_masses"] = [0.1, 0.2]
        m["params"]["link_lengths"] = [2.0, 3.0]
        json.dump(m, open(meta, "w"))
        assert main(["verify", os.path.join(out, "short2.csv")]) == EXIT_CONFIG

    def test_verify_tampered_rates(self, tmp_path, rng):
        out = str(tmp_path / "out")
        assert main(["run", write(tmp_path, "s.ini", SHORT_FIG2), "--out", out]) == EXIT_OK
        path = os.path.join(out, "short2.csv")
        tr = report.read_csv(path)
        tr.w = tr.w * (1 + 0.01 * rng.normal(size=tr.w.shape))
        report.write_csv(tr, path)
        assert main(["verify", path]) == EXIT_AUDIT

    def test_gains(self, capsys):
        assert main(["gains", "fig5"]) == EXIT_OK
        assert "K_x (3x10)" in capsys.readouterr().out
        assert main(["gains", "fig2"]) == EXIT_OK
        assert "certificate valid: True" in capsys.readouterr().out
