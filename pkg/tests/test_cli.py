import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dense_inla.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main
from dense_inla.errors import InvalidGraph, ParseError
from dense_inla.io import (
    DataTable,
    format_graph,
    parse_config_text,
    parse_graph_text,
    read_data_csv,
    read_rows,
    write_data_csv,
    write_rows,
)
from dense_inla.simulate import generate_lattice_graph

CONFIG = """\
block = intercept
block = {rw} rankdef={k}
block = iid
block = besag rankdef=1
block = iid
block = interaction{kind}
likelihood = poisson
offset = E
strategy = GA
"""


def write_config(path, kind=1, rw="rw1", **extra):
    text = CONFIG.format(kind=kind, rw=rw, k=int(rw[-1]))
    text += "".join(f"{k} = {v}\n" for k, v in extra.items())
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n", "6", "--m", "4", "--type", "1", "--order", "1", "--seed", "3", "--out", str(d)]) == EXIT_OK
    return d


class TestGraphFile:
    def test_path_graph(self):
        g = parse_graph_text("3\n1 1 2\n2 2 1 3\n3 1 2\n")
        assert g.edges == [(0, 1), (1, 2)]

    def test_single_edge(self):
        assert parse_graph_text("2\n1 1 2\n2 1 1\n").edges == [(0, 1)]

    def test_asymmetric(self):
        with pytest.raises(InvalidGraph):
            parse_graph_text("2\n1 1 2\n2 0\n")

    @pytest.mark.parametrize(
        "text, line",
        [("3\n1 1 2\n2 x 1\n3 0\n", 3), ("2\n1 2 2\n2 1 1\n", 2), ("2\n1 1 2\n", 2), ("", 1), ("2 2\n", 1)],
    )
    def test_malformed_reports_line(self, text, line):
        with pytest.raises(ParseError) as info:
            parse_graph_text(text)
        assert info.value.line == line

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 60))
    def test_round_trip(self, m):
        g = generate_lattice_graph(m)
        assert parse_graph_text(format_graph(g)) == g


class TestDataFile:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(0, 3))
    def test_round_trip_exact(self, seed, K):
        rng = np.random.default_rng(seed)
        d = 7
        t = DataTable(
            rng.integers(1, 5, d),
            rng.integers(1, 9, d),
            rng.poisson(3.0, d).astype(float),
            rng.uniform(0.1, 10.0, d),
            rng.standard_normal((d, K)),
        )
        with tempfile.TemporaryDirectory() as tmp:
            p = Path(tmp) / "data.csv"
            write_data_csv(p, t)
            back = read_data_csv(p)
        for a in ("time", "space", "y", "E", "Z"):
            np.testing.assert_array_equal(getattr(back, a), getattr(t, a))

    def test_missing_offset(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("time,space,y\n1,1,3\n")
        with pytest.raises(ValueError, match="'E'"):
            read_data_csv(p, "E")
        assert read_data_csv(p, None).E.tolist() == [1.0]

    def test_result_rows_round_trip(self, tmp_path):
        rows = [{"element": 1, "block": "mu", "index": 1, "mean": 0.1 + 0.2, "sd": 1e-300}]
        write_rows(tmp_path / "r.csv", ("element", "block", "index", "mean", "sd"), rows)
        assert read_rows(tmp_path / "r.csv") == rows


class TestConfig:
    def test_defaults(self):
        cfg = parse_config_text(CONFIG.format(kind=4, rw="rw2", k=2))
        assert cfg.interaction_kind == 4 and cfg.rw_order == 2
        assert cfg.block("rw").options == {"rankdef": 2}
        assert cfg.threads == 1 and cfg.prior == "pc_joint"

    @pytest.mark.parametrize(
        "edit",
        [
            lambda t: t.replace("block = interaction1\n", ""),
            lambda t: t + "block = interaction2\n",
            lambda t: t.replace("poisson", "binomial"),
            lambda t: t.replace("GA", "laplace"),
            lambda t: t + "colour = blue\n",
            lambda t: t + "threads = 1\nthreads = 2\n",
            lambda t: t.replace("rankdef=1", "rankdef"),
        ],
    )
    def test_rejects(self, edit):
        with pytest.raises(ParseError):
            parse_config_text(edit(CONFIG.format(kind=1, rw="rw1", k=1)))


class TestCommands:
    def test_simulate_fit_round_trip(self, simulated, tmp_path):
        cfg = write_config(tmp_path / "run.cfg")
        out = tmp_path / "out"
        code = main(["fit", "--config", str(cfg), "--data", str(simulated / "data.csv"), "--graph", str(simulated / "graph.txt"), "--out", str(out)])
        assert code == EXIT_OK
        rows = read_rows(out / "marginals.csv")
        assert len(rows) == 1 + 0 + 12 + 8 + 24 == 45
        crit = json.loads((out / "criteria.json").read_text())
        assert set(crit) == {"dic", "log_mlik", "theta_mode", "runtime"}
        assert np.isfinite(crit["dic"]) and np.isfinite(crit["log_mlik"])
        diag = json.loads((out / "diagnostics.json").read_text())
        assert "newton_iterations" in diag and "dropped_points" in diag
        hyper = read_rows(out / "hyper.csv", int_columns=("point", "axis"))
        assert sum(r["weight"] for r in hyper) == pytest.approx(1.0)
        assert main(["plot", "--out", str(out)]) == EXIT_OK
        assert len(read_rows(out / "interaction.csv")) == 24

    def test_threads_do_not_change_results(self, simulated, tmp_path):
        cfg = write_config(tmp_path / "run.cfg")
        crit = {}
        for t in (1, 8):
            out = tmp_path / f"t{t}"
            args = ["fit", "--config", str(cfg), "--data", str(simulated / "data.csv"), "--graph", str(simulated / "graph.txt")]
            assert main(args + ["--out", str(out), "--threads", str(t)]) == EXIT_OK
            c = json.loads((out / "criteria.json").read_text())
            c.pop("runtime")
            crit[t] = c
            crit[f"m{t}"] = (out / "marginals.csv").read_text()
        assert crit[1] == crit[8]
        assert crit["m1"] == crit["m8"]

    def test_missing_offset_exit_one(self, simulated, tmp_path, capsys):
        cfg = write_config(tmp_path / "run.cfg")
        cfg.write_text(cfg.read_text().replace("offset = E", "offset = expected"))
        code = main(["fit", "--config", str(cfg), "--data", str(simulated / "data.csv"), "--graph", str(simulated / "graph.txt"), "--out", str(tmp_path)])
        assert code == EXIT_INPUT
        assert "expected" in capsys.readouterr().err

    def test_graph_size_mismatch_exit_one(self, simulated, tmp_path):
        (tmp_path / "g.txt").write_text("2\n1 1 2\n2 1 1\n")
        cfg = write_config(tmp_path / "run.cfg")
        code = main(["fit", "--config", str(cfg), "--data", str(simulated / "data.csv"), "--graph", str(tmp_path / "g.txt"), "--out", str(tmp_path)])
        assert code == EXIT_INPUT

    def test_non_convergence_exit_two(self, simulated, tmp_path, monkeypatch):
        from dense_inla import cli
        from dense_inla.errors import NotConverged

        def boom(*a, **k):
            raise NotConverged("stalled", last=np.zeros(3))

        monkeypatch.setattr(cli, "fit", boom)
        cfg = write_config(tmp_path / "run.cfg")
        out = tmp_path / "out"
        code = main(["fit", "--config", str(cfg), "--data", str(simulated / "data.csv"), "--graph", str(simulated / "graph.txt"), "--out", str(out)])
        assert code == EXIT_NUMERIC
        assert json.loads((out / "diagnostics.json").read_text())["last_iterate"] == [0.0, 0.0, 0.0]

    def test_simulate_thousand_rows(self, tmp_path):
        assert main(["simulate", "--n", "10", "--m", "100", "--type", "4", "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
        assert len(read_data_csv(tmp_path / "data.csv").y) == 1000

    def test_simulate_minimal_and_repeatable(self, tmp_path):
        for d in ("a", "b"):
            args = ["simulate", "--n", "2", "--m", "2", "--order", "1", "--seed", "5", "--out", str(tmp_path / d)]
            assert main(args) == EXIT_OK
        assert len(read_data_csv(tmp_path / "a" / "data.csv").y) == 4
        for f in ("data.csv", "truth.csv", "graph.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_simulate_invalid_size_exit_one(self, tmp_path):
        assert main(["simulate", "--n", "2", "--m", "2", "--out", str(tmp_path)]) == EXIT_INPUT
        assert main(["simulate", "--n", "4", "--m", "1", "--out", str(tmp_path)]) == EXIT_INPUT
