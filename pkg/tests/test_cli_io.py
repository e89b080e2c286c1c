import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksdelta import io
from ksdelta.cli import main
from ksdelta.config import ConfigError, parse_config
from ksdelta.diagnostics import DIAG_COLUMNS, DiagRecord
from ksdelta.mesh import Field, build_polar, build_radial, build_rect
from ksdelta.model import InitialData

MINIMAL = {"scheme": "pp", "params": {"delta": 0.01, "alpha": 1.0}, "grid": {"kind": "polar", "resolution": [4, 8]}}


def with_(base, **patch):
    cfg = json.loads(json.dumps(base))
    for dotted, value in patch.items():
        node = cfg
        *head, last = dotted.split("__")
        for k in head:
            node = node.setdefault(k, {})
        node[last] = value
    return cfg


# -- config ------------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = parse_config(json.dumps(MINIMAL))
    assert cfg.time.dt_min == 1e-13
    assert cfg.params.eta == 0.0
    assert cfg.params.c_boundary == "neumann"
    assert cfg.newton.jacobian == "analytic"
    assert cfg.to_params().eps == 1
    assert cfg.to_grid().resolution == (4, 8)
    assert cfg.to_controller().dt_max == cfg.time.dt


@pytest.mark.parametrize("patch,key", [
    ({"params__eps": 2}, "params.eps"),
    ({"params__delta": -1.0}, "params.delta"),
    ({"params__alpha": 0.0}, "params.alpha"),
    ({"params__typo": 1}, "params.typo"),
    ({"extra_section": {}}, "extra_section"),
    ({"scheme": "rk4"}, "scheme"),
    ({"grid__kind": "hex"}, "grid.kind"),
    ({"grid__resolution": [4]}, "grid"),
    ({"time__dt": 0.0}, "time.dt"),
    ({"newton__jacobian": "broyden"}, "newton.jacobian"),
    ({"outputs__bogus": "x"}, "outputs.bogus"),
])
def test_config_errors_name_the_key(patch, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(json.dumps(with_(MINIMAL, **patch)))


@pytest.mark.parametrize("text", ["not json", "[1, 2]", "{}"])
def test_config_rejects_malformed_documents(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_cross_field_checks():
    with pytest.raises(ConfigError, match="time"):
        parse_config(json.dumps(with_(MINIMAL, time__dt=1e-2, time__dt_max=1e-3)))
    with pytest.raises(ConfigError, match="init.values"):
        parse_config(json.dumps(with_(MINIMAL, init={"variant": "custom", "values": [1.0, 2.0]})))
    with pytest.raises(ConfigError):
        parse_config(json.dumps(with_(MINIMAL, scheme="pe")))


@pytest.mark.parametrize("variant", ["experiment1", "experiment3", "experiment4"])
def test_config_named_init_variants(variant):
    cfg = parse_config(json.dumps(with_(MINIMAL, init={"variant": variant})))
    g = cfg.to_grid()
    expected = getattr(InitialData, variant)().rho0(g)
    assert np.array_equal(cfg.to_init().rho0(g), expected)


def test_config_constant_init():
    cfg = parse_config(json.dumps(with_(MINIMAL, init={"variant": "constant", "value": 2.0, "c_value": 0.5})))
    st_ = cfg.to_init().state(cfg.to_grid())
    assert np.all(st_.rho.values == 2.0)


# -- io ----------------------------------------------------------------------


@pytest.mark.parametrize("value,text", [
    (0.1, "0.10000000000000001"),
    (1.0, "1"),
    (1e-300, "1e-300"),
    (math.inf, "inf"),
    (-math.inf, "-inf"),
    (math.nan, "nan"),
    (True, "1"),
    (np.bool_(False), "0"),
    (7, "7"),
    (np.int64(3), "3"),
    ("h2", "h2"),
])
def test_fmt(value, text):
    assert io.fmt(value) == text


@given(st.floats(allow_nan=False, allow_infinity=False))
@settings(max_examples=200)
def test_fmt_round_trips_doubles(x):
    assert float(io.fmt(x)) == x


def _record(k):
    return DiagRecord(0.1 * k, 1.0 / 3, -0.0, 2.0**k, math.pi, math.e, 1e-300, 0.5, 0.25, -1e-17, clamped=k % 2 == 1)


def test_diag_csv_round_trip(tmp_path):
    recs = [_record(k) for k in range(4)]
    path = io.write_diag_csv(tmp_path / "sub" / "d.csv", recs)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(DIAG_COLUMNS)
    assert lines[0] == "t,mass,rho_min,rho_max,H1,H2p,H3p,diss_sqrt,diss_grad,entropy_residual,clamped"
    assert len(lines) == 5
    back = io.read_diag_csv(path)
    assert [r.as_tuple() for r in back] == [r.as_tuple() for r in recs]


def test_diag_csv_rejects_wrong_header(tmp_path):
    path = io.write_table(tmp_path / "x.csv", ("a", "b"), [(1, 2)])
    with pytest.raises(ValueError):
        io.read_diag_csv(path)


@pytest.mark.parametrize("grid", [build_rect(3, 2), build_polar(2, 4, R=2.0), build_radial(5)])
def test_snapshot_round_trip(tmp_path, grid):
    vals = np.random.default_rng(0).standard_normal(grid.n_cells)
    path = io.write_snapshot(tmp_path / io.snapshot_name("rho", 3), Field(grid, vals, "rho"), 0.125)
    assert path.name == "rho_00003.txt"
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# grid {grid.kind} ")
    assert lines[1] == "# t 0.125 variable rho"
    assert len(lines) == 2 + grid.n_cells
    snap = io.read_snapshot(path)
    assert snap["kind"] == grid.kind
    assert snap["resolution"] == grid.resolution
    assert snap["t"] == 0.125 and snap["tag"] == "rho"
    assert np.array_equal(snap["values"], vals)


def test_snapshot_header_contents(tmp_path):
    g = build_polar(2, 4, R=2.0)
    path = io.write_snapshot(tmp_path / "s.txt", Field(g, np.zeros(8)), 0.0)
    assert path.read_text().splitlines()[0] == "# grid polar 2 4 2.0"


def test_read_snapshot_rejects_bad_header(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("# mesh rect 1 1 0 1 0 1\n# t 0 variable rho\n1\n")
    with pytest.raises(ValueError):
        io.read_snapshot(bad)


# -- cli ---------------------------------------------------------------------


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


STEADY = with_(
    MINIMAL,
    grid={"kind": "rect", "resolution": [4, 4]},
    init={"variant": "constant", "value": 1.0, "c_value": 1.0},
    time={"T": 0.5, "dt": 0.1},
    outputs={"diag_csv": "out/diag.csv", "snapshot_dir": "out/snaps", "record_times": [0.0, 0.2, 0.5]},
)


def test_cli_run_steady(tmp_path, capsys):
    assert main(["run", write_cfg(tmp_path, STEADY)]) == 0
    recs = io.read_diag_csv(tmp_path / "out" / "diag.csv")
    assert len(recs) == 5
    assert {r.rho_max for r in recs} == {1.0}
    assert len({r.mass for r in recs}) == 1
    snaps = sorted((tmp_path / "out" / "snaps").iterdir())
    assert [p.name for p in snaps] == [f"{v}_{k:05d}.txt" for v in ("c", "rho") for k in range(3)]
    assert [io.read_snapshot(p)["t"] for p in snaps[3:]] == [0.0, 0.2, 0.5]


def test_cli_run_is_byte_identical(tmp_path):
    cfg = with_(STEADY, init={"variant": "experiment1"}, grid={"kind": "polar", "resolution": [4, 8]},
                time={"T": 0.02, "dt": 1e-3, "dt_max": 5e-3})
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert main(["run", write_cfg(a, cfg)]) == 0
    assert main(["run", write_cfg(b, cfg)]) == 0
    assert (a / "out" / "diag.csv").read_bytes() == (b / "out" / "diag.csv").read_bytes()
    for p in (a / "out" / "snaps").iterdir():
        assert p.read_bytes() == (b / "out" / "snaps" / p.name).read_bytes()


BREAKDOWN = with_(
    MINIMAL,
    params={"delta": 1e-4, "alpha": 2.5},
    time={"T": 0.5, "dt": 5e-3, "dt_min": 5e-3 / 3},
    outputs={"diag_csv": "diag.csv", "summary_csv": "blowup.csv"},
)


def test_cli_run_breakdown_exit_code(tmp_path, capsys):
    assert main(["run", write_cfg(tmp_path, BREAKDOWN)]) == 3
    assert "breakdown" in capsys.readouterr().err
    # partial output is still written
    header, _ = io.read_table(tmp_path / "diag.csv")
    assert tuple(header) == DIAG_COLUMNS


def test_cli_blowup(tmp_path):
    assert main(["blowup", write_cfg(tmp_path, BREAKDOWN)]) == 0
    header, rows = io.read_table(tmp_path / "blowup.csv")
    assert header == ["alpha", "delta", "T_break", "final_dt", "final_linf", "breakdown"]
    assert len(rows) == 1
    assert rows[0][0] == "2.5" and rows[0][-1] == "1"
    assert 0 < float(rows[0][2]) < 0.5


def test_cli_sweep(tmp_path):
    cfg = with_(MINIMAL, time={"T": 3e-3, "dt": 1e-3}, outputs={"summary_csv": "sweep.csv"})
    assert main(["sweep", write_cfg(tmp_path, cfg), "--deltas", "1e-2,5e-3"]) == 0
    header, rows = io.read_table(tmp_path / "sweep.csv")
    assert header == ["delta", "error", "valid"]
    assert [r[0] for r in rows] == ["0.01", "0.0050000000000000001"]
    fh, frows = io.read_table(tmp_path / "sweep_fit.csv")
    assert fh == ["fitted_exponent", "fit_r2", "poor_fit", "error_norm"]
    assert frows[0][-1] == "h2"


@pytest.mark.parametrize("argv_tail", [["--deltas", "1e-2"], [], ["--deltas", "1e-2,1e-2"]])
def test_cli_sweep_needs_two_deltas(tmp_path, capsys, argv_tail):
    assert main(["sweep", write_cfg(tmp_path, MINIMAL)] + argv_tail) == 2
    assert "at least two deltas" in capsys.readouterr().err


@pytest.mark.parametrize("bad", ["a,b", "1e-2,-1e-3"])
def test_cli_bad_delta_list(tmp_path, bad):
    assert main(["sweep", write_cfg(tmp_path, MINIMAL), "--deltas", bad]) == 2


def test_cli_bumps(tmp_path):
    cfg = {
        "scheme": "pp",
        "params": {"delta": 0.01, "alpha": 1.0, "c_boundary": "dirichlet0"},
        "grid": {"kind": "radial", "resolution": [60]},
        "init": {"variant": "experiment4"},
        "time": {"dt": 1e-5, "dt_max": 5e-2},
        "bumps": {"T_max": 20.0},
        "outputs": {"summary_csv": "bumps.csv", "fit_csv": "fit.csv"},
    }
    assert main(["bumps", write_cfg(tmp_path, cfg), "--deltas", "2e-2,1e-2"]) == 0
    header, rows = io.read_table(tmp_path / "bumps.csv")
    assert header == ["delta", "radius", "rho_max", "t_steady", "steady_residual", "converged"]
    assert len(rows) == 2 and all(r[-1] == "1" for r in rows)
    fh, frows = io.read_table(tmp_path / "fit.csv")
    assert fh[:4] == ["a", "a_r2", "b", "b_r2"]


def test_cli_bumps_rejects_neumann(tmp_path, capsys):
    cfg = with_(MINIMAL, grid={"kind": "radial", "resolution": [10]})
    assert main(["bumps", write_cfg(tmp_path, cfg), "--deltas", "2e-2,1e-2"]) == 2
    assert "c_boundary" in capsys.readouterr().err
    assert main(["bumps", write_cfg(tmp_path, MINIMAL), "--deltas", "2e-2,1e-2"]) == 2


@pytest.mark.parametrize("argv", [[], ["frobnicate", "x.json"], ["run"]])
def test_cli_usage_errors(argv, capsys):
    assert main(argv) == 2


def test_cli_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 2


def test_cli_invalid_config_names_key(tmp_path, capsys):
    assert main(["run", write_cfg(tmp_path, with_(MINIMAL, params__eps=2))]) == 2
    assert "params.eps" in capsys.readouterr().err
