import csv
import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from hsconv.cli import (
    EXIT_ERROR,
    EXIT_FAIL,
    EXIT_PASS,
    SUBCOMMANDS,
    ConfigError,
    RunConfig,
    emit,
    load_config_file,
    main,
    parse_grid,
)
from hsconv.quadrature import theta_oracle


def read_csv(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def test_theta_table_matches_oracle(capsys):
    rc = main(["theta", "--n", "3", "--alpha", "1.2", "--lambda", "1.4",
               "--w-grid", "1e-3:1e3:25"])
    out = capsys.readouterr().out
    assert rc == EXIT_PASS
    rows = read_csv(out)
    assert len(rows) == 25
    for row in rows:
        assert float(row["rel_gap"]) <= 1e-6
        d = float(row["w_norm"])
        ref = theta_oracle(3, 1.2, 1.4, d)
        assert float(row["closed_form"]) == pytest.approx(ref, rel=1e-6)


def test_grid_parsing():
    g = parse_grid("1e-2:1e2:5")
    assert g[0] == pytest.approx(1e-2) and g[-1] == pytest.approx(1e2) and len(g) == 5
    assert list(parse_grid("2:2:1")) == [2.0]
    for bad in ("1:2", "0:1:3", "1:2:0", "a:b:c"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


configs = st.builds(
    RunConfig,
    subcommand=st.sampled_from(SUBCOMMANDS),
    n=st.integers(2, 5),
    m=st.integers(2, 4),
    alphas=st.lists(st.floats(0.1, 4.0), max_size=4).map(tuple),
    tau=st.floats(1e-3, 1e3),
    n_samples=st.integers(1000, 10**7),
    seed=st.integers(0, 2**32),
    tol=st.floats(1e-14, 1e-2),
    format=st.sampled_from(["csv", "json"]),
)


@settings(max_examples=50)
@given(configs)
def test_config_round_trip(cfg):
    table = {"columns": ["x"], "rows": [[1.0]], "summary": {}, "passed": True}
    text = emit(cfg, table)
    if cfg.format == "json":
        back = RunConfig.from_dict(json.loads(text)["config"])
    else:
        line = next(ln for ln in text.splitlines() if ln.startswith("# config: "))
        back = RunConfig.from_json(line[len("# config: "):])
    assert back == cfg
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_km_is_byte_reproducible(tmp_path):
    a, b, c = (tmp_path / f"{k}.csv" for k in "abc")
    args = ["km", "--n", "3", "--m", "3", "--grid", "3x3", "--samples", "2e4", "--seed", "7"]
    assert main(args + ["-o", str(a)]) == EXIT_PASS
    assert main(args + ["-o", str(b)]) == EXIT_PASS
    assert a.read_bytes() == b.read_bytes()
    # the embedded config alone reproduces the run
    assert main(["km", "--config", str(a), "-o", str(c)]) == EXIT_PASS
    assert c.read_bytes() == a.read_bytes()
    assert load_config_file(str(a)).seed == 7


def test_exit_code_on_falsified_hypothesis(capsys):
    rc = main(["sup-scan", "--n", "3", "--alpha", "2.5", "--lambda", "1.0",
               "--w-grid", "1e-2:1e2:6"])
    assert rc == EXIT_FAIL
    assert "unbounded" in capsys.readouterr().out


def test_exit_code_on_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"subcommand": "theta", "bogus": 1}))
    assert main(["theta", "--config", str(bad)]) == EXIT_ERROR
    assert "bogus" in capsys.readouterr().err
    bad.write_text(json.dumps({"subcommand": "theta", "n": "three"}))
    assert main(["theta", "--config", str(bad)]) == EXIT_ERROR
    assert "n" in capsys.readouterr().err


def test_missing_exponent_is_an_error(capsys):
    assert main(["theta", "--n", "3", "--alpha", "1.2"]) == EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_json_output_and_plot(tmp_path):
    out, png = tmp_path / "t.json", tmp_path / "t.png"
    rc = main(["theta", "--n", "2", "--alpha", "0.8", "--lambda", "0.9", "--w-grid",
               "1e-1:1e1:5", "--format", "json", "-o", str(out), "--plot", str(png)])
    assert rc == EXIT_PASS
    doc = json.loads(out.read_text())
    assert doc["config"]["n"] == 2 and len(doc["rows"]) == 5
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


@pytest.mark.parametrize("args", [
    ["delta3", "--n", "3", "--alphas", "2,2,2", "--w-grid", "0.5:2:2", "--tol", "1e-6"],
    ["surface-mc", "--n", "3", "--alpha", "1.2", "--lambda", "1.4", "--w-grid", "0.5:2:2",
     "--samples", "2e4"],
    ["kernel", "--n", "3", "--w", "1,0,0", "--v", "0,2,0", "--samples", "2e4"],
    ["dual-check", "--n", "3", "--samples", "2e4"],
])
def test_other_subcommands_run(args, capsys):
    assert main(args) in (EXIT_PASS, EXIT_FAIL)
    assert "# summary:" in capsys.readouterr().out
