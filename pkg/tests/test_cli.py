import csv
import json
from collections import defaultdict
from pathlib import Path

import pytest

from silnr.cli import (
    CONVERGENCE_COLUMNS,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    EXIT_PARTIAL,
    RESULT_COLUMNS,
    ConfigError,
    main,
    parse_config,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
scenario: two_cell_ll
scenario_params: {n_antennas: 4, n_users: 2}
precoders: [zf, silnr]
snr_grid_db: [0, 10]
n_trials: 3
seed: 7
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- parsing ---


def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.yaml")):
        cfg = parse_config(p.read_text())
        cfg.build_scenario()


def test_builtin_hetnet_matches_reference_invariants():
    cfg = parse_config((CONFIGS / "hetnet_antennas.yaml").read_text())
    assert cfg.sweep_name == "n_macro_antennas"
    assert cfg.build_scenario().check_invariants() == []


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="presoder"):
        parse_config(SMALL + "presoder: [zf]\n")
    with pytest.raises(ConfigError, match="scenario_params.foo"):
        parse_config(SMALL, ["scenario_params.foo=1"])


def test_missing_seed_is_an_error():
    text = "\n".join(line for line in SMALL.splitlines() if not line.startswith("seed"))
    with pytest.raises(ConfigError, match="seed"):
        parse_config(text)


@pytest.mark.parametrize(
    "override,key",
    [
        ("n_trials=0", "n_trials"),
        ("n_trials=two", "n_trials"),
        ("csit_mode=partial", "csit_mode"),
        ("precoders=[zf, bogus]", r"precoders\[1\]"),
        ("antenna_grid=[4]", "snr_grid_db|antenna_grid"),
        ("eps=-1", "eps"),
        ("snr_grid_db=[0, x]", r"snr_grid_db\[1\]"),
    ],
)
def test_invalid_values_name_the_key(override, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(SMALL, [override])


def test_snr_sweep_needs_link_level():
    text = "scenario: hetnet_tableII\nprecoders: [zf]\nsnr_grid_db: [0]\nn_trials: 1\nseed: 0\n"
    with pytest.raises(ConfigError, match="snr_grid_db"):
        parse_config(text)


def test_overrides_take_precedence():
    cfg = parse_config(SMALL, ["seed=99", "scenario_params.n_users=3", "eps=0.01"])
    assert cfg.seed == 99 and cfg.eps == 0.01
    assert cfg.build_scenario().n_users == 3


# --- running ---


def test_fourteen_rows_for_seven_snrs_and_two_precoders(tmp_path):
    text = """
scenario: two_cell_ll
precoders: [silnr, zf]
snr_grid_db: [-5, 0, 5, 10, 15, 20, 25]
n_trials: 50
seed: 3
"""
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "results.csv")
    assert len(rows) == 14
    assert list(rows[0]) == RESULT_COLUMNS
    assert all(r["wall_seconds"] == "" for r in rows)
    conv = read_csv(tmp_path / "o" / "convergence.csv")
    assert list(conv[0]) == CONVERGENCE_COLUMNS
    manifest = json.loads((tmp_path / "o" / "run.json").read_text())
    assert manifest["seed"] == 3 and manifest["failed_trials"] == []
    assert {"numpy", "scipy", "python"} <= set(manifest["versions"])


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["--config", cfg, "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("results.csv", "convergence.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_convergence_trace_shape(tmp_path):
    text = SMALL.replace("n_antennas: 4, n_users: 2", "n_antennas: 16, n_users: 8").replace("n_trials: 3", "n_trials: 20")
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_OK
    loops = defaultdict(list)
    for r in read_csv(tmp_path / "o" / "convergence.csv"):
        loops[(r["trial"], r["cell"], r["outer_round"])].append(float(r["delta_norm"]))
    good = sum(
        all(b < a for a, b in zip(d, d[1:])) and d[-1] < 0.1
        for d in loops.values()
    )
    assert good / len(loops) >= 0.95


def test_exit_codes(tmp_path, capsys):
    assert main(["--config", write(tmp_path, SMALL + "presoder: 1\n")]) == EXIT_CONFIG
    assert "presoder" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["--config", write(tmp_path, SMALL), "--out", str(blocker / "sub")]) == EXIT_IO


def test_partial_failure_exit_code(tmp_path):
    # ZF cannot serve 4 users with 2 antennas: every zf trial fails, mrt still runs
    text = """
scenario: two_cell_ll
scenario_params: {n_antennas: 2, n_users: 4}
precoders: [zf, mrt]
snr_grid_db: [10]
n_trials: 2
seed: 0
"""
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_PARTIAL
    manifest = json.loads((tmp_path / "o" / "run.json").read_text())
    assert len(manifest["failed_trials"]) == 2
    rows = read_csv(tmp_path / "o" / "results.csv")
    assert rows[0]["n_trials"] == "0" and rows[1]["n_trials"] == "2"


def test_scenario_file_reference(tmp_path):
    scen = write(tmp_path, "name: mine\nkind: link_level\nn_antennas: 4\nn_users: 2\n", "scen.yaml")
    text = f"scenario: {scen}\nprecoders: [mrt]\nantenna_grid: [4, 8]\nn_trials: 2\nseed: 1\n"
    cfg = parse_config(text)
    assert cfg.sweep_name == "n_antennas"
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "results.csv")
    assert [r["sweep_value"] for r in rows] == ["4", "8"]
    bad = write(tmp_path, "name: x\nkind: link_level\ncolour: red\n", "bad.yaml")
    with pytest.raises(ConfigError, match="colour"):
        parse_config(text.replace(scen, bad))
