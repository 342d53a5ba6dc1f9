import csv
import json

import numpy as np
import pytest

from papcbeam import cli
from papcbeam.errors import ConfigError
from papcbeam.simkit import CSV_COLUMNS, run_sweep


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------- configuration


def test_empty_config_echoes_defaults(tmp_path):
    cfg = tmp_path / "empty.toml"
    cfg.write_text("")
    run = cli.parse_config(str(cfg))
    sc = run.scenario
    assert (sc.n_antennas, sc.n_users) == (4, 3)
    assert np.allclose(sc.sinr_targets, 10 ** 0.3)
    assert sc.error_variance == 0.04
    assert np.allclose(sc.papc, 10.0) and np.allclose(sc.papc_tolerance, 1.0)
    assert run.resolved == cli.resolve()
    assert run.propagation.noise_power == pytest.approx(1e-12)
    assert run.propagation.error_model == "relative"


def test_defaults_in_manifest(tmp_path):
    assert run_cli("run", "custom", "--realizations", 2, "--out", tmp_path) == 0
    manifest = json.loads((tmp_path / "custom_manifest.json").read_text())
    assert manifest["config"] == json.loads(json.dumps(cli.DEFAULTS | {"experiment": manifest["config"]["experiment"]}))
    assert manifest["config"]["experiment"]["n_realizations"] == 2
    for key in ("version", "seed", "started", "finished", "outputs"):
        assert key in manifest


def test_generalized_budgets():
    run = cli.parse_config(overrides={"scenario": {"papc_mode": "generalized", "total_power": 40.0, "n_antennas": 4}})
    assert np.allclose(run.scenario.papc, 12.0)
    assert np.allclose(run.scenario.papc_tolerance, 1.2)


def test_total_only_mode():
    run = cli.parse_config(overrides={"scenario": {"papc_mode": "total_only"}})
    assert np.all(np.isinf(run.scenario.papc))


def test_negative_power_names_field():
    with pytest.raises(ConfigError, match="total_power"):
        cli.parse_config(overrides={"scenario": {"total_power": -1.0}})
    with pytest.raises(ConfigError, match="sweep_values"):
        cli.parse_config(overrides={"experiment": {"sweep_values": [10.0, -5.0]}})


@pytest.mark.parametrize(
    "layer, path",
    [
        ({"scenario": {"n_antenas": 4}}, "scenario.n_antenas"),
        ({"channel": {}}, "channel"),
        ({"scenario": {"n_users": "three"}}, "scenario.n_users"),
        ({"scenario": {"power_unit": "dBm"}}, "scenario.power_unit"),
        ({"propagation": {"error_model": "scaled"}}, "propagation.error_model"),
        ({"experiment": {"algorithms": ["alg1", "alg99"]}}, "experiment"),
    ],
)
def test_rejections_carry_key_path(layer, path):
    with pytest.raises(ConfigError) as info:
        cli.parse_config(overrides=layer)
    assert path in str(info.value)


def test_absolute_error_model_selectable():
    run = cli.parse_config(overrides={"propagation": {"error_model": "absolute"}})
    assert run.propagation.error_model == "absolute"


def test_file_then_flags_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[scenario]\nn_users = 2\npower_unit = "mW"\n[experiment]\nseed = 11\n')
    file_values = cli.load_config_file(str(cfg))
    args = cli._parser().parse_args(["run", "fig1", "--users", "3", "--power-list", "20,40"])
    run = cli.build(cli.resolve("fig1", file_values, cli.flag_overrides(args, "fig1", file_values)))
    assert run.scenario.n_users == 3
    assert run.experiment.rng_seed == 11
    assert run.experiment.sweep_values == (20.0, 40.0)
    assert run.propagation.noise_power == pytest.approx(1e-9)


def test_antenna_flag_on_power_sweep():
    args = cli._parser().parse_args(["run", "fig1", "--antennas", "6"])
    assert cli.flag_overrides(args, "fig1") == {"scenario": {"n_antennas": 6}}
    args = cli._parser().parse_args(["run", "fig1", "--antennas", "6,8"])
    with pytest.raises(ConfigError):
        cli.flag_overrides(args, "fig1")


# ---------------------------------------------------------------- runs and exit codes


def test_fig1_schema(tmp_path):
    assert run_cli("run", "fig1", "--realizations", 6, "--seed", 7, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "fig1.csv")
    preset = cli.PRESETS["fig1"]["experiment"]
    assert tuple(rows[0].keys()) == tuple(CSV_COLUMNS)
    assert [(float(r["sweep_value"]), r["algorithm"]) for r in rows] == [
        (p, a) for p in preset["sweep_values"] for a in preset["algorithms"]
    ]
    doc = json.loads((tmp_path / "fig1.json").read_text())
    assert len(doc["rows"]) == len(rows)
    assert doc["config"]["experiment"]["seed"] == 7
    assert "nonconverged_total" in doc


def test_fig5_antenna_sweep(tmp_path):
    assert run_cli("run", "fig5", "--antennas", "16,32,64", "--realizations", 2, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "fig5.csv")
    assert len(rows) == 15
    assert {float(r["sweep_value"]) for r in rows} == {16.0, 32.0, 64.0}
    assert len({r["algorithm"] for r in rows}) == 5


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario]\ntotal_power = -3\n")
    assert run_cli("run", "custom", "--config", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    assert "scenario.total_power" in capsys.readouterr().err
    bad.write_text("[scenario\n")
    assert run_cli("run", "custom", "--config", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    assert run_cli("run", "custom", "--workers", 0, "--out", tmp_path) == cli.EXIT_CONFIG


def test_io_error_exit_code(tmp_path):
    assert run_cli("run", "custom", "--config", tmp_path / "missing.toml") == cli.EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli("run", "custom", "--realizations", 1, "--out", blocker / "sub") == cli.EXIT_IO


def test_algorithms_listing(capsys):
    assert run_cli("algorithms") == 0
    out = capsys.readouterr().out
    assert "alg9" in out and "tp_robust_mrt" in out


def test_verbose_after_subcommand(tmp_path):
    assert run_cli("run", "custom", "--realizations", 1, "--out", tmp_path, "-v") == 0


# ---------------------------------------------------------------- reproducibility


def test_repeat_is_byte_identical(tmp_path):
    args = ["run", "fig1", "--realizations", 5, "--seed", 3, "--power-list", "20,40", "--trace"]
    assert run_cli(*args, "--out", tmp_path / "a") == 0
    assert run_cli(*args, "--out", tmp_path / "b") == 0
    for name in ("fig1.csv", "fig1.json", "fig1_trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_replay_reproduces_outputs(tmp_path):
    first = tmp_path / "first"
    assert run_cli("run", "fig3", "--realizations", 4, "--seed", 5, "--antennas", "4,6", "--out", first, "--trace") == 0
    again = tmp_path / "again"
    assert run_cli("replay", first / "fig3_manifest.json", "--out", again) == 0
    for name in ("fig3.csv", "fig3.json", "fig3_trace.csv"):
        assert (first / name).read_bytes() == (again / name).read_bytes()
    a = json.loads((first / "fig3_manifest.json").read_text())
    b = json.loads((again / "fig3_manifest.json").read_text())
    assert a["config"] == b["config"] and a["options"] == b["options"]


def test_replay_into_original_directory(tmp_path):
    out = tmp_path / "r"
    assert run_cli("run", "custom", "--realizations", 3, "--out", out) == 0
    before = (out / "custom.csv").read_bytes()
    (out / "custom.csv").unlink()
    assert run_cli("replay", out / "custom_manifest.json") == 0
    assert (out / "custom.csv").read_bytes() == before


def test_replay_of_broken_manifest(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{}")
    assert run_cli("replay", path) == cli.EXIT_CONFIG


# ---------------------------------------------------------------- convergence trace


def test_no_trace_file_without_capture(tmp_path):
    assert run_cli("run", "fig1", "--realizations", 3, "--power-list", "40", "--algorithms", "alg1", "--out", tmp_path) == 0
    assert not (tmp_path / "fig1_trace.csv").exists()
    manifest = json.loads((tmp_path / "fig1_manifest.json").read_text())
    assert "trace" not in manifest["outputs"]


def test_trace_only_for_iterative_rows(tmp_path):
    run = cli.parse_config(overrides={"experiment": {"algorithms": ["alg7"], "n_realizations": 3}}, experiment="fig5")
    rows = run_sweep(run.experiment, run.scenario, run.propagation, trace=True, timing=False)
    assert cli.emit_convergence_trace(rows, tmp_path / "t.csv", algorithm="alg1") is None
    assert not (tmp_path / "t.csv").exists()


def test_converged_trace_ends_at_zero(tmp_path):
    assert run_cli("run", "fig1", "--realizations", 10, "--seed", 1, "--power-list", "40",
                   "--algorithms", "alg1,alg2", "--trace", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "fig1.json").read_text())
    assert doc["nonconverged_total"] == 0 and doc["failed_total"] == 0
    lines = read_rows(tmp_path / "fig1_trace.csv")
    for alg in ("alg1", "alg2"):
        fractions = [float(r["violation_fraction"]) for r in lines if r["algorithm"] == alg]
        assert fractions and fractions[-1] == 0.0
        assert all(0.0 <= f <= 1.0 for f in fractions)


def first_zero(fractions):
    hits = np.flatnonzero(np.asarray(fractions) == 0)
    return hits[0] if hits.size else np.inf


def test_acceleration_reaches_zero_no_later():
    seeds = range(20)
    wins = 0
    for seed in seeds:
        run = cli.parse_config(
            overrides={"experiment": {"sweep_values": [40.0], "algorithms": ["alg1", "alg1_accel"],
                                      "n_realizations": 15, "seed": seed}},
            experiment="fig1",
        )
        plain, accel = run_sweep(run.experiment, run.scenario, run.propagation, trace=True, timing=False)
        wins += first_zero(accel.violation_fraction) <= first_zero(plain.violation_fraction)
    assert wins >= 0.9 * len(seeds)
