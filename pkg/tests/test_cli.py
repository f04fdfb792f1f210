import csv
from pathlib import Path

import pytest
import yaml

from deeplcc.cli import main
from deeplcc.config import ConfigError, RunConfig, load

ROOT = Path(__file__).resolve().parents[1]


def write_config(path, **overrides):
    raw = yaml.safe_load((ROOT / "configs" / "default.yaml").read_text())
    for key, value in overrides.items():
        section, _, name = key.partition("__")
        if name:
            raw.setdefault(section, {})[name] = value
        else:
            raw[section] = value
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def read_kv(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if " = " in line and not line.startswith("#"):
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    """A dataset plus a ten-second brake configuration shared by the run tests."""
    d = tmp_path_factory.mktemp("cli")
    cfg = write_config(d / "cfg.yaml", scenario__duration=10.0)
    assert main(["collect", "--config", cfg, "--out", str(d)]) == 0
    return d, cfg


class TestConfig:
    def test_shipped_default_matches_builtin(self):
        assert load(ROOT / "configs" / "default.yaml") == RunConfig()

    def test_drive_cycle_loads(self):
        cfg = load(ROOT / "configs" / "drive_cycle.yaml")
        assert cfg.scenario.kind.value == "drive_cycle"

    @pytest.mark.parametrize("text", ["fleet: {n: 6, cav_indices: []}", "bogus: 1",
                                      "controller: {T_ini: 0}", "masks: {preset: nope}",
                                      "- a list", "controller: {a_bounds: [2, -5]}"])
    def test_rejected(self, tmp_path, text):
        p = tmp_path / "bad.yaml"
        p.write_text(text)
        with pytest.raises(ConfigError):
            load(p)


class TestCollect:
    def test_reports_columns(self, short_run):
        d, _ = short_run
        cert = read_kv(d / "certificate.txt")
        assert cert["samples"] == "944" and cert["columns"] == "900"
        assert cert["exciting"] == "true"
        assert int(cert["exogenous_rank"]) == int(cert["required_rank"])

    def test_same_seed_same_bytes(self, tmp_path, short_run):
        d, cfg = short_run
        assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert (tmp_path / "dataset.csv").read_bytes() == (d / "dataset.csv").read_bytes()
        assert (tmp_path / "certificate.txt").read_bytes() == (d / "certificate.txt").read_bytes()

    def test_seed_override_changes_data(self, tmp_path, short_run):
        d, cfg = short_run
        assert main(["collect", "--config", cfg, "--seed", "7", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "dataset.csv").read_bytes() != (d / "dataset.csv").read_bytes()

    def test_zero_excitation_exit_code(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", data__input_half_width=0.0,
                           data__head_half_width=0.0)
        assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert read_kv(tmp_path / "certificate.txt")["exciting"] == "false"
        assert not (tmp_path / "dataset.csv").exists()

    def test_bad_config_exit_code(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("controller: {N: -1}\n")
        assert main(["collect", "--config", str(p), "--out", str(tmp_path)]) == 2


class TestRun:
    def test_hdv_tag(self, short_run):
        d, cfg = short_run
        assert main(["run", "--config", cfg, "--mode", "hdv", "--out", str(d)]) == 0
        s = read_kv(d / "summary_hdv.txt")
        assert s["tag"] == "all-hdv" and s["collision_events"] == "0"

    def test_mpc_dimension(self, short_run):
        d, cfg = short_run
        assert main(["run", "--config", cfg, "--mode", "mpc", "--out", str(d)]) == 0
        assert read_kv(d / "summary_mpc.txt")["decision_dim"] == "60"

    def test_masked_reports_gap(self, short_run):
        d, cfg = short_run
        assert main(["run", "--config", cfg, "--mode", "masked", "--out", str(d)]) == 0
        s = read_kv(d / "summary_masked.txt")
        assert float(s["max_input_gap_vs_deeplcc"]) <= 1e-6
        assert float(s["objective_gap_after_rho"]) <= 1e-6
        assert s["decision_dim"] == "1020"

    def test_deterministic_body(self, short_run, tmp_path):
        d, cfg = short_run
        for out in (tmp_path / "a", tmp_path / "b"):
            assert main(["run", "--config", cfg, "--mode", "deeplcc", "--data",
                         str(d / "dataset.csv"), "--out", str(out)]) == 0
        a, b = ((p / "summary_deeplcc.txt").read_text() for p in (tmp_path / "a", tmp_path / "b"))
        assert a.splitlines()[0].startswith("# ")
        assert a.splitlines()[1:] == b.splitlines()[1:]
        assert (tmp_path / "a" / "run_deeplcc.csv").read_bytes() == \
            (tmp_path / "b" / "run_deeplcc.csv").read_bytes()

    def test_missing_dataset(self, tmp_path, short_run):
        _, cfg = short_run
        assert main(["run", "--config", cfg, "--mode", "deeplcc", "--out", str(tmp_path)]) == 2


@pytest.fixture(scope="module")
def logs(short_run):
    d, cfg = short_run
    for mode in ("hdv", "deeplcc"):
        if not (d / f"run_{mode}.csv").exists():
            assert main(["run", "--config", cfg, "--mode", mode, "--out", str(d)]) == 0
    return d / "run_hdv.csv", d / "run_deeplcc.csv"


class TestCompare:
    def test_identical_logs(self, logs, tmp_path, capsys):
        hdv, _ = logs
        assert main(["compare", str(hdv), str(hdv), "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader((tmp_path / "compare.csv").open()))
        assert [float(r["fuel_delta_pct"]) for r in rows] == [0.0, 0.0]
        assert "+0.00" in capsys.readouterr().out

    def test_three_rows_and_direction(self, logs, tmp_path):
        hdv, ctl = logs
        assert main(["compare", str(hdv), str(ctl), str(hdv), "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader((tmp_path / "compare.csv").open()))
        assert len(rows) == 3
        assert float(rows[1]["fuel_delta_pct"]) < 0 and float(rows[1]["aave_delta_pct"]) < 0

    def test_not_a_log(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        assert main(["compare", str(p)]) == 2


class TestMaskDemo:
    def test_reference_masks(self, short_run, tmp_path):
        d, cfg = short_run
        assert main(["mask-demo", "--config", cfg, "--data", str(d / "dataset.csv"),
                     "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader((tmp_path / "witnesses.csv").open()))
        assert len(rows) == 100
        assert max(float(r["remask_residual"]) for r in rows) <= 1e-9
        assert min(float(r["min_separation"]) for r in rows) >= 1e-3
        attack = {k: float(v) for k, v in read_kv(tmp_path / "attack.txt").items()}
        assert len(attack) == 6 and min(attack.values()) > 0

    def test_identity_masks(self, short_run, tmp_path):
        d, _ = short_run
        cfg = write_config(tmp_path / "c.yaml", scenario__duration=10.0,
                           masks={"preset": "identity"}, witnesses=5)
        assert main(["mask-demo", "--config", cfg, "--data", str(d / "dataset.csv"),
                     "--out", str(tmp_path)]) == 0
        attack = {k: float(v) for k, v in read_kv(tmp_path / "attack.txt").items()}
        assert all(v == 0.0 for v in attack.values())
        rows = list(csv.DictReader((tmp_path / "witnesses.csv").open()))
        assert len(rows) == 5


class TestMatrixInfo:
    def test_bounds(self, tmp_path):
        assert main(["matrix-info", "--kind", "both", "--out", str(tmp_path)]) == 0
        info = read_kv(tmp_path / "matrix_info.txt")
        assert info["min_samples_hankel"] == "227" and info["min_samples_hankel_masked"] == "231"

    def test_dataset_ranks(self, short_run, tmp_path):
        d, _ = short_run
        assert main(["matrix-info", "--data", str(d / "dataset.csv"), "--out",
                     str(tmp_path)]) == 0
        info = read_kv(tmp_path / "matrix_info.txt")
        assert info["hankel_columns"] == "900" and info["dataset_samples"] == "944"

    def test_sweep_rows(self, short_run, tmp_path):
        _, cfg = short_run
        small = write_config(tmp_path / "c.yaml", scenario__duration=5.0, sweep__seeds=2,
                             controller__T_ini=4, controller__N=8)
        assert main(["matrix-info", "--config", small, "--kind", "hankel", "--sweep", "60,90",
                     "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
        assert len(rows) == 4 and {r["columns"] for r in rows} == {"60", "90"}
        summary = list(csv.DictReader((tmp_path / "sweep_summary.csv").open()))
        assert len(summary) == 2

    def test_bad_sweep(self, tmp_path):
        assert main(["matrix-info", "--sweep", "a,b", "--out", str(tmp_path)]) == 2
