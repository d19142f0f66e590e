"""End-to-end command-line runs against generated fixture data."""

import hashlib
import json
import shutil

import pandas as pd
import pytest

from sharpefolio import cli
from sharpefolio.fixtures import (
    PROXY_PROFILES,
    synthetic_panel,
    write_csv,
    write_universe,
)


def config_text(data_dir, out_dir, body: str) -> str:
    """A config with absolute data paths so tests never depend on cwd.

    Top-level keys in the body must stay ahead of the table sections, so
    the source tables go last.
    """
    sources = "\n".join(
        f'[data.sources.{name}]\npath = "{data_dir / name}.csv"\n'
        for name in ("stock", "bond")
    )
    return f'out = "{out_dir}"\n{body}\n{sources}'


LSTM_BODY = """
seed = 3

[universe]
assets = ["stock", "bond"]

[model]
type = "lstm"
hidden_units = 4
lookback = 8

[train]
batch_size = 8
epochs = 2
learning_rate = 0.01

[schedule]
first_test = 2007-01-03
end = 2007-03-30

[backtest]
rolling_window = 20
"""

BALANCED_BODY = """
[universe]
assets = ["stock", "bond"]

[model]
type = "balanced"

[schedule]
first_test = 2007-01-03
end = 2007-03-30

[backtest]
rolling_window = 20
"""

FIXED_BODY = """
[universe]
assets = ["stock", "bond"]

[model]
type = "fixed"
weights = [0.7, 0.3]

[schedule]
first_test = 2007-01-03
end = 2007-03-30

[backtest]
rolling_window = 20
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Fixture data plus one finished run per strategy flavor."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    write_universe(data, periods=300, seed=7)
    write_universe(data, panel=synthetic_panel(PROXY_PROFILES, periods=300, seed=7))

    configs = {}
    for name, body in [
        ("lstm", LSTM_BODY),
        ("balanced", BALANCED_BODY),
        ("fixed", FIXED_BODY),
    ]:
        path = root / f"{name}.toml"
        path.write_text(config_text(data, root / "runs" / name, body), encoding="utf-8")
        configs[name] = path
        assert cli.main(["backtest", "--config", str(path)]) == 0
    return {"root": root, "data": data, "configs": configs}


def run_dir(workspace, name):
    return workspace["root"] / "runs" / name


class TestValidate:
    def test_valid_config_exits_zero_and_echoes_settings(self, workspace, capsys):
        assert cli.main(["validate", "--config", str(workspace["configs"]["lstm"])]) == 0
        echoed = json.loads(capsys.readouterr().out)
        assert echoed["model"]["type"] == "lstm"
        assert echoed["universe"] == ["stock", "bond"]
        assert echoed["seed"] == 3
        assert echoed["train"]["batch_size"] == 8

    def test_missing_data_file_names_the_path(self, workspace, tmp_path, capsys):
        config = tmp_path / "missing.toml"
        text = workspace["configs"]["lstm"].read_text().replace(
            "bond.csv", "absent.csv"
        )
        config.write_text(text, encoding="utf-8")
        assert cli.main(["validate", "--config", str(config)]) == 1
        assert "absent.csv" in capsys.readouterr().err

    def test_batch_size_one_cites_the_loss_precondition(self, workspace, tmp_path, capsys):
        config = tmp_path / "batch1.toml"
        text = workspace["configs"]["lstm"].read_text().replace(
            "batch_size = 8", "batch_size = 1"
        )
        config.write_text(text, encoding="utf-8")
        assert cli.main(["validate", "--config", str(config)]) == 1
        message = capsys.readouterr().err
        assert "batch_size" in message
        assert "Sharpe loss" in message

    def test_one_line_per_problem(self, workspace, tmp_path, capsys):
        config = tmp_path / "multi.toml"
        text = (
            workspace["configs"]["lstm"]
            .read_text()
            .replace("bond.csv", "absent.csv")
            .replace("batch_size = 8", "batch_size = 1")
        )
        config.write_text(text, encoding="utf-8")
        assert cli.main(["validate", "--config", str(config)]) == 1
        lines = capsys.readouterr().err.strip().splitlines()
        assert len(lines) == 2

    def test_preset_name_resolves_to_shipped_config(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        write_universe(tmp_path / "data", periods=40, seed=7)
        assert cli.main(["validate", "--config", "verification"]) == 0
        echoed = json.loads(capsys.readouterr().out)
        assert echoed["preset"] == "verification"
        assert echoed["model"]["type"] == "lstm"
        assert echoed["model"]["hidden_units"] == 64

    def test_all_shipped_presets_parse(self):
        # Validation beyond parsing needs the data files on disk, so this
        # only proves the shipped files are well-formed TOML with the
        # sections the loader requires.
        for name in ("verification", "time", "asset", "features", "transformer",
                     "balanced", "mvo"):
            config = cli.load_config(name)
            assert config.preset == name
            assert len(config.universe) == 4

    def test_neural_config_without_seed_is_invalid(self, workspace, tmp_path, capsys):
        config = tmp_path / "unseeded.toml"
        config.write_text(
            workspace["configs"]["lstm"].read_text().replace("seed = 3\n", ""),
            encoding="utf-8",
        )
        assert cli.main(["validate", "--config", str(config)]) == 1
        assert "seed" in capsys.readouterr().err


class TestBacktest:
    def test_balanced_five_day_fixture_matches_hand_count(self, tmp_path, capsys):
        # Prices chosen so the five equal-weight test-day returns have
        # signs -, +, +, -, + by inspection: pct_positive must be 3/5.
        dates = pd.bdate_range("2020-01-06", periods=7)
        write_csv(tmp_path / "a.csv", dates, [100.0, 102.0, 104.0, 103.0, 105.0, 104.0, 106.0])
        write_csv(tmp_path / "b.csv", dates, [100.0, 100.0, 98.0, 99.0, 100.0, 100.0, 101.0])
        config = tmp_path / "five.toml"
        config.write_text(
            f"""
out = "{tmp_path / 'run'}"

[data.sources.a]
path = "{tmp_path / 'a.csv'}"

[data.sources.b]
path = "{tmp_path / 'b.csv'}"

[universe]
assets = ["a", "b"]

[model]
type = "balanced"

[schedule]
first_test = 2020-01-07
end = 2020-01-14
""",
            encoding="utf-8",
        )
        assert cli.main(["backtest", "--config", str(config)]) == 0
        metrics = pd.read_csv(tmp_path / "run" / "metrics.csv")
        by_label = dict(zip(metrics["metric"], metrics["value"]))
        assert by_label["% of + Return"] == pytest.approx(3 / 5, abs=1e-12)

        returns = pd.read_csv(tmp_path / "run" / "returns.csv")
        assert len(returns) == 5
        assert (returns["cost"] == 0.0).all()
        first = 0.5 * (104.0 / 102.0 - 1.0) + 0.5 * (98.0 / 100.0 - 1.0)
        assert returns["gross"][0] == pytest.approx(first, abs=1e-15)

    def test_same_config_and_seed_twice_is_byte_identical(self, workspace, tmp_path):
        config = workspace["configs"]["lstm"]
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert cli.main(["backtest", "--config", str(config), "--out", str(out_a)]) == 0
        assert cli.main(["backtest", "--config", str(config), "--out", str(out_b)]) == 0
        for name in ("returns.csv", "weights.csv", "metrics.csv", "rolling_sharpe.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_seed_flag_overrides_config_seed(self, workspace, tmp_path):
        config = workspace["configs"]["lstm"]
        out = tmp_path / "reseeded"
        assert cli.main(["backtest", "--config", str(config), "--out", str(out),
                         "--seed", "99"]) == 0
        baseline = (run_dir(workspace, "lstm") / "returns.csv").read_bytes()
        assert (out / "returns.csv").read_bytes() != baseline
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 99

    def test_writes_only_inside_the_output_directory(self, workspace, tmp_path):
        root = workspace["root"]
        before = {p for p in root.rglob("*")}
        out = tmp_path / "contained"
        assert cli.main(["backtest", "--config", str(workspace["configs"]["balanced"]),
                         "--out", str(out)]) == 0
        after = {p for p in root.rglob("*")}
        assert before == after
        assert (out / "returns.csv").exists()

    def test_transformer_pretrain_manifest_lists_both_phases(self, workspace, tmp_path):
        data = workspace["data"]
        config = tmp_path / "tf.toml"
        config.write_text(
            f"""
seed = 11
out = "{tmp_path / 'tf_run'}"

[data.sources.stock]
path = "{data / 'stock.csv'}"

[data.sources.bond]
path = "{data / 'bond.csv'}"

[data.sources.commodity]
path = "{data / 'commodity.csv'}"

[data.sources.volatility]
path = "{data / 'volatility.csv'}"

[universe]
assets = ["stock", "bond", "commodity", "volatility"]

[model]
type = "transformer"
embedding_size = 8
n_heads = 2
dropout = 0.05
lookback = 12

[train]
batch_size = 16
epochs = 2
learning_rate = 0.005

[schedule]
first_test = 2007-01-03
end = 2007-02-28

[backtest]
rolling_window = 20

[pretrain]
vol_window = 10

[pretrain.sources.wilshire]
path = "{data / 'wilshire.csv'}"

[pretrain.sources.bofa]
path = "{data / 'bofa.csv'}"

[pretrain.sources.gold]
path = "{data / 'gold.csv'}"
""",
            encoding="utf-8",
        )
        assert cli.main(["backtest", "--config", str(config)]) == 0
        manifest = json.loads((tmp_path / "tf_run" / "manifest.json").read_text())
        assert manifest["phases"] == ["pretrain", "finetune"]
        assert set(manifest["data_sha256"]) == {
            "stock", "bond", "commodity", "volatility", "wilshire", "bofa", "gold",
        }

    def test_manifest_records_hash_seed_version_digests(self, workspace):
        manifest = json.loads((run_dir(workspace, "lstm") / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert len(manifest["config_sha256"]) == 64
        assert manifest["version"]
        assert manifest["phases"] == ["train"]
        digest = manifest["data_sha256"]["stock"]
        assert len(digest) == 64
        raw = (workspace["data"] / "stock.csv").read_bytes()
        assert digest == hashlib.sha256(raw).hexdigest()

    def test_replicates_write_runs_and_summary(self, workspace, tmp_path):
        config = tmp_path / "repl.toml"
        config.write_text(
            workspace["configs"]["lstm"].read_text().replace(
                "[backtest]",
                "[replicates]\nn_runs = 2\nreference = 1.858\n\n[backtest]",
            ),
            encoding="utf-8",
        )
        out = tmp_path / "repl_out"
        assert cli.main(["backtest", "--config", str(config), "--out", str(out)]) == 0
        summary = json.loads((out / "replicates.json").read_text())
        assert summary["n_runs"] == 2
        assert len(summary["sharpes"]) == 2
        assert summary["z_test"]["n2"] == 0
        for k in range(2):
            assert (out / f"run_{k:02d}" / "returns.csv").exists()


class TestCompare:
    def test_report_against_itself_gives_p_one(self, workspace, tmp_path, capsys):
        original = run_dir(workspace, "balanced")
        twin = tmp_path / "twin"
        shutil.copytree(original, twin)
        out = tmp_path / "cmp"
        assert cli.main(["compare", str(original), str(twin),
                         "--baseline", "balanced", "--out", str(out)]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        block = doc["strategies"]["twin"]["full_period"]
        assert block["mann_whitney"]["p_value"] == pytest.approx(1.0, abs=1e-12)
        assert block["outperformance"] == 0.0

    def test_three_reports_give_two_pairwise_tests(self, workspace, tmp_path):
        out = tmp_path / "cmp3"
        assert cli.main([
            "compare",
            str(run_dir(workspace, "lstm")),
            str(run_dir(workspace, "fixed")),
            str(run_dir(workspace, "balanced")),
            "--baseline", "balanced",
            "--out", str(out),
        ]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        tested = [n for n, entry in doc["strategies"].items() if "full_period" in entry]
        assert sorted(tested) == ["fixed", "lstm"]
        assert "full_period" not in doc["strategies"]["balanced"]

    def test_zoom_flag_adds_zoom_blocks(self, workspace, tmp_path):
        out = tmp_path / "zoomed"
        assert cli.main([
            "compare",
            str(run_dir(workspace, "lstm")),
            str(run_dir(workspace, "balanced")),
            "--baseline", "balanced",
            "--zoom", "2007-02-15",
            "--out", str(out),
        ]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        assert doc["zoom_start"] == "2007-02-15"
        entry = doc["strategies"]["lstm"]
        assert "full_period" in entry and "zoom" in entry
        zoom_n = entry["zoom"]["mann_whitney"]["n1"]
        assert 0 < zoom_n < entry["full_period"]["mann_whitney"]["n1"]

    def test_default_zoom_skipped_when_calendar_ends_earlier(self, workspace, tmp_path):
        out = tmp_path / "nozoom"
        assert cli.main([
            "compare",
            str(run_dir(workspace, "lstm")),
            str(run_dir(workspace, "balanced")),
            "--out", str(out),
        ]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        assert doc["zoom_start"] is None
        assert "zoom" not in doc["strategies"]["balanced"]

    def test_comparison_round_trips_report_values(self, workspace, tmp_path):
        # The reconstructed reports must carry the original metric values.
        out = tmp_path / "values"
        assert cli.main([
            "compare",
            str(run_dir(workspace, "lstm")),
            str(run_dir(workspace, "balanced")),
            "--baseline", "balanced",
            "--out", str(out),
        ]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        metrics = pd.read_csv(run_dir(workspace, "lstm") / "metrics.csv")
        sharpe = dict(zip(metrics["metric"], metrics["value"]))["Sharpe Ratio"]
        assert doc["metrics"]["Sharpe Ratio"]["lstm"] == pytest.approx(sharpe, rel=1e-9)

    def test_missing_report_directory_is_a_data_error(self, workspace, tmp_path, capsys):
        code = cli.main([
            "compare",
            str(run_dir(workspace, "lstm")),
            str(tmp_path / "nowhere"),
        ])
        assert code == 2
        assert "nowhere" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_config_file_is_config_error(self, tmp_path, capsys):
        assert cli.main(["validate", "--config", str(tmp_path / "nope.toml")]) == 1
        assert "nope.toml" in capsys.readouterr().err

    def test_corrupt_data_maps_to_exit_two(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("Date,Adj Close\n2006-01-03,10\n2006-01-04,-4\n", encoding="utf-8")
        config = tmp_path / "corrupt.toml"
        config.write_text(
            workspace["configs"]["balanced"]
            .read_text()
            .replace(str(workspace["data"] / "bond.csv"), str(bad))
            .replace(str(workspace["root"] / "runs" / "balanced"), str(tmp_path / "o")),
            encoding="utf-8",
        )
        assert cli.main(["backtest", "--config", str(config)]) == 2
        assert "non-positive" in capsys.readouterr().err

    def test_numerical_failure_maps_to_exit_three(self, workspace, monkeypatch, capsys):
        from sharpefolio.errors import NumericalError

        def explode(args):
            raise NumericalError("loss became non-finite")

        monkeypatch.setattr(cli, "cmd_backtest", explode)
        code = cli.main(["backtest", "--config", str(workspace["configs"]["lstm"])])
        assert code == 3
        assert "non-finite" in capsys.readouterr().err

    def test_parse_failure_is_config_error(self, tmp_path, capsys):
        config = tmp_path / "broken.toml"
        config.write_text("[model\ntype = ", encoding="utf-8")
        assert cli.main(["validate", "--config", str(config)]) == 1
        assert "TOML" in capsys.readouterr().err
