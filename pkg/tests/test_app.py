import pytest
from pytest import fixture

from bkcf.app import main
from bkcf.version import __version__, version_string

from conftest import dense_ratings, write_ratings


@fixture
def experiment_ini(tmp_path):
    write_ratings(tmp_path / "toy.tsv", dense_ratings(users=15, items=20, per_user=12, seed=5))
    path = tmp_path / "toy.ini"
    path.write_text(
        "[Dataset]\nName=Toy\nPath=toy.tsv\n"
        "[Kernels]\nFamilies=linear|disjunctive\nArities=1-2\n"
        "[Eval]\nSeeds=9\n"
        "[Output]\nDir=results\nWriteManifests=false\n",
        encoding="utf-8",
    )
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert __version__ in out
    assert out.strip() == version_string()


def test_missing_config_is_a_usage_error(tmp_path):
    assert main(["--config", str(tmp_path / "nope.ini"), "experiment"]) == 2


def test_default_config_is_created_then_rejected(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["-q", "experiment"]) == 2
    assert (tmp_path / "bkcf.ini").exists()


def test_stats_on_a_file(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    data = write_ratings(tmp_path / "r.tsv", [("a", "x", 1), ("b", "x", 2), ("b", "y", 3)])
    assert main(["-q", "stats", str(data), "--expect", "filmtrust"]) == 0
    out = capsys.readouterr().out
    assert "users:        2" in out
    assert "interactions: 3" in out
    assert "reference FilmTrust" in out


def test_stats_on_a_broken_file(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    data = tmp_path / "r.tsv"
    data.write_text("a\tx\tbad\n", encoding="utf-8")
    assert main(["-q", "stats", str(data)]) == 2


def test_experiment_end_to_end(experiment_ini, tmp_path, capsys):
    out_dir = tmp_path / "elsewhere"
    code = main(["-q", "--config", str(experiment_ini), "--out", str(out_dir), "experiment"])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in printed] == ["linear", "disjunctive(1)", "disjunctive(2)"]
    assert (out_dir / "toy_experiment.csv").exists()
    assert (out_dir / "toy_disjunctive_curve.csv").exists()
    assert not (tmp_path / "results").exists()


def test_seed_flags_override_config(experiment_ini, tmp_path):
    code = main(["-q", "--config", str(experiment_ini), "--seed", "1", "--seed", "2", "experiment"])
    assert code == 0
    folds = (tmp_path / "results" / "toy_folds.csv").read_text(encoding="utf-8").splitlines()
    seeds = {line.split(",")[3] for line in folds[1:]}
    assert seeds == {"1", "2"}


def test_spectral_end_to_end(experiment_ini, tmp_path, capsys):
    assert main(["-q", "--config", str(experiment_ini), "spectral"]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 3
    assert (tmp_path / "results" / "toy_spectral.csv").exists()


def test_arity_beyond_users_is_a_usage_error(experiment_ini):
    text = experiment_ini.read_text(encoding="utf-8").replace("Arities=1-2", "Arities=1-2|40")
    experiment_ini.write_text(text, encoding="utf-8")
    assert main(["-q", "--config", str(experiment_ini), "experiment"]) == 2


def test_invalid_workers_flag(experiment_ini):
    assert main(["-q", "--config", str(experiment_ini), "--workers", "0", "experiment"]) == 2


def test_version_carries_build_tag(monkeypatch):
    monkeypatch.setenv("BKCF_BUILD", "417")
    monkeypatch.setenv("BKCF_GIT_SHA", "0123456789abcdef")
    assert version_string().endswith("(build:417, 0123456789)")
    monkeypatch.delenv("BKCF_BUILD")
    assert version_string() == f"Boolean Kernel CF {__version__}"
