import hashlib

import pytest

from groupvenue.cli import build_parser, main
from groupvenue.config import SCHEMA, ConfigError, load_config

SMALL = ["--world-n-groups", "8", "--world-points-per-user", "600", "--threads", "1"]


def _out(tmp_path):
    return ["--paths-output-dir", str(tmp_path / "out")]


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", *SMALL, *_out(root)]) == 0
    return root


def _digest(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


def test_help_lists_every_config_key(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["evaluate", "--help"])
    text = capsys.readouterr().out
    for section, keys in SCHEMA.items():
        for key in keys:
            assert f"--{section}-{key}".replace("_", "-") in text
    assert "--threads" in text and "--json" in text


def test_beta_above_alpha_exits_one(tmp_path, capsys):
    code = main(["cluster", *_out(tmp_path), "--consensus-alpha", "0.2", "--consensus-beta", "0.6"])
    assert code == 1
    assert "beta <= alpha" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[consensus]\nalpha = 0.7\nbeta = 0.1\n[dbscan]\nradius = 25\n")
    cfg = load_config(ini)
    assert cfg.consensus().alpha == 0.7 and cfg.dbscan().radius == 25.0
    cfg = load_config(ini, {("consensus", "alpha"): "0.9"})
    assert cfg.consensus().alpha == 0.9 and cfg.consensus().beta == 0.1
    assert load_config(None).to_ini().startswith("[paths]")
    bad = tmp_path / "bad.ini"
    bad.write_text("[dbscan]\nradious = 3\n")
    with pytest.raises(ConfigError, match="dbscan.radious"):
        load_config(bad)
    assert main(["cluster", "--config", str(tmp_path / "missing.ini")]) == 1


def test_missing_upstream_names_generate(tmp_path, capsys):
    assert main(["evaluate", *_out(tmp_path)]) == 1
    assert "groupvenue generate" in capsys.readouterr().err


def test_cluster_dumps(generated):
    assert main(["cluster", *SMALL, *_out(generated)]) == 0
    dumps = generated / "out" / "clusters"
    assert (dumps / "clusters.csv").read_text().startswith("cluster_id,lat,lon,total_points\n")
    assert (dumps / "cluster_counts.csv").exists() and (dumps / "groups.json").exists()


def test_predict_twice_gives_identical_dumps(generated):
    data_before = _digest(generated / "out" / "data")
    target = generated / "out" / "predictions_social.csv"
    assert main(["predict", "--strategy", "social", *SMALL, *_out(generated)]) == 0
    first = target.read_bytes()
    assert main(["predict", "--strategy", "social", *SMALL, *_out(generated)]) == 0
    assert target.read_bytes() == first
    assert first.startswith(b"event_id,group_id,cluster_id,score,predicted\n")
    assert _digest(generated / "out" / "data") == data_before


def test_recommend_writes_top_n(generated):
    assert main(["recommend", "--top-n", "5", *SMALL, *_out(generated)]) == 0
    lines = (generated / "out" / "recommendations.csv").read_text().splitlines()
    assert lines[0] == "event_id,rank,venue_id,score"
    assert max(int(r.split(",")[1]) for r in lines[1:]) == 5


def test_unreachable_provider_is_a_runtime_error(generated, capsys):
    code = main(["recommend", *SMALL, *_out(generated), "--provider-kind", "http",
                 "--provider-base-url", "http://127.0.0.1:9"])
    assert code == 2
    assert "runtime error" in capsys.readouterr().err


def test_evaluate_writes_reports_and_timing(generated):
    assert main(["evaluate", "--json", *SMALL, *_out(generated)]) == 0
    reports = generated / "out" / "reports"
    assert {p.name for p in reports.iterdir()} >= {"main.csv", "main.txt", "main.json", "main_metrics.csv"}
    assert (generated / "out" / "timing.json").exists()
