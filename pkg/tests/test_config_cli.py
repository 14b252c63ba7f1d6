import json
import os

import numpy as np
import pytest

from plcnoise.cli import main
from plcnoise.config import THREADS_ENV, RunConfig
from plcnoise.exceptions import ConfigError, StageError
from plcnoise.ingest import TraceWriter
from plcnoise.pipeline import FIGURES, Report, emit_plot_data, run_pipeline, run_synthesis

FREQS = "0,100,200,300,400,500,600,700"


@pytest.fixture(scope="module")
def trace(tmp_path_factory):
    d = tmp_path_factory.mktemp("trace")
    cfg = RunConfig(synth_length=4000, synth_frequencies=FREQS, seed=7,
                    synth_output=str(d / "t.plnz"))
    path, _ = run_synthesis(cfg)
    return path


@pytest.fixture(scope="module")
def run(trace, tmp_path_factory):
    out = tmp_path_factory.mktemp("rep")
    cfg = RunConfig(input=[trace], output_dir=str(out), fit_mode="both", threads=1)
    code, report = run_pipeline(cfg)
    return code, report, out


# -- config ------------------------------------------------------------------------

def test_config_text_roundtrip(tmp_path):
    cfg = RunConfig(input=["a.csv", "b.plnz"], alpha=0.01, chunk_lengths=[30, 90],
                    burst_thresholds=[0.0, 0.25], seed=42, stages=["qa", "fit"])
    p = tmp_path / "run.cfg"
    cfg.save(p)
    assert RunConfig.load(p) == cfg
    assert RunConfig.from_text(cfg.to_text()).to_text() == cfg.to_text()


def test_config_comments_and_errors():
    cfg = RunConfig.from_text("# header\nalpha = 0.1  # looser\n\nseed=3\n")
    assert cfg.alpha == 0.1 and cfg.seed == 3
    for bad in ("nope = 1", "alpha = x", "alpha = 2", "gap_policy = sometimes",
                "stages = qa,plot", "alpha"):
        with pytest.raises(ConfigError):
            RunConfig.from_text(bad)


def test_threads_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert RunConfig().n_threads() == 3
    assert RunConfig(threads=2).n_threads() == 2
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        RunConfig().n_threads()
    monkeypatch.delenv(THREADS_ENV)
    assert RunConfig().n_threads() >= 1


# -- pipeline ------------------------------------------------------------------------

def test_pipeline_writes_everything(run):
    code, report, out = run
    assert code == 0
    names = set(os.listdir(out))
    expected = {name for _, name in FIGURES.values()} | {
        "gaps.json", "summary.csv", "regions.json", "stationarity.json", "ljung_box.csv",
        "fit.json", "fit_per_frequency.csv", "bursts.json", "manifest.json"}
    assert expected <= names
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 0
    assert all(s["status"] == "ok" for s in man["stages"].values())


def test_counts_add_up(run):
    _, report, _ = run
    c = report.counts
    assert c["total_samples"] == 8 * 4000
    assert int(np.sum(c["per_frequency"])) == c["total_samples"]
    assert sum(c["series_lengths"].values()) == c["total_samples"]


def test_figure_schemas(run):
    _, _, out = run
    head = lambda n: (out / n).read_text().splitlines()[0]
    assert head("fig4_spectrum.csv") == "hz,min,q10,q50,q90,max"
    assert head("fig7_stationarity.csv") == "chunk_len_s,channel,fraction,degenerate_count"
    assert head("fig8_acf.csv") == "hz,lag,rho,bound,significant"
    rows = (out / "fig4_spectrum.csv").read_text().splitlines()[1:]
    assert len(rows) == 776
    for r in rows:
        vals = [float(v) for v in r.split(",")[1:] if v != "nan"]
        assert vals == sorted(vals)


def test_burst_survival_non_increasing(run):
    _, _, out = run
    lines = (out / "fig_burst.csv").read_text().splitlines()[1:]
    by_thr = {}
    for line in lines:
        thr, _, _, _, s = line.split(",")
        by_thr.setdefault(thr, []).append(int(s))
    assert by_thr
    for surv in by_thr.values():
        assert all(a >= b for a, b in zip(surv, surv[1:]))


def test_fit_recovers_published_step(run):
    _, report, _ = run
    t = report.results["fit"]["t_fit"]
    assert t.sigma == pytest.approx(3.47, rel=0.1)
    assert t.nu == pytest.approx(2.87, rel=0.25)


def test_determinism(trace, tmp_path):
    outs = []
    for k in range(2):
        cfg = RunConfig(input=[trace], output_dir=str(tmp_path / str(k)), threads=1 + k)
        assert run_pipeline(cfg)[0] == 0
        outs.append(tmp_path / str(k))
    files = sorted(f for f in os.listdir(outs[0]) if f != "manifest.json")
    assert files == sorted(f for f in os.listdir(outs[1]) if f != "manifest.json")
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f


def test_missing_stage_raises(trace, tmp_path):
    cfg = RunConfig(input=[trace], output_dir=str(tmp_path), stages=["qa"])
    code, report = run_pipeline(cfg)
    assert code == 0
    with pytest.raises(StageError):
        emit_plot_data(report, "fig7", tmp_path / "x.csv")
    with pytest.raises(ValueError):
        emit_plot_data(report, "fig99", tmp_path / "x.csv")
    with pytest.raises(StageError):
        Report(cfg).require("fit")


def test_stage_failure_is_isolated(trace, tmp_path):
    cfg = RunConfig(input=[trace], output_dir=str(tmp_path), moving_window=10**6,
                    stages=["qa", "moving", "fit"])
    code, report = run_pipeline(cfg)
    assert code == 4
    assert report.status["moving"]["status"] == "error"
    assert report.status["qa"]["status"] == "ok" and report.status["fit"]["status"] == "ok"


def test_empty_input_writes_only_manifest(tmp_path):
    p = tmp_path / "empty.plnz"
    with TraceWriter(str(p)):
        pass
    out = tmp_path / "rep"
    code, _ = run_pipeline(RunConfig(input=[str(p)], output_dir=str(out)))
    assert code == 3
    assert os.listdir(out) == ["manifest.json"]
    assert json.loads((out / "manifest.json").read_text())["status"] == "error"


# -- command line ----------------------------------------------------------------------

def test_cli_exit_codes(trace, tmp_path, capsys):
    assert main(["qa", trace, "-o", str(tmp_path / "a")]) == 0
    assert main(["qa", trace, "--alpha", "7"]) == 2
    assert main(["qa", str(tmp_path / "missing.plnz"), "-o", str(tmp_path / "b")]) == 3
    assert main(["all", "--dump-config", "--seed", "5"]) == 0
    assert "seed = 5" in capsys.readouterr().out


def test_cli_config_precedence(tmp_path, capsys):
    p = tmp_path / "run.cfg"
    p.write_text("alpha = 0.01\nseed = 4\n")
    assert main(["stationarity", "--config", str(p), "--seed", "9", "--dump-config"]) == 0
    text = capsys.readouterr().out
    assert "alpha = 0.01" in text and "seed = 9" in text and "stages = stationarity" in text


def test_cli_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv(THREADS_ENV, "0")
    assert main(["qa", "--dump-config"]) == 2


def test_cli_synth(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["synth", "--synth-length", "50", "--synth-frequencies", "3,4",
                 "--synth-output", str(out)]) == 0
    assert out.exists() and (tmp_path / "s.csv.model.json").exists()
