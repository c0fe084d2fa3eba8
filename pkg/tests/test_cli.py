import json
import os

import numpy as np
import pytest

from privstate import cli
from privstate import expsim as ex
from privstate import qlinalg as ql
from privstate import tomography as tm


def run_cli(args):
    return cli.main(args)


def read(path):
    with open(path) as fh:
        return fh.read()


def test_simulate_reruns_byte_identical(tmp_path):
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli(["simulate", "--seed", "9", "--intervals", "25", "--outdir", d1]) == 0
    assert run_cli(["simulate", "--seed", "9", "--intervals", "25", "--outdir", d2]) == 0
    assert read(os.path.join(d1, "counts.txt")) == read(os.path.join(d2, "counts.txt"))
    assert read(os.path.join(d1, "events.txt")) == read(os.path.join(d2, "events.txt"))


def test_simulate_record_count_and_default(tmp_path):
    d = str(tmp_path / "r")
    assert run_cli(["simulate", "--seed", "1", "--intervals", "10", "--outdir", d]) == 0
    recs = ex.load_records(os.path.join(d, "counts.txt"))
    assert len(recs) == 10
    assert cli.RunConfig(seed=0).n_intervals == 33637


def test_missing_seed_is_config_error(capsys):
    assert run_cli(["simulate", "--intervals", "5"]) == 2


def test_invalid_config_file_is_config_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 1, "n_intervals": -3}))
    assert run_cli(["simulate", "--config", str(cfg)]) == 2


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4, "n_intervals": 12, "outdir": str(tmp_path / "x")}))
    assert run_cli(["simulate", "--config", str(cfg), "--intervals", "7"]) == 0
    recs = ex.load_records(str(tmp_path / "x" / "counts.txt"))
    assert len(recs) == 7


def test_stage_seeds_differ_by_label():
    assert cli.stage_seed(5, "counts") != cli.stage_seed(5, "events")
    assert cli.stage_seed(5, "counts") == cli.stage_seed(5, "counts")


def test_format_uncertainty_paper_style():
    assert cli.format_uncertainty(0.690, 0.007) == "0.690(7)"
    assert cli.format_uncertainty(0.581, 0.004) == "0.581(4)"
    assert cli.format_uncertainty(0.354, 0.005) == "0.354(5)"
    assert cli.format_uncertainty(1.0, 0.0) == "1(0)"


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("pipeline"))
    cfg = cli.RunConfig(seed=33, outdir=d, n_intervals=2200, samples=60, method="both")
    records, stream = cli.cmd_simulate(cfg)
    ml, posterior = cli.cmd_reconstruct(cfg, records)
    ensemble = cli.cmd_sample(cfg, posterior)
    return cfg, records, stream, ml, posterior, ensemble


def test_pipeline_files_exist(small_run):
    cfg = small_run[0]
    for key in ("counts", "events", "ml", "posterior", "kf_ensemble"):
        assert os.path.exists(cfg.path(key)), key


def test_reconstruct_files_load_back(small_run):
    cfg, records, stream, ml, posterior, ensemble = small_run
    ml_back = ql.load_operator(cfg.path("ml"))
    assert np.array_equal(ml_back.matrix, ml.matrix)
    post_back = tm.load_posterior(cfg.path("posterior"))
    assert np.array_equal(post_back.mean, posterior.mean)
    ens_back = tm.load_ensemble(cfg.path("kf_ensemble"))
    assert len(ens_back) == len(ensemble)


def test_report_internally_consistent(small_run):
    cfg, records, stream, ml, posterior, ensemble = small_run
    summary = cli.cmd_report(cfg, ensemble, ml=ml, posterior=posterior)
    assert abs(
        summary["x_cqq"][0] - (summary["chi_B"][0] - summary["chi_E"][0])
    ) < 1e-9
    text = read(cfg.path("report"))
    assert "machine-readable" in text
    assert "x_cqq_mean" in text


def test_keygen_and_distill_transcripts(small_run):
    cfg, records, stream, ml, posterior, ensemble = small_run
    direct = cli.cmd_keygen(cfg, stream, ensemble, "direct")
    distilled = cli.cmd_keygen(cfg, stream, ensemble, "distilled")
    assert np.array_equal(direct.alice_raw if direct.n_corrected == 0 else
                          direct.corrected_key, direct.corrected_key)
    assert os.path.exists(cfg.path("direct"))
    assert os.path.exists(cfg.path("distilled"))
    assert distilled.n_final <= direct.n_final
    # epsilon monotonicity: a margin-free run cannot give a shorter key
    loose = cli.RunConfig(seed=33, outdir=cfg.outdir, epsilon=1.0)
    from privstate import keypipe as kp

    tr_loose = kp.direct_keygen(stream, ensemble, epsilon=1.0, seed=1)
    tr_tight = kp.direct_keygen(stream, ensemble, epsilon=1e-6, seed=1)
    assert tr_loose.n_final >= tr_tight.n_final


def test_unknown_state_is_config_error(tmp_path):
    assert run_cli([
        "simulate", "--seed", "2", "--intervals", "5", "--state", "bogus",
        "--outdir", str(tmp_path / "s"),
    ]) == 2
