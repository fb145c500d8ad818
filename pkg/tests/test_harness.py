import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from scipy.stats import spearmanr

from oscifit.harness import (
    CSV_SCHEMA,
    EvalRecord,
    ExperimentConfig,
    PartialReport,
    TruthStub,
    agreement,
    assisted_fit,
    eval_am_noise_sweep,
    eval_benchmark,
    eval_partial,
    export,
    make_test_pairs,
    plot_beta_sweep,
    read_records_csv,
    summarize,
    sweep_pairs,
    write_records_csv,
)
from oscifit.signalgen import LATENT_FULL, LATENT_PARTIAL, ProcessKind, TimeGrid, gen_mono

T = 128


@pytest.fixture(scope="module")
def mono_pairs():
    return make_test_pairs("mono", 40, 3, T)


@pytest.fixture(scope="module")
def mono_records(mono_pairs):
    return eval_benchmark(TruthStub(mono_pairs), "mono", 40, 3)


def test_stub_gives_zero_network_error(mono_records):
    assert len(mono_records) == 40
    assert all(r.dnn_mse_reg == 0.0 and r.dnn_mse_dec == 0.0 for r in mono_records)
    assert all(r.fit_mse_dec >= 0 and r.fit_mse_reg >= 0 for r in mono_records)


def test_records_sorted_by_noise(mono_records):
    sigmas = [r.sigma_true for r in mono_records]
    assert sigmas == sorted(sigmas)
    assert sorted(r.sample_id for r in mono_records) == list(range(40))


def test_noiseless_fit_is_perfect():
    p = make_test_pairs("mono", 1, 8, T)[0].latents.replace(sigma=0.0)
    pair = gen_mono(TimeGrid(T), p)
    rec = eval_benchmark(TruthStub([pair]), "mono", 1, 0, pairs=[pair])[0]
    assert rec.fit_mse_dec <= 1e-10 and rec.true_guess_sse == 0.0


def test_metric_symmetry(mono_pairs, mono_records):
    # both columns score against the same normalized clean series
    rec = mono_records[5]
    pair = mono_pairs[rec.sample_id]
    offset = np.full(T, 0.01)
    sig = pair.clean_normalized + offset
    assert np.mean((sig - pair.clean_normalized) ** 2) == pytest.approx(1e-4)


def test_exclude_sigma_changes_only_regression(mono_pairs):
    a = eval_benchmark(TruthStub(mono_pairs), "mono", 40, 3)
    b = eval_benchmark(TruthStub(mono_pairs), "mono", 40, 3, exclude_sigma=True)
    assert [r.fit_mse_dec for r in a] == [r.fit_mse_dec for r in b]
    assert any(x.fit_mse_reg != y.fit_mse_reg for x, y in zip(a, b))


def test_am_sweep_shares_latents():
    pairs = sweep_pairs(60, 11, T)
    first = pairs[0].latents
    for pair in pairs:
        p = pair.latents
        assert (p.fc, p.phi, p.tau, p.fm, p.im) == (first.fc, first.phi, first.tau, first.fm, first.im)
    records = eval_am_noise_sweep(TruthStub(pairs), 60, 11)
    sigmas = [r.sigma_true for r in records]
    assert all(b > a for a, b in zip(sigmas, sigmas[1:]))
    assert sigmas[0] == 0.0 and sigmas[-1] == 2.0
    # the fit error grows like σ² in physical units; per-sample min-max scaling
    # grows with σ as well, which flattens the normalized column at high noise
    physical = [r.fit_mse_dec * pairs[r.sample_id].norm.scale ** 2 for r in records]
    assert spearmanr(sigmas, physical).statistic > 0.8
    normalized = spearmanr(sigmas, [r.fit_mse_dec for r in records]).statistic
    assert 0.0 < normalized < 0.8


@pytest.mark.parametrize("kind", ["mono", "am"])
def test_stub_assisted_agreement_is_total(kind):
    pairs = make_test_pairs(kind, 25, 4, T)
    report = assisted_fit(TruthStub(pairs), kind, 25, 4)
    assert report.agreement == 1.0
    assert all(not math.isnan(r.assisted_sse) for r in report.records)


def test_agreement_rule():
    assert agreement(1.0, 1.005)
    assert not agreement(1.0, 1.05)
    assert agreement(0.0, 1e-12)
    assert not agreement(1e-6, 0.0)


def test_stub_rejects_unknown_input(mono_pairs):
    with pytest.raises(KeyError):
        TruthStub(mono_pairs[:2]).predict(np.zeros(T))


def test_partial_table_rows():
    pairs = make_test_pairs("am", 10, 6, T)
    partial = TruthStub(pairs, LATENT_PARTIAL)
    spec = TruthStub(pairs, LATENT_FULL)
    report = eval_partial(partial, spec, 10, 6)
    assert list(report.rows) == ["fc", "phi", "tau", "sigma", "fm", "im", "signal"]
    assert report.rows["fm"][0] is None and report.rows["im"][0] is None
    assert report.rows["fm"][1] == 0.0 and report.rows["signal"] == (0.0, 0.0)
    with pytest.raises(ValueError):
        eval_partial(spec, spec, 10, 6)


def test_experiment_config_checks():
    assert ExperimentConfig("partial").n_samples == 300
    with pytest.raises(ValueError):
        ExperimentConfig("unknown")
    with pytest.raises(ValueError):
        ExperimentConfig("assisted_fit", n_samples=0)
    with pytest.raises(ValueError):
        ExperimentConfig("assisted_fit", agreement_epsilon=0.0)


# ---------------------------------------------------------------- export


@pytest.fixture(scope="module")
def assisted_records():
    pairs = make_test_pairs("mono", 12, 9, T)
    return assisted_fit(TruthStub(pairs), "mono", 12, 9).records


def test_csv_roundtrip_exact(tmp_path, mono_records):
    write_records_csv(tmp_path / "r.csv", mono_records)
    back = read_records_csv(tmp_path / "r.csv")
    for a, b in zip(mono_records, back):
        for name in EvalRecord.field_names():
            x, y = getattr(a, name), getattr(b, name)
            assert (x == y) or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.split(",") == EvalRecord.field_names()


def test_export_files_and_summary(tmp_path, assisted_records):
    summary = export(assisted_records, tmp_path, "a", epsilon=0.01)
    for name in ("a.csv", "a.summary.json", "a.svg"):
        assert (tmp_path / name).is_file()
    ET.parse(tmp_path / "a.svg")
    on_disk = json.loads((tmp_path / "a.summary.json").read_text())
    assert on_disk["csv_schema"] == CSV_SCHEMA
    back = read_records_csv(tmp_path / "a.csv")
    assert on_disk["agreement"] == sum(r.agree for r in back) / len(back) == summary["agreement"]
    top = [r.fit_mse_dec for r in back if 1 <= r.sigma_true <= 2]
    expected = float(np.median(top)) if top else None
    assert on_disk["fit_mse_dec"]["median_top_half"] == expected


def test_export_is_byte_reproducible(tmp_path, assisted_records):
    export(assisted_records, tmp_path / "x", "a")
    export(assisted_records, tmp_path / "y", "a")
    for name in ("a.csv", "a.summary.json", "a.svg"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_partial_and_sweep_plots_are_valid_svg(tmp_path):
    report = PartialReport({"fc": (0.1, 0.05), "fm": (None, 0.2), "signal": (0.02, 0.03)}, 5)
    export([EvalRecord(0, "am", 0.5, 0.1, 0.1, 0.1, 0.1)], tmp_path, "p", partial=report)
    ET.parse(tmp_path / "p.partial.svg")
    hist = {b: [{"set_index": i, "mse_reg": 0.1 / (i + 1), "mse_dec": 0.05 / (i + 1)} for i in range(3)]
            for b in (0.0, 0.5)}
    ET.parse(plot_beta_sweep(tmp_path / "b.svg", hist))


def test_summary_needs_records():
    with pytest.raises(ValueError):
        summarize([])


def test_kind_labels(mono_records):
    assert {r.kind for r in mono_records} == {ProcessKind.MONO.label}
