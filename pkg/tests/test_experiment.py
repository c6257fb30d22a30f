import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenechar.data import load_split, read_manifest
from scenechar.experiment import (SUMMARY_HEADER, ExperimentConfig, MetricsReport, confusion_matrix,
                                  default_grid, error_rate, evaluate, evaluate_arrays, fit,
                                  gradient_check, load_reports, reduced_spec, report, run_one, summary_csv,
                                  sweep, train)
from scenechar.network import Network
from scenechar.synth import synth_generate

TINY = dict(k1=4, k2=4, fc_hidden=8, batch_size=8)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    manifest, _ = synth_generate(out, num_classes=3, base_per_class=4, seed=11)
    return out / "manifest.jsonl"


@pytest.fixture(scope="module")
def tiny_arrays(tiny_corpus):
    m = read_manifest(tiny_corpus)
    return (*load_split(m, "train"), *load_split(m, "test"))


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(filter_size=4)
    with pytest.raises(ValueError):
        ExperimentConfig(stride=3)
    with pytest.raises(ValueError):
        ExperimentConfig(learning_rate=-0.1)
    with pytest.raises(ValueError):
        ExperimentConfig(architecture="C")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    cfg = ExperimentConfig(5, 2, 0.5)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == ExperimentConfig(5, 2, 0.5).digest() != ExperimentConfig(5, 2, 0.5, seed=1).digest()


def test_default_grid_order():
    rows = [(c.filter_size, c.stride, c.learning_rate) for c in default_grid()]
    assert rows == [(3, 1, 0.005), (3, 1, 0.5), (3, 2, 0.005), (3, 2, 0.5),
                    (5, 1, 0.005), (5, 1, 0.5), (5, 2, 0.005), (5, 2, 0.5)]
    assert {c.architecture for c in default_grid()} == {"B"}


def test_error_rate_definition():
    cm = np.array([[3, 1], [0, 4]])
    assert error_rate(cm) == pytest.approx(12.5)
    assert confusion_matrix([0, 0, 1], [0, 1, 1], 2).tolist() == [[1, 1], [0, 1]]


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40), st.permutations(range(5)))
def test_error_rate_invariant_under_relabeling(pairs, perm):
    truth = np.array([p[0] for p in pairs])
    pred = np.array([p[1] for p in pairs])
    perm = np.array(perm)
    a = error_rate(confusion_matrix(truth, pred, 5))
    b = error_rate(confusion_matrix(perm[truth], perm[pred], 5))
    assert a == b
    acc = np.trace(confusion_matrix(truth, pred, 5)) / len(pairs)
    assert a == pytest.approx(100 * (1 - acc))


def test_fit_report_invariants(tiny_arrays):
    xtr, ytr, xte, yte = tiny_arrays
    net, rep = fit(ExperimentConfig(epochs=3, **TINY), xtr, ytr, xte, yte, 3)
    cm = np.array(rep.confusion)
    assert cm.sum(axis=1).tolist() == np.bincount(yte, minlength=3).tolist()
    assert rep.error_rate == pytest.approx(100 * (1 - np.trace(cm) / cm.sum()))
    assert len(rep.epoch_loss) == 3 and len(rep.epoch_test_error) == 4
    assert rep.error_rate == min(rep.epoch_test_error)
    assert net.meta["input_mean"] == pytest.approx(float(xtr.mean()))


def test_zero_learning_rate_keeps_parameters(tiny_arrays):
    xtr, ytr, xte, yte = tiny_arrays
    cfg = ExperimentConfig(learning_rate=0.0, epochs=2, **TINY)
    net, rep = fit(cfg, xtr, ytr, xte, yte, 3)
    init_seq, _ = np.random.SeedSequence(cfg.seed).spawn(2)
    fresh = Network.init(cfg.network_spec(3), seed=init_seq)
    for (_, a), (_, b) in zip(net.parameters(), fresh.parameters()):
        assert np.array_equal(a, b)
    assert rep.error_rate == rep.epoch_test_error[0]
    assert len(set(rep.epoch_test_error)) == 1


def test_fit_is_deterministic(tiny_arrays):
    cfg = ExperimentConfig(epochs=3, seed=4, **TINY)
    n1, r1 = fit(cfg, *tiny_arrays, 3)
    n2, r2 = fit(cfg, *tiny_arrays, 3)
    assert n1.to_bytes() == n2.to_bytes()
    assert r1.comparable() == r2.comparable()


def test_divergence_is_an_outcome(tiny_arrays):
    net, rep = fit(ExperimentConfig(learning_rate=1e8, epochs=5, **TINY), *tiny_arrays, 3)
    assert rep.diverged and rep.status == "diverged"
    assert np.isfinite(rep.error_rate)
    assert all(np.all(np.isfinite(p)) for _, p in net.parameters())


def test_empty_split_rejected(tiny_arrays):
    xtr, ytr, xte, yte = tiny_arrays
    with pytest.raises(ValueError):
        fit(ExperimentConfig(**TINY), xtr, ytr, xte[:0], yte[:0], 3)


def test_overfit_two_samples_arch_a():
    rng = np.random.default_rng(0)
    x = rng.random((2, 1, 50, 50))
    y = np.array([0, 1])
    cfg = ExperimentConfig(5, 2, 0.01, "A", epochs=500, k1=4, k2=4, batch_size=2)
    net, rep = fit(cfg, x, y, x, y, 27)
    assert rep.epoch_train_error[-1] == 0.0
    assert evaluate_arrays(net, x, y, 27).error_rate == 0.0


def test_zero_final_layer_predicts_class_zero(tiny_corpus):
    m = read_manifest(tiny_corpus)
    cfg = ExperimentConfig(**TINY)
    net = Network.init(cfg.network_spec(3), 0)
    last = net.modules[-2]
    last.weights[...] = 0.0
    last.bias[...] = 0.0
    rep = evaluate(net, m, "test")
    _, y = load_split(m, "test")
    assert np.array(rep.confusion)[:, 1:].sum() == 0
    assert rep.error_rate == pytest.approx(100 * (1 - np.mean(y == 0)))


def test_evaluate_class_mismatch(tiny_corpus):
    net = Network.init(ExperimentConfig(**TINY).network_spec(27), 0)
    with pytest.raises(ValueError, match="classes"):
        evaluate(net, read_manifest(tiny_corpus))


def test_train_then_evaluate_agree(tiny_corpus):
    m = read_manifest(tiny_corpus)
    net, rep = train(ExperimentConfig(epochs=2, **TINY), m)
    again = evaluate(Network.from_bytes(net.to_bytes()), m, "test")
    assert again.confusion == rep.confusion


def test_sweep_single_cell(tiny_corpus, tmp_path):
    ok = ExperimentConfig(epochs=1, **TINY)
    reports = sweep([ok], tiny_corpus, tmp_path)
    assert len(reports) == 1 and reports[0].status == "ok"
    assert (tmp_path / f"{ok.digest()}.json").is_file()
    assert (tmp_path / f"{ok.digest()}.ckpt").is_file()
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 2


def test_sweep_records_failures(tiny_corpus, tmp_path):
    good = ExperimentConfig(epochs=1, **TINY)
    broken = ExperimentConfig(5, 2, 0.005, epochs=1, k1=4, k2=4, fc_hidden=8, pool_window=30, pool_stride=30)
    reports = sweep([broken, good], tiny_corpus, tmp_path)
    assert [r.status for r in reports] == ["failed", "ok"]
    assert "ShapeError" in reports[0].message
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == ",".join(SUMMARY_HEADER) and len(lines) == 3


def test_summary_ordering_and_report_reproduction(tiny_corpus, tmp_path):
    grid = [ExperimentConfig(f, s, lr, epochs=1, **TINY) for f, s, lr in [(5, 2, 0.5), (3, 1, 0.005), (3, 2, 0.5)]]
    sweep(grid, tiny_corpus, tmp_path)
    text = (tmp_path / "summary.csv").read_text()
    rows = [line.split(",") for line in text.splitlines()[1:]]
    assert [(r[0], r[1], r[2]) for r in rows] == [("3", "1", "0.005"), ("3", "2", "0.5"), ("5", "2", "0.5")]
    assert report(tmp_path, "csv") == text
    assert report(tmp_path, "csv") == summary_csv(load_reports(tmp_path))
    assert '"error_pct"' in report(tmp_path, "json")


def test_parallel_sweep_matches_serial(tiny_corpus, tmp_path):
    grid = [ExperimentConfig(3, s, lr, epochs=1, **TINY) for s in (1, 2) for lr in (0.005, 0.5)]
    serial = sweep(grid, tiny_corpus, tmp_path / "serial", jobs=1)
    parallel = sweep(grid, tiny_corpus, tmp_path / "parallel", jobs=2)
    assert [r.comparable() for r in serial] == [r.comparable() for r in parallel]
    for c in grid:
        a = (tmp_path / "serial" / f"{c.digest()}.ckpt").read_bytes()
        b = (tmp_path / "parallel" / f"{c.digest()}.ckpt").read_bytes()
        assert a == b


def test_run_one_persists_report(tiny_corpus, tmp_path):
    cfg = ExperimentConfig(epochs=1, **TINY)
    rep = run_one(cfg, tiny_corpus, tmp_path)
    assert MetricsReport.from_json((tmp_path / f"{cfg.digest()}.json").read_text()) == rep


@pytest.mark.parametrize("arch", ["A", "B"])
def test_gradient_check_reduced(arch):
    res = gradient_check(reduced_spec(arch), seed=0)
    assert res.finite and res.passed(1e-4)
    assert res.checked > 0


def test_gradient_check_zero_input_is_finite():
    spec = reduced_spec("B")
    res = gradient_check(spec, seed=1, x=np.zeros((2, *spec.input_shape)))
    assert res.finite
