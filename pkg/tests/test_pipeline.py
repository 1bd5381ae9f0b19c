"""End-to-end tests of the command-line pipeline on a tiny synthetic dataset."""

import csv

import numpy as np
import pytest

from glat.analyzers.metrics import auc_metric
from glat.config import Settings, load_settings
from glat.generators.synth_generator import synth_generate
from glat.main import main
from glat.models import SynthSpec
from glat.pipeline import SlidePreparer, holdout_run

TINY = {
    "n_slides": 18,
    "grid_w": 6,
    "grid_h": 6,
    "embed_dim": 6,
    "lesion_radius_min": 1,
    "lesion_radius_max": 2,
    "noise_scale": 0.3,
    "m": 8,
    "t": 2,
    "irm_d_k": 4,
    "irm_d_v": 4,
    "d_k": 4,
    "d_v": 4,
    "lr": 0.01,
    "batch_size": 4,
    "max_epochs": 2,
    "patience": 2,
    "folds": 3,
}


def _config(path, **overrides):
    values = {**TINY, **overrides}
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic dataset plus a trained checkpoint shared by the tests."""
    root = tmp_path_factory.mktemp("pipeline")
    config = _config(root / "glat.conf")
    data = root / "data"
    assert main(["synth", "--config", str(config), "--output-dir", str(data)]) == 0
    assert main(["train", "--config", str(config), "--input", str(data), "--output-dir", str(root / "train")]) == 0
    return root, config, data


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_synth_writes_dataset(workspace):
    _, _, data = workspace
    rows = _read_csv(data / "labels.csv")
    assert rows[0] == ["slide_id", "label", "file"]
    assert len(rows) == 19
    assert all((data / row[2]).exists() for row in rows[1:])


def test_train_artifacts(workspace):
    root, _, _ = workspace
    out = root / "train"
    assert (out / "checkpoint.txt").read_text(encoding="utf-8").startswith("#glat-checkpoint v1")
    history = _read_csv(out / "history.csv")
    assert history[0] == ["epoch", "train_loss", "val_loss", "val_auc", "val_kappa"]
    assert 1 <= len(history) - 1 <= 2
    assert _read_csv(out / "val_predictions.csv")[0] == ["slide_id", "p0", "p1", "p2", "p3", "pred", "label"]


def test_select_writes_traces(workspace, tmp_path):
    _, config, data = workspace
    assert main(["select", "--config", str(config), "--input", str(data), "--output-dir", str(tmp_path)]) == 0

    trace = _read_csv(tmp_path / "traces" / "slide_0000.csv")
    assert trace[0] == ["t", "pool_size", "selected_ids"]
    assert [row[0] for row in trace[1:]] == ["0", "1"]
    assert len(trace[-1]) - 2 == 8
    assert (tmp_path / "selected" / "slide_0000.txt").exists()


def test_select_single_table_trace_path(workspace, tmp_path):
    _, config, data = workspace
    trace = tmp_path / "one.csv"
    code = main([
        "select", "--config", str(config), "--input", str(data / "slides" / "slide_0001.txt"),
        "--output-dir", str(tmp_path), "--trace", str(trace), "--m", "4", "--t", "3",
    ])
    assert code == 0
    rows = _read_csv(trace)
    assert len(rows) == 4
    assert len(rows[-1]) - 2 == 4


def test_infer_and_heatmaps(workspace, tmp_path):
    root, config, data = workspace
    checkpoint = root / "train" / "checkpoint.txt"
    assert main([
        "infer", "--config", str(config), "--input", str(data), "--checkpoint", str(checkpoint),
        "--output-dir", str(tmp_path),
    ]) == 0
    rows = _read_csv(tmp_path / "predictions.csv")
    assert len(rows) == 19
    for row in rows[1:]:
        assert sum(float(p) for p in row[1:5]) == pytest.approx(1.0, abs=1e-9)

    for source in ("irm", "gla"):
        out = tmp_path / source
        assert main([
            "heatmap", "--config", str(config), "--input", str(data / "slides" / "slide_0002.txt"),
            "--checkpoint", str(checkpoint), "--source", source, "--output-dir", str(out),
        ]) == 0
        tokens = (out / "heatmaps" / "slide_0002.pgm").read_text(encoding="ascii").split()
        assert tokens[:4] == ["P2", "6", "6", "255"]


def test_gla_heatmap_scores_only_selected_patches(workspace, tmp_path):
    root, config, data = workspace
    assert main([
        "heatmap", "--config", str(config), "--input", str(data / "slides" / "slide_0003.txt"),
        "--checkpoint", str(root / "train" / "checkpoint.txt"), "--source", "gla", "--output-dir", str(tmp_path),
    ]) == 0
    scores = [float(row[2]) for row in _read_csv(tmp_path / "heatmaps" / "slide_0003.csv")[1:]]
    assert len(scores) == 36
    assert sum(1 for s in scores if s > 0) == 8
    assert sum(scores) == pytest.approx(1.0, abs=1e-9)


def test_infer_dimension_mismatch(workspace, tmp_path):
    root, _, data = workspace
    bad = _config(tmp_path / "bad.conf", d_v=2)
    code = main([
        "infer", "--config", str(bad), "--input", str(data), "--checkpoint", str(root / "train" / "checkpoint.txt"),
        "--output-dir", str(tmp_path),
    ])
    assert code == 5


def test_error_exit_codes(workspace, tmp_path):
    _, config, _ = workspace
    assert main(["train", "--config", str(config), "--input", str(tmp_path / "none")]) == 4
    assert main(["infer", "--config", str(config), "--input", str(tmp_path)]) == 4

    broken = tmp_path / "broken.conf"
    broken.write_text("m = eight\n", encoding="utf-8")
    assert main(["synth", "--config", str(broken), "--output-dir", str(tmp_path)]) == 3

    table = tmp_path / "bad.txt"
    table.write_text("#glat-embeddings v1 d=2\n0,0,0,1.0\n", encoding="utf-8")
    assert main(["select", "--config", str(config), "--input", str(table), "--output-dir", str(tmp_path)]) == 6


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2


def test_crossval_mean_matches_fold_outputs(workspace, tmp_path):
    _, config, data = workspace
    assert main(["crossval", "--config", str(config), "--input", str(data), "--output-dir", str(tmp_path)]) == 0

    summary = {row[0]: row[1:] for row in _read_csv(tmp_path / "crossval.csv")[1:]}
    fold_aucs = []
    seen = set()
    for fold in range(3):
        rows = _read_csv(tmp_path / f"fold_{fold}_predictions.csv")[1:]
        seen.update(row[0] for row in rows)
        probs = np.array([[float(p) for p in row[1:5]] for row in rows])
        labels = [int(row[6]) for row in rows]
        fold_aucs.append(auc_metric(probs, labels))
        assert float(summary[str(fold)][0]) == pytest.approx(fold_aucs[-1], abs=1e-12)

    assert len(seen) == 18
    assert float(summary["mean"][0]) == pytest.approx(np.mean(fold_aucs), abs=1e-12)


def test_crossval_is_byte_identical(workspace, tmp_path):
    _, config, data = workspace
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["crossval", "--config", str(config), "--input", str(data), "--output-dir", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0] == outputs[1]


@pytest.mark.parametrize("scorer", ["fm", "none"])
def test_scorer_switch_selects_noiseless_lesions(scorer):
    settings = Settings(scorer=scorer, m=12, t=3)
    spec = SynthSpec(
        n_slides=3, grid_w=10, grid_h=10, d=8, noise_scale=0.0,
        lesion_count_range=(1, 1), lesion_radius_range=(2, 3), class_mixture=(0.0, 1.0, 1.0, 1.0),
    )
    preparer = SlidePreparer(settings)
    for slide in synth_generate(spec):
        selected, _ = preparer.select(slide.table)
        assert set(selected.ids()) <= set(slide.lesion_ids)


def test_scorer_none_uses_identity_projections(tmp_path):
    settings = load_settings(_config(tmp_path / "glat.conf", scorer="none"))
    proj = SlidePreparer(settings).projections(6)
    np.testing.assert_array_equal(proj.w_q, np.eye(6))
    np.testing.assert_array_equal(proj.w_k, np.eye(6))

    fm = SlidePreparer(settings.model_copy(update={"scorer": "fm"})).projections(6)
    assert fm.w_q.shape == (6, settings.irm_d_k)
    np.testing.assert_array_equal(fm.w_k, fm.w_q)
    untied = SlidePreparer(settings.model_copy(update={"scorer": "fm", "irm_tie_qk": False})).projections(6)
    assert not np.array_equal(untied.w_k, untied.w_q)


def test_select_command_with_scorer_none(workspace, tmp_path):
    _, _, data = workspace
    config = _config(tmp_path / "glat.conf", scorer="none")
    assert main(["select", "--config", str(config), "--input", str(data), "--output-dir", str(tmp_path / "out")]) == 0
    assert len(list((tmp_path / "out" / "traces").iterdir())) == 18


def test_learning_gate_at_default_settings():
    report, result = holdout_run(Settings())
    assert result.best_epoch <= len(result.history)
    assert report.accuracy >= 0.90
    assert report.kappa >= 0.85
