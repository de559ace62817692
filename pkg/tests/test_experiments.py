import filecmp
import json
import os
import py_compile

import pytest

from lsrsgd.config import kappa10_spec
from lsrsgd.experiments import ExperimentSpec, emit_plots, run_experiment, separation_report


def _spec(out, **kw):
    base = dict(kind="custom", out_dir=str(out), instance=kappa10_spec(d=4), seeds=5, n=400,
                sweep=[1, 4], log_points=10)
    base.update(kw)
    return ExperimentSpec(**base)


class TestBundles:
    def test_deterministic(self, tmp_path):
        a = run_experiment(_spec(tmp_path / "a"))
        b = run_experiment(_spec(tmp_path / "b"))
        assert not a.partial and a.files == b.files
        for f in a.files + ["metadata.json"]:
            assert filecmp.cmp(a.path(f), b.path(f), shallow=False), f

    def test_metadata(self, tmp_path):
        bundle = run_experiment(_spec(tmp_path))
        with open(bundle.path("metadata.json")) as fh:
            meta = json.load(fh)
        assert meta["kind"] == "custom" and meta["seeds"] == 5
        assert set(meta["gammas"]) == {"1", "4"}
        assert meta["generator"]["block"] == 1024
        assert set(meta["files"]) <= set(os.listdir(tmp_path))

    def test_exact_only(self, tmp_path):
        bundle = run_experiment(_spec(tmp_path, monte_carlo=False))
        assert all(f.endswith("_exact.csv") for f in bundle.files)

    def test_partial_on_failure(self, tmp_path):
        # b = 1000 exceeds the sample budget of 400
        bundle = run_experiment(_spec(tmp_path, sweep=[1, 1000]))
        assert bundle.partial and bundle.metadata["errors"]
        assert "custom_b1_exact.csv" in bundle.files

    def test_separation_report(self):
        rep = separation_report(32)
        assert rep["ratio"] == pytest.approx(8.0)
        assert rep["exceeds_well"] and not rep["exceeds_mis"]


class TestPlots:
    def test_byte_identical(self, tmp_path):
        bundle = run_experiment(_spec(tmp_path, monte_carlo=False))
        (name,) = emit_plots(bundle.out_dir)
        first = open(bundle.path(name), "rb").read()
        emit_plots(bundle.out_dir)
        assert open(bundle.path(name), "rb").read() == first
        py_compile.compile(bundle.path(name), doraise=True)

    def test_empty_bundle(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="missing inputs"):
            emit_plots(tmp_path)
        (tmp_path / "metadata.json").write_text(json.dumps({"kind": "custom", "files": []}))
        with pytest.raises(FileNotFoundError, match="no CSV"):
            emit_plots(tmp_path)

    def test_missing_csv(self, tmp_path):
        bundle = run_experiment(_spec(tmp_path, monte_carlo=False))
        os.remove(bundle.path(bundle.files[0]))
        with pytest.raises(FileNotFoundError, match="missing inputs"):
            emit_plots(bundle.out_dir)
