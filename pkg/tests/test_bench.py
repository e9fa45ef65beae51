import csv
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from lcmlora.bench import BenchReport, BenchRow, ModelBundle, bench_sampler, emit_report, load_report, run_bench
from lcmlora.codec import fit_codec
from lcmlora.data import ring_mixture
from lcmlora.errors import ConfigError
from lcmlora.model import Arch, Denoiser
from lcmlora.schedule import make_schedule
from lcmlora.solvers import SolverSpec

SCH = make_schedule()


@pytest.fixture(scope="module")
def bundle():
    m = Denoiser.create(Arch(hidden=32, depth=2), seed=0)
    return ModelBundle(SCH, teacher=m, student=m, codec=fit_codec("identity", np.zeros((3, 2))))


@pytest.fixture(scope="module")
def ref():
    return ring_mixture(512, rng=0)


def test_fewer_steps_is_faster(bundle, ref):
    slow = bench_sampler(bundle, SolverSpec("ddim", 32, 8.0), ref, 1024, 0)
    fast = bench_sampler(bundle, SolverSpec("ddim", 16, 8.0), ref, 1024, 0)
    assert fast.wall_time < slow.wall_time


def test_same_seed_same_scores(bundle, ref):
    a = bench_sampler(bundle, SolverSpec("dpm2", 4, 8.0), ref, 256, 3)
    b = bench_sampler(bundle, SolverSpec("dpm2", 4, 8.0), ref, 256, 3)
    assert (a.fd, a.sw) == (b.fd, b.sw)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_consistency_timing_ratio(bundle, ref):
    ddim = bench_sampler(bundle, SolverSpec("ddim", 32, 8.0), ref, 2048, 0)
    cons = bench_sampler(bundle, SolverSpec("consistency", 4, 8.0), ref, 2048, 0)
    assert ddim.wall_time / cons.wall_time >= 4 * 0.8


def test_missing_model_is_config_error(ref):
    with pytest.raises(ConfigError, match="student"):
        bench_sampler(ModelBundle(SCH, teacher=Denoiser.create(Arch(), 0)), SolverSpec("consistency", 4), ref, 8, 0)
    with pytest.raises(ConfigError, match="teacher"):
        bench_sampler(ModelBundle(SCH, student=Denoiser.create(Arch(), 0)), SolverSpec("ddim", 4), ref, 8, 0)


def test_report_rows_sorted_and_validated():
    rows = [BenchRow("dpm1", 16, 1.0, 0.1, 0.1), BenchRow("consistency", 4, 0.1, 0.2, 0.1),
            BenchRow("ddim", 32, 2.0, 0.1, 0.1), BenchRow("consistency", 2, 0.1, 0.2, 0.1)]
    rep = BenchReport(rows, {})
    assert [(r.solver, r.steps) for r in rep.rows] == [("consistency", 2), ("consistency", 4), ("ddim", 32),
                                                       ("dpm1", 16)]
    with pytest.raises(ValueError):
        BenchReport([BenchRow("ddim", 4, 0.0, 0.1, 0.1)], {})
    with pytest.raises(ValueError):
        BenchReport([BenchRow("ddim", 4, 1.0, -0.1, 0.1)], {})


def test_emit_report_files(bundle, ref, tmp_path):
    grid = [("ddim", 8), ("dpm1", 4), ("dpm2", 2), ("consistency", 2)]
    rep = run_bench(bundle, grid, ref, 128, 8.0, 0, {"kind": "mixture2d"})
    assert rep.metadata["omega"] == 8.0 and rep.metadata["n_samples"] == 128
    written = emit_report(rep, tmp_path, reference=ref[0])
    with open(tmp_path / "report.csv") as fh:
        lines = list(csv.reader(fh))
    assert lines[0] == ["solver", "steps", "time_s", "fd", "sw"] and len(lines) == len(grid) + 1
    doc = load_report(tmp_path / "report.json")
    assert doc == json.loads(json.dumps({"reports": [rep.to_dict()]}))
    assert len(written) == len(grid)
    for path in written:
        assert ET.parse(path).getroot().tag.endswith("svg")
    assert sorted(os.listdir(tmp_path)) == sorted(["report.csv", "report.json"] + [os.path.basename(p) for p in written])


def test_emit_report_requires_rows(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)
