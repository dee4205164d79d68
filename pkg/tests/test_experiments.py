"""Experiment harness: dataset specs, the run matrix, summaries, calibration."""

import json
import os

import numpy as np
import pytest

from pssim.experiments import (
    ExperimentConfig,
    apply_config_file,
    calibrate_iteration_time,
    make_dataset,
    run_matrix,
    speedup_vs_sync,
    write_outputs,
)
from pssim.barriers import asp
from pssim.linalg import make_synthetic, serialize_libsvm
from pssim.metrics import read_metrics
from pssim.optimizers import AlgorithmConfig


class TestMakeDataset:
    def test_synth_spec(self):
        ds = make_dataset("synth:64,8,3", partitions=4, data_seed=0)
        assert ds.n == 64 and ds.d == 8 and ds.P == 4

    def test_synth_spec_with_noise(self):
        clean = make_dataset("synth:16,4,3", 2, 0)
        noisy = make_dataset("synth:16,4,3,0.5", 2, 0)
        labels_a = sorted(r.label for r in clean.all_rows())
        labels_b = sorted(r.label for r in noisy.all_rows())
        assert labels_a != labels_b

    def test_bad_synth_spec(self):
        with pytest.raises(ValueError, match="synth spec"):
            make_dataset("synth:64,8", 4, 0)

    def test_libsvm_path(self, tmp_path):
        rows, _ = make_synthetic(12, 3, seed=5, noise=0.1)
        path = tmp_path / "data.libsvm"
        path.write_text(serialize_libsvm(rows))
        ds = make_dataset(str(path), partitions=3, data_seed=1)
        assert ds.n == 12 and ds.P == 3

    def test_missing_file(self):
        with pytest.raises(OSError):
            make_dataset("/nonexistent/file.libsvm", 2, 0)


class TestConfig:
    def base(self, **kw):
        args = dict(data="synth:32,4,1", algos=("sgd",), barriers=("bsp",),
                    delays=("none",), workers=2, partitions=4, iterations=10)
        args.update(kw)
        return ExperimentConfig(**args)

    def test_scalars_coerced_to_tuples(self):
        cfg = ExperimentConfig(data="x", algos="sgd", barriers="asp",
                               delays="none", seeds=5)
        assert cfg.algos == ("sgd",) and cfg.barriers == ("asp",)
        assert cfg.seeds == (5,)

    def test_validate_passes(self):
        assert self.base().validate() is not None

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError, match="unknown algorithm"):
            self.base(algos=("sgd", "adam")).validate()

    def test_bad_barrier(self):
        with pytest.raises(ValueError):
            self.base(barriers=("gossip",)).validate()

    def test_bad_delay(self):
        with pytest.raises(ValueError):
            self.base(delays=("cds:w=1",)).validate()

    def test_bad_clock(self):
        with pytest.raises(ValueError, match="clock"):
            self.base(clock="lamport").validate()

    def test_partitions_below_workers(self):
        with pytest.raises(ValueError, match="partitions"):
            self.base(workers=8, partitions=4).validate()

    def test_empty_seeds(self):
        with pytest.raises(ValueError, match="seed"):
            self.base(seeds=()).validate()


class TestConfigFile:
    def test_overrides_flags(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"iterations": 77, "step": 0.5}))
        cfg = ExperimentConfig(data="synth:32,4,1", iterations=10)
        cfg2 = apply_config_file(cfg, str(path))
        assert cfg2.iterations == 77 and cfg2.step == 0.5
        assert cfg2.data == "synth:32,4,1"  # untouched keys survive

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"iterationz": 77}))
        with pytest.raises(ValueError, match="unknown config keys"):
            apply_config_file(ExperimentConfig(data="x"), str(path))

    def test_non_object_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps([1, 2]))
        with pytest.raises(ValueError, match="JSON object"):
            apply_config_file(ExperimentConfig(data="x"), str(path))


def tiny_config(**kw):
    args = dict(data="synth:128,8,3,0.1", algos=("sgd", "asgd"),
                barriers=("asp",), delays=("none",), workers=2, partitions=4,
                rate=0.2, step=0.1, iterations=40, seeds=(1, 2),
                schedule="fixed", target_error=None)
    args.update(kw)
    return ExperimentConfig(**args)


class TestRunMatrix:
    def test_sync_runs_forced_to_bsp(self):
        cells, _ = run_matrix(tiny_config())
        by_algo = {c.algo: c for c in cells}
        assert by_algo["sgd"].barrier == "bsp"
        assert by_algo["asgd"].barrier == "asp"

    def test_forced_bsp_dedup(self):
        cells, _ = run_matrix(tiny_config(algos=("sgd",),
                                          barriers=("asp", "bsp", "throttled:k=2")))
        assert len(cells) == 1  # all three collapse to the same sync cell

    def test_repetitions_match_seeds(self):
        cells, _ = run_matrix(tiny_config(seeds=(1, 2, 3)))
        assert all(len(c.runs) == 3 for c in cells)

    def test_baseline_positive_for_noisy_data(self):
        _, baseline = run_matrix(tiny_config())
        assert baseline > 0.0

    def test_speedup_against_matching_sync(self):
        cfg = tiny_config(target_error=5.0, iterations=200)
        cells, _ = run_matrix(cfg)
        by_algo = {c.algo: c for c in cells}
        assert by_algo["sgd"].mean_time_to_target() is not None
        sp = speedup_vs_sync(by_algo["asgd"], cells)
        assert sp is not None and sp > 0
        assert speedup_vs_sync(by_algo["sgd"], cells) is None

    def test_unreached_target_gives_none(self):
        cells, _ = run_matrix(tiny_config(target_error=1e-30))
        assert all(c.mean_time_to_target() is None for c in cells)


class TestWriteOutputs:
    def test_files_and_shapes(self, tmp_path):
        cfg = tiny_config(out=str(tmp_path / "results"), target_error=5.0,
                          iterations=60)
        cells, _ = run_matrix(cfg)
        summary = write_outputs(cfg, cells)
        assert os.path.exists(summary)
        lines = open(summary).read().splitlines()
        assert lines[0].startswith("algo,barrier,delay,reps,time_to_target")
        assert len(lines) == 1 + len(cells)
        for cell in cells:
            per_cell = os.path.join(cfg.out, cell.label(), "metrics.csv")
            recs = read_metrics(per_cell)
            updates = [r for r in recs if r.kind == "update"]
            assert updates[0].server_version == 0
            assert updates[0].worker_id == -1
            assert max(r.server_version for r in updates) == cfg.iterations
        gp = open(os.path.join(cfg.out, "plots.gp")).read()
        for cell in cells:
            assert cell.label() in gp

    def test_label_sanitization(self, tmp_path):
        cfg = tiny_config(algos=("asgd",), barriers=("throttled:k=2",),
                          delays=("cds:w=1,i=0.5",), out=str(tmp_path / "r"))
        cells, _ = run_matrix(cfg)
        label = cells[0].label()
        assert ":" not in label and "=" not in label and "," not in label
        write_outputs(cfg, cells)
        assert os.path.isdir(os.path.join(cfg.out, label))


class TestCalibration:
    def ds(self):
        return make_dataset("synth:64,6,2,0.1", partitions=2, data_seed=0)

    def cfg(self, **kw):
        base = dict(workers=1, iterations=40, rate=0.2, step=0.05,
                    schedule="fixed")
        base.update(kw)
        return AlgorithmConfig(**base)

    def test_unit_cost(self):
        t = calibrate_iteration_time("asgd", self.ds(), asp(), self.cfg())
        assert t == 1.0

    def test_constant_cost(self):
        t = calibrate_iteration_time("asgd", self.ds(), asp(),
                                     self.cfg(task_cost=2.0))
        assert t == 2.0

    def test_alternating_cost_averages(self):
        t = calibrate_iteration_time("asgd", self.ds(), asp(),
                                     self.cfg(task_cost=[1.0, 3.0]))
        assert t == 2.0

    def test_delay_and_jitter_stripped(self):
        t = calibrate_iteration_time(
            "asgd", self.ds(), asp(),
            self.cfg(multipliers=[5.0], duration_jitter=0.4, jitter_seed=3))
        assert t == 1.0
