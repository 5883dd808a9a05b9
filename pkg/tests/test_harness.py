import csv
import json
import math
import os

import numpy as np
import pytest

from proxmf.energy import MeanFieldState, free_energy
from proxmf.harness import (
    SUMMARY_COLUMNS,
    TRACE_COLUMNS,
    Budget,
    ExperimentSpec,
    ScheduleSpec,
    SpecError,
    accuracy,
    decode_map,
    load_spec,
    run_experiment,
    sensitivity_sweep,
)
from proxmf.model import GroundTruth, dumps_field, generate_synthetic, potts_field
from proxmf.oracle import enumerate_field
from proxmf.schedules import ALGORITHMS, ScheduleConfig, run_schedule

WALL = ("wall_ns", "wall_time")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def strip_wall(rows):
    return [{k: v for k, v in r.items() if k not in WALL} for r in rows]


def all_schedules(d="auto"):
    out = []
    for a in ALGORITHMS:
        params = {"d": d} if a.startswith("ours_") else {}
        out.append(ScheduleSpec(a, params))
    return out


@pytest.fixture
def zero_field_file(tmp_path):
    f = potts_field("grid", 2, 2, 2, 0.0)
    p = tmp_path / "zero.json"
    p.write_text(dumps_field(f))
    return str(p)


class TestDecode:
    def test_examples(self):
        mask = np.ones((3, 2), dtype=bool)
        s = MeanFieldState.from_mean(np.array([[0.75, 0.25], [0.5, 0.5], [0.1, 0.9]]), mask)
        np.testing.assert_array_equal(decode_map(s), [0, 0, 1])

    def test_padded_labels_never_chosen(self):
        mask = np.array([[True, True, False]])
        s = MeanFieldState(np.array([[5.0, 6.0, -100.0]]), mask)
        assert decode_map(s)[0] == 0

    def test_product_form_matches_oracle(self):
        f, _ = generate_synthetic("grid", 2, 3, 3, 2.0, 0.0, "mixed", seed=1)
        run = run_schedule(f, ScheduleConfig("sweep", max_iterations=2))
        np.testing.assert_array_equal(decode_map(run.state), enumerate_field(f).map_assignment)


class TestAccuracy:
    def test_identical(self):
        t = GroundTruth(np.array([0, 1, 2]), np.ones(3, dtype=bool))
        assert accuracy([0, 1, 2], t) == 1.0

    def test_all_wrong(self):
        t = GroundTruth(np.array([0, 1, 2]), np.ones(3, dtype=bool))
        assert accuracy([1, 2, 0], t) == 0.0

    def test_masked_half(self):
        t = GroundTruth(np.array([0, 0, 0, 0]), np.array([True, True, False, False]))
        assert accuracy([0, 1, 1, 1], t) == 0.5

    def test_empty_mask(self, caplog):
        t = GroundTruth(np.array([0, 0]), np.zeros(2, dtype=bool))
        assert accuracy([1, 1], t) == 1.0
        assert "empty" in caplog.text

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            accuracy([0], GroundTruth(np.array([0, 0]), np.ones(2, dtype=bool)))


class TestSpec:
    def test_from_dict(self, tmp_path):
        data = {"instances": [{"kind": "grid", "rows": 2, "cols": 2}],
                "schedules": [{"algorithm": "ours_fixed", "d": "auto"}, {"algorithm": "adhoc",
                                                                         "eta_adhoc": 0.3}],
                "budgets": [{"iterations": 5}, {"ms": 10}], "seed": 3}
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(data))
        spec = load_spec(str(p))
        assert spec.seed == 3 and len(spec.budgets) == 2
        assert spec.schedules[1].params == {"eta_adhoc": 0.3}

    @pytest.mark.parametrize("data", [
        {"instances": [], "schedules": [{"algorithm": "sweep"}], "budgets": [{"iterations": 1}]},
        {"instances": ["x"], "schedules": [], "budgets": [{"iterations": 1}]},
        {"instances": ["x"], "schedules": [{"algorithm": "sweep"}], "budgets": []},
        {"instances": ["x"], "schedules": [{"algorithm": "bogus"}], "budgets": [{"iterations": 1}]},
        {"instances": ["x"], "schedules": [{"algorithm": "sweep"}], "budgets": [{}]},
        {"instances": ["x"], "schedules": [{"algorithm": "sweep"}], "budgets": [{"iterations": 1}],
         "eta_grid": [0.0]},
        {"schedules": [{"algorithm": "sweep"}], "budgets": [{"iterations": 1}]},
    ])
    def test_invalid(self, data):
        with pytest.raises(SpecError):
            ExperimentSpec.from_dict(data)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{not json")
        with pytest.raises(SpecError):
            load_spec(str(p))


class TestRunExperiment:
    def test_zero_potential_rows(self, zero_field_file, tmp_path):
        spec = ExperimentSpec([zero_field_file], all_schedules(), [Budget(iterations=10)],
                              output_dir=str(tmp_path / "out"))
        res = run_experiment(spec)
        assert res.failures == 0 and len(res.rows) == len(ALGORITHMS)
        rows = read_csv(res.summary_path)
        assert list(rows[0].keys()) == SUMMARY_COLUMNS
        for r in rows:
            np.testing.assert_allclose(float(r["F"]), -4 * math.log(2), rtol=1e-14)
            assert abs(float(r["kl"])) < 1e-12
            assert r["error"] == ""

    def test_repulsive_grid(self, tmp_path):
        inst = {"kind": "grid", "rows": 4, "cols": 4, "unary_scale": 0.1, "pair_scale": 4.0,
                "coupling": "repulsive", "seed": 0}
        spec = ExperimentSpec([inst], [ScheduleSpec("full_parallel"),
                                       ScheduleSpec("ours_fixed", {"d": "auto"})],
                              [Budget(iterations=200)], output_dir=str(tmp_path))
        fp, fx = run_experiment(spec).rows
        assert float(fx["F"]) <= float(fp["F"])
        assert fx["schedule"].startswith("ours_fixed(d=")

    def test_traces_and_reevaluation(self, tmp_path):
        inst = {"kind": "chain", "rows": 1, "cols": 6, "labels": 3, "id": "c6"}
        spec = ExperimentSpec([inst], [ScheduleSpec("ours_adam", {"d": "auto"})],
                              [Budget(iterations=15)], output_dir=str(tmp_path), gnuplot=True)
        run_experiment(spec)
        traces = sorted(os.listdir(tmp_path / "traces"))
        assert "traces.gp" in traces
        csvs = [t for t in traces if t.endswith(".csv")]
        assert len(csvs) == 1 and csvs[0].startswith("c6__ours_adam")
        rows = read_csv(tmp_path / "traces" / csvs[0])
        assert list(rows[0].keys()) == TRACE_COLUMNS
        assert [int(r["iter"]) for r in rows] == list(range(16))
        for r in rows:
            np.testing.assert_allclose(float(r["F"]), float(r["E"]) + float(r["negH"]),
                                       rtol=1e-12, atol=1e-12)

    def test_final_f_matches_state(self):
        f, _ = generate_synthetic("grid", 3, 3, 2, 1.0, 2.0, "mixed", seed=8)
        for a in ALGORITHMS:
            run = run_schedule(f, ScheduleConfig(a, d=2.0, max_iterations=20))
            assert abs(run.trace[-1].objective.free_energy
                       - free_energy(f, run.state).free_energy) < 1e-10

    def test_deterministic(self, tmp_path):
        insts = [{"kind": "grid", "rows": 3, "cols": 3}, {"kind": "complete", "rows": 1,
                                                         "cols": 5, "labels": 3}]
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            spec = ExperimentSpec(insts, all_schedules(), [Budget(iterations=12)],
                                  output_dir=str(out), seed=5)
            run_experiment(spec)
            outs.append(out)
        a, b = (read_csv(o / "summary.csv") for o in outs)
        assert strip_wall(a) == strip_wall(b)
        names = sorted(os.listdir(outs[0] / "traces"))
        assert names == sorted(os.listdir(outs[1] / "traces"))
        for n in names:
            assert strip_wall(read_csv(outs[0] / "traces" / n)) == \
                strip_wall(read_csv(outs[1] / "traces" / n))

    def test_failures_recorded(self, tmp_path):
        insts = [{"kind": "chain", "rows": 1, "cols": 4, "labels": 3, "id": "ternary"}]
        spec = ExperimentSpec(insts, [ScheduleSpec("ours_adaptive", {"d": 1.0}),
                                      ScheduleSpec("sweep")],
                              [Budget(iterations=5)], output_dir=str(tmp_path))
        res = run_experiment(spec)
        assert res.failures == 1
        bad, good = read_csv(res.summary_path)
        assert "binary" in bad["error"] and bad["F"] == ""
        assert good["error"] == "" and good["F"] != ""

    def test_time_budget(self, tmp_path):
        spec = ExperimentSpec([{"kind": "grid", "rows": 3, "cols": 3}], [ScheduleSpec("sweep")],
                              [Budget(ms=5.0)], output_dir=str(tmp_path))
        row = run_experiment(spec).rows[0]
        assert row["stop_reason"] == "time_budget" and row["budget"] == "5ms"


class TestSweep:
    def _spec(self, tmp_path, inst, grid, iters=300):
        return ExperimentSpec([inst], [ScheduleSpec("adhoc"), ScheduleSpec("ours_fixed")],
                              [Budget(iterations=iters)], eta_grid=grid,
                              output_dir=str(tmp_path))

    def test_eta_one_reproduces_plain(self, tmp_path):
        inst = {"kind": "grid", "rows": 3, "cols": 3, "pair_scale": 2.0}
        res = sensitivity_sweep(self._spec(tmp_path, inst, [1.0], iters=30))
        adhoc, fixed, marker = res.rows
        assert marker["marker"] == 1
        plain = run_experiment(ExperimentSpec([inst], [ScheduleSpec("full_parallel")],
                                              [Budget(iterations=30)],
                                              output_dir=str(tmp_path / "plain"))).rows[0]
        np.testing.assert_allclose(float(adhoc["F"]), float(plain["F"]), rtol=1e-12)
        assert fixed["F"] == plain["F"]

    def test_attractive_insensitive(self, tmp_path):
        inst = {"kind": "grid", "rows": 4, "cols": 4, "pair_scale": 0.5,
                "coupling": "attractive"}
        grid = [2.0**-k for k in range(5)]
        rows = sensitivity_sweep(self._spec(tmp_path, inst, grid, iters=2000)).rows
        for sched in ("adhoc", "ours_fixed"):
            F = [float(r["F"]) for r in rows if r["schedule"] == sched and r["marker"] == 0]
            assert np.ptp(F) < 1e-6

    def test_repulsive_spread_direction(self, tmp_path):
        inst = {"kind": "grid", "rows": 8, "cols": 8, "unary_scale": 2.0, "pair_scale": 2.0,
                "coupling": "repulsive", "seed": 0}
        grid = [2.0**-k for k in range(9)]
        rows = sensitivity_sweep(self._spec(tmp_path, inst, grid, iters=400)).rows
        spread = {s: np.ptp([float(r["F"]) for r in rows
                             if r["schedule"] == s and r["marker"] == 0])
                  for s in ("adhoc", "ours_fixed")}
        assert spread["ours_fixed"] < spread["adhoc"]

    def test_requires_grid(self, tmp_path):
        spec = self._spec(tmp_path, {"kind": "grid", "rows": 2, "cols": 2}, None)
        with pytest.raises(SpecError):
            sensitivity_sweep(spec)
