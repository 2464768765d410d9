import csv
import math
import warnings

import numpy as np
import pytest

from phifem_heat import circle_case
from phifem_heat.analysis import (
    CSV_COLUMNS,
    ErrorIntegrator,
    FieldSampler,
    build_report,
    error_l2h1,
    error_linfl2,
    fit_order,
    self_convergence,
    write_records_csv,
)
from phifem_heat.driver import run_single


def silent_run(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_single(*args, **kwargs)


class TestFitOrder:
    def test_exact_power_law(self):
        hs = np.array([0.4, 0.2, 0.1, 0.05])
        for p in (1.0, 2.0, 3.5):
            errs = 2.7 * hs**p
            assert fit_order(hs, errs) == pytest.approx(p, abs=1e-12)

    def test_skip_coarsest(self):
        hs = np.array([0.4, 0.2, 0.1, 0.05])
        errs = 3.0 * hs**2
        errs[0] *= 10.0  # polluted coarse point
        assert fit_order(hs, errs, skip_coarsest=True) == pytest.approx(2.0, abs=1e-12)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            fit_order([0.1], [1.0])


class TestErrorNorms:
    def test_homogeneity(self, circle, circle_run):
        # scaling the reference by c scales the relative error consistently:
        # u_ref -> c u_ref turns err = |u_h - u_ref|/|u_ref| into
        # |u_h - c u_ref|/(c |u_ref|); for u_h == 0 this is invariant
        zero_traj = circle_run.trajectory
        b = circle_run.builder

        def scaled(c):
            integ = ErrorIntegrator(b, lambda p, t: c * circle.exact(p, t),
                                    lambda p, t: c * circle.exact_gradient(p, t))
            import numpy as _np

            integ(0, 0.0, "field", _np.zeros_like(zero_traj.initial_field))
            for n, w in enumerate(zero_traj.steps, start=1):
                integ(n, n * zero_traj.grid.dt, "w", _np.zeros_like(w))
            return integ.l2h1(), integ.linfl2()

        e1 = scaled(1.0)
        e3 = scaled(3.0)
        assert e1[0] == pytest.approx(1.0, abs=1e-13)  # zero field: rel err 1
        assert e3[0] == pytest.approx(1.0, abs=1e-13)
        assert e1[1] == pytest.approx(1.0, abs=1e-13)
        assert e3[1] == pytest.approx(1.0, abs=1e-13)

    def test_degenerate_reference_is_nan(self, circle_run):
        b = circle_run.builder
        traj = circle_run.trajectory
        zero_ref = lambda p, t: np.zeros(p.shape[0])
        assert math.isnan(error_linfl2(traj, zero_ref, b))

    def test_replay_matches_streaming(self, circle, circle_run):
        # replaying the stored trajectory reproduces the streaming result
        l2h1 = error_l2h1(circle_run.trajectory, circle.exact, circle.exact_gradient,
                          circle_run.builder)
        linfl2 = error_linfl2(circle_run.trajectory, circle.exact, circle_run.builder)
        assert l2h1 == pytest.approx(circle_run.record.err_l2h1, rel=1e-12)
        assert linfl2 == pytest.approx(circle_run.record.err_linfl2, rel=1e-12)

    def test_errors_decrease_with_refinement(self, circle):
        r8 = silent_run(circle, 8, k=1, l=2, dt_rule="1")
        r16 = silent_run(circle, 16, k=1, l=2, dt_rule="1")
        assert r16.record.err_l2h1 < r8.record.err_l2h1
        assert r16.record.err_linfl2 < r8.record.err_linfl2


class TestFieldSampler:
    def test_valid_inside_active_mesh(self, circle_run, rng):
        sampler = FieldSampler(circle_run.mesh, circle_run.dofmap, circle_run.phi_h,
                               circle_run.trajectory)
        pts = rng.uniform(-0.5, 0.5, size=(100, 2))
        vals, grads, ok = sampler.sample(pts, circle_run.grid.n_steps)
        assert ok.all()
        assert np.isfinite(vals).all() and np.isfinite(grads).all()

    def test_invalid_outside_box(self, circle_run):
        sampler = FieldSampler(circle_run.mesh, circle_run.dofmap, circle_run.phi_h,
                               circle_run.trajectory)
        _, _, ok = sampler.sample(np.array([[1.6, 0.0], [0.0, -1.55]]), 1)
        assert not ok.any()

    def test_matches_quadrature_evaluation(self, circle_run):
        # sampling at the assembly quadrature points reproduces the values
        # used by the error integrator
        b = circle_run.builder
        sampler = FieldSampler(circle_run.mesh, circle_run.dofmap, circle_run.phi_h,
                               circle_run.trajectory)
        idx = np.arange(0, b.qp.shape[0], 37)
        vals, _, ok = sampler.sample(b.qp[idx], circle_run.grid.n_steps)
        ref = b.val_w @ circle_run.trajectory.final
        assert ok.all()
        assert np.abs(vals - ref[idx]).max() < 1e-10


class TestSelfConvergence:
    def test_two_level_decrease(self, circle):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = self_convergence(circle, [8, 16], 32, k=1, l=2, sigma=1.0,
                                      dt_rule="1", final_time=1.0, box=None,
                                      solver="direct")
        errs = [r.err_linfl2 for r in report.records]
        assert errs[0] > errs[1] > 0.0

    def test_rejects_ladder_finer_than_reference(self, circle):
        with pytest.raises(ValueError):
            self_convergence(circle, [8, 32], 32, k=1, l=2, sigma=1.0,
                             dt_rule="1", final_time=1.0, box=None, solver="direct")


class TestCsv:
    def test_schema_and_roundtrip(self, tmp_path, circle):
        r = silent_run(circle, 8, k=1, l=2, dt_rule="1")
        path = tmp_path / "out.csv"
        write_records_csv(path, [r.record])
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == CSV_COLUMNS
        assert len(rows) == 2
        data = dict(zip(rows[0], rows[1]))
        assert data["case"] == "circle"
        assert int(data["n"]) == 8
        assert float(data["err_l2h1"]) == pytest.approx(r.record.err_l2h1, rel=1e-15)

    def test_report_orders(self, circle):
        records = [silent_run(circle, n, k=1, l=2, dt_rule="1").record for n in (8, 16, 32)]
        report = build_report(records)
        assert 0.5 < report.orders["err_l2h1"] < 1.5
