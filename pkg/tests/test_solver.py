import math
import warnings

import numpy as np
import pytest

from phifem_heat import BoxDomain, TestCase, circle_case
from phifem_heat.driver import make_time_grid, mesh_size, parse_dt_rule, run_single, steps_for_rule
from phifem_heat.solver import TimeGrid, TimeStepResolutionWarning


def silent_run(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_single(*args, **kwargs)


def zero_source(p, t):
    return np.zeros(p.shape[0])


def zero_initial(p):
    return np.zeros(p.shape[0])


class TestTimeGrid:
    def test_lands_on_final_time(self):
        grid = TimeGrid(final_time=1.0, n_steps=7)
        times = grid.times()
        assert times[0] == 0.0
        assert times[-1] == 1.0
        assert len(times) == 8

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            TimeGrid(final_time=1.0, n_steps=0)
        with pytest.raises(ValueError):
            TimeGrid(final_time=-1.0, n_steps=4)

    def test_dt_rules(self):
        assert parse_dt_rule("1") == 1
        assert parse_dt_rule("3/2") == 1.5
        with pytest.raises(ValueError):
            parse_dt_rule("abc")
        with pytest.raises(ValueError):
            parse_dt_rule("-1")

    def test_steps_for_rule(self):
        h = 0.5303300858899106
        assert steps_for_rule(h, "1", 1.0) == 2
        assert steps_for_rule(h, "2", 1.0) == 4

    def test_mesh_size_matches_built_mesh(self):
        case = circle_case()
        from phifem_heat.mesh import build_background_mesh

        for n in (8, 13):
            mesh = build_background_mesh(case.box, n)
            assert mesh_size(case, n) == pytest.approx(mesh.h)


class TestAdvance:
    def test_zero_data_exactness(self, circle):
        case = TestCase(name="zero", dim=2, levelset=circle.levelset,
                        source=zero_source, initial=zero_initial, box=circle.box)
        r = silent_run(case, 8, k=1, l=2, dt_rule="1", store_trajectory=True,
                       compute_errors=False)
        for step in r.trajectory.steps:
            assert np.abs(step).max() == 0.0

    def test_linearity_in_data(self, circle):
        doubled = TestCase(name="double", dim=2, levelset=circle.levelset,
                           source=lambda p, t: 2.0 * circle.source(p, t),
                           initial=circle.initial, box=circle.box)
        r1 = silent_run(circle, 8, k=1, l=2, dt_rule="1", compute_errors=False)
        r2 = silent_run(doubled, 8, k=1, l=2, dt_rule="1", compute_errors=False)
        scale = np.abs(r1.trajectory.final).max()
        assert np.abs(r2.trajectory.final - 2.0 * r1.trajectory.final).max() < 1e-11 * scale

    def test_time_refinement_is_first_order(self, circle):
        # Richardson: successive solution differences halve with dt
        finals = [silent_run(circle, 8, k=1, l=2, n_steps=N,
                             compute_errors=False).trajectory.final
                  for N in (2, 4, 8)]
        d1 = np.linalg.norm(finals[1] - finals[0])
        d2 = np.linalg.norm(finals[2] - finals[1])
        assert 1.6 < d1 / d2 < 2.4

    def test_steady_decay_without_source(self, circle):
        case = TestCase(name="decay", dim=2, levelset=circle.levelset,
                        source=zero_source,
                        initial=lambda p: np.exp(-4.0 * (p**2).sum(axis=1)),
                        box=circle.box)
        r = silent_run(case, 16, k=1, l=2, n_steps=20, compute_errors=False,
                       store_trajectory=True)
        b = r.builder
        norms = [math.sqrt(np.sum(b.wq * (b.val_plain @ r.trajectory.initial_field) ** 2))]
        for step in r.trajectory.steps:
            norms.append(math.sqrt(np.sum(b.wq * (b.val_w @ step) ** 2)))
        assert all(n1 > n2 for n1, n2 in zip(norms, norms[1:]))

    def test_residuals_are_small(self, circle_run):
        assert circle_run.trajectory.residuals.max() <= 1e-10

    def test_direct_and_iterative_agree(self, circle):
        rd = silent_run(circle, 8, k=1, l=2, dt_rule="1", compute_errors=False)
        ri = silent_run(circle, 8, k=1, l=2, dt_rule="1", solver="iterative",
                        compute_errors=False)
        scale = np.abs(rd.trajectory.final).max()
        assert np.abs(rd.trajectory.final - ri.trajectory.final).max() < 1e-9 * scale

    def test_small_timestep_warns(self, circle):
        with pytest.warns(TimeStepResolutionWarning):
            run_single(circle, 8, k=1, l=2, n_steps=200, compute_errors=False)

    def test_streaming_matches_stored(self, circle):
        stored = silent_run(circle, 8, k=1, l=2, dt_rule="1", store_trajectory=True,
                            compute_errors=False)
        streamed = silent_run(circle, 8, k=1, l=2, dt_rule="1", store_trajectory=False,
                              compute_errors=False)
        assert streamed.trajectory.steps is None
        assert np.array_equal(stored.trajectory.final, streamed.trajectory.final)

    def test_unknown_method_rejected(self, circle):
        with pytest.raises(ValueError):
            silent_run(circle, 8, k=1, l=2, solver="magic", compute_errors=False)
