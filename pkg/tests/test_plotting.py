import numpy as np

from chanceplan.plotting import plot_plan, plot_relaxation
from chanceplan.scenarios import build_obstacle_field, default_library, make_highway
from chanceplan.uncertainty import Gaussian
from chanceplan.vehicle import VehicleParams
from chanceplan.zonotope import Zonotope2, build_cover


def test_relaxation_snapshot(tmp_path):
    z = Zonotope2.box([0, 0], [3, 1.5], angle=0.3)
    plot_relaxation(tmp_path / "r.svg", z, build_cover(z, 12), [Gaussian([1, 1], np.eye(2))], "test")
    assert "<svg" in (tmp_path / "r.svg").read_text()


def test_plan_snapshot(tmp_path):
    params = VehicleParams()
    lib = default_library(params)
    s = make_highway(2)
    tube = lib.candidates(s.ego)[0]
    fld = build_obstacle_field(s, 0.0, tube.n_intervals)
    plot_plan(tmp_path / "p.svg", tube, s.ego, (tube.p_lo + tube.p_hi) / 2, fld, lanes=s.lanes)
    assert "<svg" in (tmp_path / "p.svg").read_text()
