import numpy as np
import pytest

from delayopt.discretization import SpaceMesh, TimeGrid
from delayopt.model import ControlVector, ProblemSpec, ReactionSpec, TargetSpec


@pytest.fixture(scope="session")
def desk_mesh():
    return SpaceMesh.uniform(0.0, 2.0, 8)


@pytest.fixture(scope="session")
def desk_grid():
    return TimeGrid.uniform(2.0, 16)


def desk_spec(variant="direct_delay", objective="tracking", nu=0.01):
    """Small delayed reaction-diffusion instance with space-varying history
    (so the projected initial value differs from the interpolated history)."""
    return ProblemSpec.build(
        space_interval=(0.0, 2.0), horizon=2.0, num_delays=2,
        delay_bounds=(0.0, 2.0), weight_bounds=(-5.0, 5.0), nu=nu,
        reaction=ReactionSpec.cubic_default(),
        history="0.5 + 0.3*cos(pi*x/2)*(1 + t/4)",
        target="0.2 + 0.1*sin(2*t)*cos(pi*x/2)",
        variant=variant, objective=objective)


def desk_control(objective="tracking"):
    shift = 0.15 if objective == "shifted" else None
    return ControlVector.of([0.35, 0.9], [0.8, -0.6], shift)


def example1_spec():
    return ProblemSpec.build(
        space_interval=(0.0, 1.0), horizon=80.0, num_delays=1,
        delay_bounds=(0.0, 80.0), weight_bounds=(-1000.0, 1000.0), nu=0.0,
        reaction=ReactionSpec.cubic_default(), history="1",
        target=TargetSpec.dde_reference(a=np.pi / 2, d=1.0, history=1.0))


def pde_example_spec(num_delays, variant="direct_delay", objective="tracking"):
    """Traveling-wave data shared by the space-time pattern examples."""
    return ProblemSpec.build(
        space_interval=(-20.0, 20.0), horizon=80.0, num_delays=num_delays,
        delay_bounds=(0.0, 80.0), weight_bounds=(-1000.0, 1000.0), nu=0.0,
        reaction=ReactionSpec.cubic_default(),
        history="0.5*(1 - tanh((x - 0.25*sqrt2*t)/2))",
        target="3*sin(t - cos(pi/20*(x+20)))",
        variant=variant, objective=objective)


TABLE1_CONTROL = ControlVector.of(
    [0.0, 0.9367, 6.7481, 28.3843, 32.2258, 39.8133],
    [0.9846, -1.5039, 0.4542, -2.2799, 3.7013, -1.3844])

TABLE2_CONTROL = ControlVector.of([2.2785, 4.8126], [-8.2564, -5.2898], 2.3775)

TABLE3_CONTROL = ControlVector.of(
    [1.8308, 7.0918, 28.3354, 36.1215],
    [-2.1661, 2.2636, -1.7753, 1.7550], -2.5013)
