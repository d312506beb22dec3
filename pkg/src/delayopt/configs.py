"""Built-in example configurations.

example1: scalar delay equation steered to the oscillation of the linear
          reference equation y' = -(pi/2) y(t-1).
example2: traveling-wave initial data steered to a space-time periodic
          pattern with six feedback channels.
example3: same data, two channels, phase-invariant (shifted) objective,
          multi-start search.
example4: Pyragas-type feedback with four channels and shifted objective.
"""

EXAMPLE1 = """\
[problem]
space_interval = 0, 1
horizon = 80
num_delays = 1
delay_bounds = 0, 80
weight_bounds = -1000, 1000
nu = 0
reaction_poly = 0, 0.25, -1.25, 1
history = "1"
target_dde_a = 1.5707963267948966
target_dde_d = 1
target_dde_history = 1
variant = direct_delay
objective = tracking

[discretization]
n_elements = 1
n_slabs = 4096
mode = ode

[optimizer]
max_iterations = 300
tolerance = 1e-6

[starts]
control = {"s": [1.0], "kappa": [-1.5707963267948966]}

[outputs]
directory = out/example1
"""

EXAMPLE2 = """\
[problem]
space_interval = -20, 20
horizon = 80
num_delays = 6
delay_bounds = 0, 80
weight_bounds = -1000, 1000
nu = 0
reaction_poly = 0, 0.25, -1.25, 1
history = "0.5*(1 - tanh((x - 0.25*sqrt2*t)/2))"
target = "3*sin(t - cos(pi/20*(x+20)))"
variant = direct_delay
objective = tracking

[discretization]
n_elements = 128
n_slabs = 128
mode = pde

[optimizer]
max_iterations = 400
tolerance = 1e-4

[starts]
control = {"s": [0.0, 0.9367, 6.7481, 28.3843, 32.2258, 39.8133], "kappa": [0.9846, -1.5039, 0.4542, -2.2799, 3.7013, -1.3844]}

[outputs]
directory = out/example2
"""

EXAMPLE3 = """\
[problem]
space_interval = -20, 20
horizon = 80
num_delays = 2
delay_bounds = 0, 80
weight_bounds = -1000, 1000
nu = 0
reaction_poly = 0, 0.25, -1.25, 1
history = "0.5*(1 - tanh((x - 0.25*sqrt2*t)/2))"
target = "3*sin(t - cos(pi/20*(x+20)))"
variant = direct_delay
objective = shifted

[discretization]
n_elements = 128
n_slabs = 128
mode = pde

[optimizer]
max_iterations = 300
tolerance = 1e-4

[starts]
count = 16
seed = 7
sampling = latin
delay_range = 0.2, 8
weight_range = -10, 1
shift_range = 0, 6.283185307179586

[outputs]
directory = out/example3
"""

EXAMPLE4 = """\
[problem]
space_interval = -20, 20
horizon = 80
num_delays = 4
delay_bounds = 0, 80
weight_bounds = -1000, 1000
nu = 0
reaction_poly = 0, 0.25, -1.25, 1
history = "0.5*(1 - tanh((x - 0.25*sqrt2*t)/2))"
target = "3*sin(t - cos(pi/20*(x+20)))"
variant = pyragas
objective = shifted

[discretization]
n_elements = 128
n_slabs = 128
mode = pde

[optimizer]
max_iterations = 400
tolerance = 5e-4

[starts]
control = {"s": [1.8308, 7.0918, 28.3354, 36.1215], "kappa": [-2.1661, 2.2636, -1.7753, 1.7550], "sigma": -2.5013}

[outputs]
directory = out/example4
"""

EXAMPLES = {
    "example1": EXAMPLE1,
    "example2": EXAMPLE2,
    "example3": EXAMPLE3,
    "example4": EXAMPLE4,
}
