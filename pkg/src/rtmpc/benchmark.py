"""Reproducible benchmark plant, weights, bounds and heat-load scenarios.

The plant is a seeded stable 12-state LTI system with three actuators, one
heat-load disturbance channel and four outputs, the first two of which are
constrained (a level-like slow output and a temperature-like faster one).
Its time constants span 10 s to 600 s. It is generated from a continuous
system and discretized exactly, so the simulator can resample it to any
fine step.

Two profiles bundle everything an experiment needs: ``desk`` uses the full
100-sample horizon and hour-long scenarios, ``ci`` shrinks the horizon to
40 samples and the scenarios to 15 minutes so the whole benchmark suite
stays fast. Trend properties are expected to hold in both.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .mpc import (
    ControlParametrization,
    LtiModel,
    MpcBounds,
    MpcWeights,
    OperatingPoint,
)
from .simulate import ComputeBudget, ControllerConfig, PlantSim, Scenario

BENCHMARK_SEED = 7

N_STATES = 12
N_INPUTS = 3
N_OUTPUTS = 4
N_CONSTRAINED = 2


def _continuous_plant(seed):
    """Stable coupled continuous-time matrices with calibrated DC gains."""
    rng = np.random.default_rng(seed)
    taus = np.geomspace(10.0, 600.0, N_STATES)
    a = -np.diag(1.0 / taus)
    coupling = rng.normal(size=(N_STATES, N_STATES)) * (0.25 / taus[:, None])
    mask = rng.random((N_STATES, N_STATES)) < 0.3
    np.fill_diagonal(mask, False)
    a = a + np.where(mask, coupling, 0.0)
    # keep a hard stability margin
    shift = np.max(np.linalg.eigvals(a).real)
    if shift > -1.0 / 600.0:
        a -= (shift + 1.0 / 600.0) * np.eye(N_STATES)

    c = np.zeros((N_OUTPUTS, N_STATES))
    # slow, level-like output on the slowest states
    c[0, 8:] = rng.uniform(0.5, 1.0, 4)
    # mid-speed, temperature-like output
    c[1, 3:8] = rng.uniform(0.4, 1.0, 5) * np.array([1, -1, 1, 1, -1])
    # two extra observables
    c[2, :4] = rng.uniform(0.3, 0.8, 4)
    c[3, 5:9] = rng.uniform(0.3, 0.8, 4)
    c /= np.linalg.norm(c, axis=1, keepdims=True)

    b = rng.normal(size=(N_STATES, N_INPUTS)) / taus[:, None]
    f = np.zeros((N_STATES, 1))
    # the heat load hits the slow bath states and leaks into mid states
    f[8:, 0] = rng.uniform(0.6, 1.0, 4) / taus[8:]
    f[4:8, 0] = rng.uniform(0.1, 0.3, 4) / taus[4:8]

    # calibrate DC gains: unit-ish per actuator and a heat-load gain that
    # pushes the constrained outputs across their band at ~50 W
    dc_u = c[:N_CONSTRAINED] @ np.linalg.solve(-a, b)
    b = b / np.linalg.norm(dc_u, axis=0, keepdims=True)
    dc_w = c[:N_CONSTRAINED] @ np.linalg.solve(-a, f)
    f = f * (0.022 / np.abs(dc_w).max())
    return a, b, f, c


def make_benchmark_plant(seed=BENCHMARK_SEED, sample_period=5.0):
    """Seeded benchmark model and operating point, discretized exactly."""
    a_c, b_c, f_c, c = _continuous_plant(seed)
    n_in = N_INPUTS + 1
    block = np.zeros((N_STATES + n_in, N_STATES + n_in))
    block[:N_STATES, :N_STATES] = a_c
    block[:N_STATES, N_STATES:] = np.hstack([b_c, f_c])
    stepped = expm(block * sample_period)
    a = stepped[:N_STATES, :N_STATES]
    b = stepped[:N_STATES, N_STATES:N_STATES + N_INPUTS]
    f = stepped[:N_STATES, N_STATES + N_INPUTS:]
    d = np.zeros((N_OUTPUTS, N_INPUTS))
    g = np.zeros((N_OUTPUTS, 1))
    model = LtiModel(a, b, f, c, d, g, sample_period)
    assert model.spectral_radius() < 1.0
    op = OperatingPoint(
        x0=np.zeros(N_STATES),
        u0=np.array([40.0, 40.0, 75.0]),
        y0=np.array([60.0, 12.0, 30.0, 5.0]),
        w0=np.array([0.0]),
    )
    return model, op


def default_weights():
    model, _ = make_benchmark_plant()
    q = model.c[:N_CONSTRAINED].T @ model.c[:N_CONSTRAINED] + 1e-4 * np.eye(N_STATES)
    return MpcWeights(
        q_state=q,
        r_input=0.02 * np.eye(N_INPUTS),
        rho_violation=50.0 * np.eye(2 * N_CONSTRAINED),
    )


def default_bounds():
    return MpcBounds(
        u_min=np.array([-15.0, -15.0, -25.0]),
        u_max=np.array([15.0, 15.0, 25.0]),
        du_max=np.array([0.5, 2.0, 0.8]),
        yc_min=np.array([-1.0, -1.0]),
        yc_max=np.array([1.0, 1.0]),
        constrained_output_indices=(0, 1),
    )


def desk_parametrization():
    return ControlParametrization()


def ci_parametrization():
    return ControlParametrization(
        decision_instants=(1, 2, 4, 8, 16, 40),
        check_instants=(1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 40),
        horizon=40,
    )


def _steps(duration, pairs, label):
    times = np.array([t for t, _ in pairs], dtype=float)
    loads = np.array([w for _, w in pairs], dtype=float)
    return Scenario(duration=duration, times=times, loads=loads, label=label)


def scenario_segments(duration=3600.0):
    """Six heat-load segments with distinct rhythms, scaled to duration.
    Breakpoints snap to the 5 s model grid."""
    def seg(pairs, label):
        snapped = [(round(t * duration / 5.0) * 5.0, w) for t, w in pairs]
        dedup = [snapped[0]]
        for t, w in snapped[1:]:
            if t > dedup[-1][0]:
                dedup.append((t, w))
        return _steps(duration, dedup, label)

    return [
        seg([(0.0, 8.0), (0.5, 22.0), (0.75, 8.0)], "calm"),
        seg([(0.0, 0.0), (1 / 6, 68.0), (0.5, 10.0), (2 / 3, 40.0),
             (0.75, 10.0)], "pulse"),
        seg([(0.0, 0.0), (1 / 6, 15.0), (1 / 3, 30.0), (0.5, 45.0),
             (2 / 3, 60.0), (5 / 6, 20.0)], "staircase"),
        seg([(0.0, 5.0)] + [(k / 12, 55.0 if k % 2 else 5.0)
                            for k in range(1, 12)], "pulse-train"),
        seg([(0.0, 0.0), (0.25, 80.0)], "big-step"),
        seg([(0.0, 0.0)] + [(1 / 3 + k / 36, 5.0 * (k + 1))
                            for k in range(12)] + [(0.8, 0.0), (11 / 12, 75.0)],
            "mixed"),
    ]


def transient_scenario(duration=3600.0):
    """The sharp segment used for iteration-cap degradation studies."""
    return scenario_segments(duration)[1]


@dataclass(frozen=True)
class BenchProfile:
    name: str
    par: ControlParametrization
    duration: float


def bench_profile(name="ci"):
    if name == "desk":
        return BenchProfile("desk", desk_parametrization(), 3600.0)
    if name == "ci":
        return BenchProfile("ci", ci_parametrization(), 900.0)
    raise ValueError(f"unknown profile {name!r} (expected 'desk' or 'ci')")


def benchmark_controller(par=None, solver="gradient_flow", **overrides):
    """ControllerConfig wired to the benchmark plant with default weights
    and bounds; keyword overrides pass through."""
    model, op = make_benchmark_plant()
    return ControllerConfig(
        model=model,
        par=par if par is not None else desk_parametrization(),
        weights=default_weights(),
        bounds=default_bounds(),
        op=op,
        solver=solver,
        **overrides,
    )


def benchmark_plant_sim(fine_step=0.25, noise_scale=0.0, model=None):
    if model is None:
        model, _ = make_benchmark_plant()
    return PlantSim(model=model, fine_step=fine_step, noise_scale=noise_scale)


def default_budget():
    return ComputeBudget()
