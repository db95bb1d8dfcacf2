"""Damped / undamped Duffing oscillators and Neural-ODE evaluation."""

import numpy as np

from ..autodiff import NonFiniteError
from ..ode import DuffingField, NetworkField, StepSizeUnderflow, StateTrajectory, dopri5

SYSTEMS = {
    ("linear", "source"): DuffingField(1.0, 0.0, 0.0),
    ("linear", "target"): DuffingField(1.0, 0.0, 0.3),
    ("nonlinear", "source"): DuffingField(-1.0, 1.0, 0.0),
    ("nonlinear", "target"): DuffingField(-1.0, 1.0, 0.3),
}


def duffing_system(kind, role):
    return SYSTEMS[(kind, role)]


def annulus_sample(n, rng, r_min=0.2, r_max=1.0):
    """Radius uniform in ``[r_min, r_max]``, angle uniform in ``[0, 2*pi)``."""
    r = rng.uniform(r_min, r_max, n)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


class DuffingData:
    """``n_traj`` trajectories sampled every ``dt``; ``observed`` carries noise."""

    def __init__(self, times, clean, observed):
        self.times = times
        self.clean = clean        # (n_traj, T, 2)
        self.observed = observed  # (n_traj, T, 2)

    @property
    def trajectories(self):
        return [StateTrajectory(self.times, s) for s in self.observed]

    def transition_pairs(self, n_pairs=None):
        """Consecutive-state pairs ordered earliest-first across trajectories.

        Pair ``k`` of trajectory ``j`` has rank ``k * n_traj + j``, so the first
        ``n_traj`` pairs are the opening transition of every trajectory.
        """
        obs = self.observed
        n_traj, n_t, _ = obs.shape
        y0 = obs[:, :-1].transpose(1, 0, 2).reshape(-1, 2)
        y1 = obs[:, 1:].transpose(1, 0, 2).reshape(-1, 2)
        dt = np.tile(np.diff(self.times), (n_traj, 1)).T.reshape(-1)
        if n_pairs is not None:
            if n_pairs > len(y0):
                raise ValueError(f"only {len(y0)} pairs available")
            y0, y1, dt = y0[:n_pairs], y1[:n_pairs], dt[:n_pairs]
        return y0, y1, dt


def duffing_generate(system, n_traj, rng, dt=0.1, horizon=10.0, noise_amp=0.0,
                     rtol=1e-10, atol=1e-12):
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    y0 = annulus_sample(n_traj, rng)
    times = np.round(np.arange(0.0, horizon + 0.5 * dt, dt), 12)
    traj = dopri5(system, y0, (0.0, times[-1]), times, rtol=rtol, atol=atol)
    clean = traj.states.transpose(1, 0, 2).copy()
    observed = clean.copy()
    if noise_amp > 0:
        observed += noise_amp * rng.uniform(-1.0, 1.0, size=clean.shape)
    return DuffingData(times, clean, observed)


def rollout(field, y0, times, rtol=1e-7, atol=1e-9):
    return dopri5(field, y0, (times[0], times[-1]), times, rtol=rtol, atol=atol).states


def duffing_rmse(field, truth, window=(1.0, 10.0), rtol=1e-7, atol=1e-9):
    """RMSE of rollouts from each truth initial state over ``t`` in ``window``.

    ``field`` is a vector field or a network model.  Returns ``inf`` if the
    rollout blows up.
    """
    if not callable(field):
        field = NetworkField(field)
    times = truth.times
    try:
        pred = rollout(field, truth.clean[:, 0], times, rtol, atol)
    except (NonFiniteError, StepSizeUnderflow, FloatingPointError):
        return float("inf")
    sel = (times >= window[0] - 1e-9) & (times <= window[1] + 1e-9)
    diff = pred[sel] - truth.clean.transpose(1, 0, 2)[sel]
    val = float(np.sqrt(np.mean(diff ** 2)))
    return val if np.isfinite(val) else float("inf")


def energy_drift(field, energy, y0, horizon=10.0, n_out=101, rtol=1e-9, atol=1e-11):
    """Max ``|H(t) - H(0)|`` along rollouts of ``field`` from states ``y0``."""
    if not callable(field):
        field = NetworkField(field)
    times = np.linspace(0.0, horizon, n_out)
    states = rollout(field, np.atleast_2d(y0), times, rtol, atol)
    h = energy(states)
    return float(np.max(np.abs(h - h[0])))
