"""Leapfrog integration of 2-D zero-rest-length spring networks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnri.errors import SimulationFault, ValidationError


@dataclass
class SystemSpec:
    """Physical description of one system (the analogue of one patient)."""

    adjacency: np.ndarray
    stiffness_scale: float
    masses: np.ndarray
    regime_label: int = 0

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.stiffness_scale = float(self.stiffness_scale)
        self.regime_label = int(self.regime_label)
        validate_adjacency(self.adjacency)
        if self.masses.shape != (self.n_bodies,):
            raise ValidationError(f"masses shape {self.masses.shape} != ({self.n_bodies},)")
        if not self.stiffness_scale > 0:
            raise ValidationError(f"stiffness_scale must be positive, got {self.stiffness_scale}")
        if not np.all(self.masses > 0):
            raise ValidationError("masses must be positive")

    @property
    def n_bodies(self):
        return self.adjacency.shape[0]


def validate_adjacency(adj):
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {adj.shape}")
    if not np.all((adj == 0) | (adj == 1)):
        raise ValidationError("adjacency must be binary")
    if np.any(np.diag(adj) != 0):
        raise ValidationError("adjacency must have a zero diagonal")
    if not np.array_equal(adj, adj.T):
        raise ValidationError("adjacency must be symmetric")


def _force_matrix(spec, k):
    lap = np.diag(spec.adjacency.sum(axis=1)) - spec.adjacency
    return -(k * spec.stiffness_scale) * lap / spec.masses[:, None]


def total_energy(frame, spec, spring_constant=1.0):
    """Kinetic plus spring potential energy of a (M, 4) state."""
    pos, vel = frame[:, :2], frame[:, 2:]
    kinetic = 0.5 * np.sum(spec.masses[:, None] * vel ** 2)
    diff = pos[:, None, :] - pos[None, :, :]
    potential = 0.25 * spring_constant * spec.stiffness_scale * np.sum(
        spec.adjacency[..., None] * diff ** 2)
    return kinetic + potential


def random_initial_state(n_bodies, rng, pos_std=0.5, vel_std=0.5):
    return np.concatenate([rng.normal(0.0, pos_std, (n_bodies, 2)),
                           rng.normal(0.0, vel_std, (n_bodies, 2))], axis=1)


def simulate_spring_system(spec, n_frames, dt, initial_state=None, rng=None,
                           sample_every=1, spring_constant=1.0):
    """Return a (n_frames, M, 4) trajectory of [x, y, vx, vy] per body.

    Frame 0 is the initial state; consecutive frames are ``sample_every``
    velocity-Verlet steps of size ``dt`` apart.
    """
    if n_frames < 2:
        raise ValidationError(f"need at least 2 frames, got {n_frames}")
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if initial_state is None:
        if rng is None:
            raise ValidationError("either initial_state or rng is required")
        initial_state = random_initial_state(spec.n_bodies, rng)
    state = np.asarray(initial_state, dtype=np.float64)
    if state.shape != (spec.n_bodies, 4):
        raise ValidationError(f"initial state shape {state.shape} != ({spec.n_bodies}, 4)")
    if not np.all(np.isfinite(state)):
        raise SimulationFault("non-finite initial state", step=0)

    pos, vel = state[:, :2].copy(), state[:, 2:].copy()
    forces = _force_matrix(spec, spring_constant)
    half = 0.5 * dt
    out = np.empty((n_frames, spec.n_bodies, 4))
    out[0] = state
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        acc = forces @ pos
        for frame in range(1, n_frames):
            for _ in range(sample_every):
                vel += half * acc
                pos += dt * vel
                acc = forces @ pos
                vel += half * acc
                step += 1
            if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
                raise SimulationFault("non-finite state during integration", step=step)
            out[frame, :, :2] = pos
            out[frame, :, 2:] = vel
    return out
