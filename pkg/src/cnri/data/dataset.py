"""Conditioned spring corpora: condition vectors and dataset generation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from cnri.data.simulator import SystemSpec, random_initial_state, simulate_spring_system
from cnri.errors import ValidationError

N_REGIMES = 2


@dataclass
class SystemSample:
    trajectory: np.ndarray
    condition: np.ndarray
    group_id: int
    regime_label: int
    adjacency: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, SystemSample):
            return NotImplemented
        same_adj = (self.adjacency is None and other.adjacency is None) or (
            self.adjacency is not None and other.adjacency is not None
            and np.array_equal(self.adjacency, other.adjacency))
        return (np.array_equal(self.trajectory, other.trajectory)
                and np.array_equal(self.condition, other.condition)
                and self.group_id == other.group_id
                and self.regime_label == other.regime_label
                and same_adj)


@dataclass
class DatasetConfig:
    n_bodies: int = 5
    n_frames: int = 100
    dt: float = 1e-3
    sample_every: int = 50
    spring_constant: float = 1.0
    stiffness_range: tuple = (0.5, 2.0)
    mass_range: tuple = (0.5, 1.5)
    edge_prob: float = 0.5
    graph_mode: str = "shared"
    pos_std: float = 0.5
    vel_std: float = 0.5
    include_adjacency: bool = True

    def to_dict(self):
        d = asdict(self)
        d["stiffness_range"] = list(self.stiffness_range)
        d["mass_range"] = list(self.mass_range)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown dataset config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("stiffness_range", "mass_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def condition_dim(n_bodies, n_regimes=N_REGIMES):
    return 1 + n_bodies + n_regimes + n_bodies * (n_bodies - 1) // 2


def build_condition_vector(spec, n_regimes=N_REGIMES, include_adjacency=True):
    """``[stiffness, masses, one-hot(regime), upper-triangle(adjacency)]``."""
    onehot = np.zeros(n_regimes)
    onehot[spec.regime_label] = 1.0
    iu = np.triu_indices(spec.n_bodies, k=1)
    upper = spec.adjacency[iu]
    if not include_adjacency:
        upper = np.zeros_like(upper)
    return np.concatenate([[spec.stiffness_scale], spec.masses, onehot, upper])


def decode_condition_vector(c, n_bodies, n_regimes=N_REGIMES):
    """Inverse of :func:`build_condition_vector` (with the adjacency block present)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (condition_dim(n_bodies, n_regimes),):
        raise ValidationError(f"condition vector length {c.shape} does not fit {n_bodies} bodies")
    masses = c[1:1 + n_bodies]
    regime = int(np.argmax(c[1 + n_bodies:1 + n_bodies + n_regimes]))
    adj = np.zeros((n_bodies, n_bodies))
    adj[np.triu_indices(n_bodies, k=1)] = c[1 + n_bodies + n_regimes:]
    adj = adj + adj.T
    return SystemSpec(adj, c[0], masses, regime)


def random_graph(n_bodies, edge_prob, rng):
    """Symmetric graph with at least one spring, and at least one gap when more than one pair exists."""
    if n_bodies < 2:
        raise ValidationError("a spring graph needs at least two bodies")
    while True:
        upper = np.triu((rng.random((n_bodies, n_bodies)) < edge_prob).astype(float), k=1)
        adj = upper + upper.T
        n_edges, n_pairs = upper.sum(), n_bodies * (n_bodies - 1) // 2
        if n_edges > 0 and (n_edges < n_pairs or n_pairs == 1):
            return adj


def _system_rng(seed, group_id):
    return np.random.default_rng(np.random.SeedSequence([seed, group_id]))


def generate_dataset(n_systems, cycles_per_system_range=(3, 8), global_config=None, seed=0):
    """Simulate ``n_systems`` systems with a random number of trajectories each.

    Each system draws from its own stream seeded by ``(seed, group_id)``; the
    regime label splits systems at the median stiffness of the corpus.
    """
    cfg = global_config or DatasetConfig()
    lo, hi = cycles_per_system_range
    if n_systems < 3:
        raise ValidationError(f"need at least 3 systems to build folds, got {n_systems}")
    if not (1 <= lo <= hi):
        raise ValidationError(f"invalid cycles_per_system_range {cycles_per_system_range}")
    if cfg.graph_mode not in ("shared", "per_system"):
        raise ValidationError(f"unknown graph_mode {cfg.graph_mode!r}")

    shared = random_graph(cfg.n_bodies, cfg.edge_prob, np.random.default_rng(np.random.SeedSequence([seed])))
    drafts = []
    for gid in range(n_systems):
        rng = _system_rng(seed, gid)
        adj = shared if cfg.graph_mode == "shared" else random_graph(cfg.n_bodies, cfg.edge_prob, rng)
        s_lo, s_hi = cfg.stiffness_range
        stiffness = float(np.exp(rng.uniform(np.log(s_lo), np.log(s_hi))))
        masses = rng.uniform(*cfg.mass_range, size=cfg.n_bodies)
        n_cycles = int(rng.integers(lo, hi + 1))
        drafts.append((gid, rng, adj, stiffness, masses, n_cycles))

    median = float(np.median([d[3] for d in drafts]))
    samples = []
    for gid, rng, adj, stiffness, masses, n_cycles in drafts:
        spec = SystemSpec(adj, stiffness, masses, int(stiffness > median))
        c = build_condition_vector(spec, include_adjacency=cfg.include_adjacency)
        for _ in range(n_cycles):
            x0 = random_initial_state(cfg.n_bodies, rng, cfg.pos_std, cfg.vel_std)
            traj = simulate_spring_system(spec, cfg.n_frames, cfg.dt, x0,
                                          sample_every=cfg.sample_every,
                                          spring_constant=cfg.spring_constant)
            samples.append(SystemSample(traj, c.copy(), gid, spec.regime_label, adj.copy()))
    return samples


def stack_samples(samples):
    """Arrays ``(X, C)`` of shapes (N, T, M, D) and (N, d)."""
    return (np.stack([s.trajectory for s in samples]),
            np.stack([s.condition for s in samples]))


def shared_graph(samples):
    """The common ground-truth adjacency, or ``None`` if graphs differ."""
    graphs = [s.adjacency for s in samples if s.adjacency is not None]
    if not graphs or any(not np.array_equal(g, graphs[0]) for g in graphs[1:]):
        return None
    return graphs[0]


@dataclass
class CorpusSummary:
    n_samples: int
    n_groups: int
    shape: tuple
    condition_dim: int
    regime_counts: dict = field(default_factory=dict)


def summarize(samples):
    regimes, counts = np.unique([s.regime_label for s in samples], return_counts=True)
    return CorpusSummary(
        n_samples=len(samples),
        n_groups=len({s.group_id for s in samples}),
        shape=tuple(samples[0].trajectory.shape),
        condition_dim=int(samples[0].condition.shape[0]),
        regime_counts={int(r): int(n) for r, n in zip(regimes, counts)},
    )
