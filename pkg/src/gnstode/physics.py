"""Ground-truth Gravity/Coulomb particle systems integrated with Leapfrog."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np


class System(enum.IntEnum):
    GRAVITY = 0
    COULOMB = 1

    @classmethod
    def parse(cls, name: "str | System") -> "System":
        if isinstance(name, System):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown system {name!r}; expected gravity or coulomb") from None


@dataclass(frozen=True)
class Layout:
    d: int
    static: tuple[int, ...]
    coords: tuple[int, int]
    vels: tuple[int, int]
    charge: int | None = None


LAYOUTS = {
    System.GRAVITY: Layout(d=5, static=(0,), coords=(1, 2), vels=(3, 4)),
    System.COULOMB: Layout(d=6, static=(0, 1), coords=(2, 3), vels=(4, 5), charge=1),
}


def layout(system: System | str) -> Layout:
    return LAYOUTS[System.parse(system)]


@dataclass(frozen=True)
class SystemSpec:
    """Physical configuration of a simulated particle system.

    ``dt`` is the spacing between recorded stamps; each stamp is integrated
    with ``substeps`` Leapfrog steps of ``dt / substeps``.
    """

    system: System = System.GRAVITY
    constant: float = 2.0
    dt: float = 0.01
    softening: float = 0.01
    intensity: float = 0.42
    substeps: int = 100

    def __post_init__(self):
        object.__setattr__(self, "system", System.parse(self.system))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.intensity > 0:
            raise ValueError(f"intensity must be positive, got {self.intensity}")
        if self.softening < 0:
            raise ValueError(f"softening must be non-negative, got {self.softening}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")

    @property
    def layout(self) -> Layout:
        return LAYOUTS[self.system]


@dataclass(frozen=True, eq=False)
class ParticleState:
    """An n x d feature matrix; column layout given by ``layout(system)``."""

    system: System
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != LAYOUTS[self.system].d:
            raise ValueError(
                f"{self.system.name.lower()} state needs shape (n, {LAYOUTS[self.system].d}), got {f.shape}"
            )
        object.__setattr__(self, "features", f)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def layout(self) -> Layout:
        return LAYOUTS[self.system]

    @property
    def masses(self) -> np.ndarray:
        return self.features[:, 0]

    @property
    def positions(self) -> np.ndarray:
        c = self.layout.coords
        return self.features[:, c[0] : c[1] + 1]

    @property
    def velocities(self) -> np.ndarray:
        v = self.layout.vels
        return self.features[:, v[0] : v[1] + 1]

    @property
    def charges(self) -> np.ndarray | None:
        ch = self.layout.charge
        return None if ch is None else self.features[:, ch]

    def with_kinematics(self, positions: np.ndarray, velocities: np.ndarray) -> "ParticleState":
        f = self.features.copy()
        c, v = self.layout.coords, self.layout.vels
        f[:, c[0] : c[1] + 1] = positions
        f[:, v[0] : v[1] + 1] = velocities
        return ParticleState(self.system, f)


@dataclass(eq=False)
class Trajectory:
    """T stamped states stored as a (T, n, d) array."""

    system: System
    states: np.ndarray
    dt_effective: float
    diverged_at: int | None = field(default=None, compare=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 3 or self.states.shape[2] != LAYOUTS[self.system].d:
            raise ValueError(f"trajectory array has bad shape {self.states.shape}")

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, t: int) -> ParticleState:
        return ParticleState(self.system, self.states[t])

    @property
    def n(self) -> int:
        return self.states.shape[1]


def _pairwise(pos: np.ndarray, softening: float) -> tuple[np.ndarray, np.ndarray]:
    """Displacements x_i - x_j and softened squared distances (diagonal = inf)."""
    diff = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff) + softening * softening
    np.fill_diagonal(r2, np.inf)
    if softening == 0.0 and np.any(r2 == 0.0):
        i, j = np.argwhere(r2 == 0.0)[0]
        raise ZeroDivisionError(f"particles {i} and {j} coincide with zero softening")
    return diff, r2


def _acceleration(pos, masses, charges, system, constant, softening) -> np.ndarray:
    diff, r2 = _pairwise(pos, softening)
    inv3 = r2**-1.5
    if system is System.GRAVITY:
        w = masses[None, :] * inv3
        return -constant * np.einsum("ij,ijk->ik", w, diff)
    w = charges[:, None] * charges[None, :] * inv3
    return (constant / masses)[:, None] * np.einsum("ij,ijk->ik", w, diff)


def acceleration(state: ParticleState, spec: SystemSpec) -> np.ndarray:
    """Softened pairwise accelerations, shape (n, 2).

    Gravity attracts; like Coulomb charges repel.
    """
    if state.system is not spec.system:
        raise ValueError(f"state is {state.system.name}, spec is {spec.system.name}")
    return _acceleration(
        state.positions, state.masses, state.charges, spec.system, spec.constant, spec.softening
    )


def hamiltonian(state: ParticleState, spec: SystemSpec) -> float:
    """Kinetic plus softened pair potential energy."""
    if state.system is not spec.system:
        raise ValueError(f"state is {state.system.name}, spec is {spec.system.name}")
    m = state.masses
    kinetic = 0.5 * float(np.sum(m * np.sum(state.velocities**2, axis=1)))
    _, r2 = _pairwise(state.positions, spec.softening)
    iu = np.triu_indices(state.n, 1)
    inv_r = 1.0 / np.sqrt(r2[iu])
    if spec.system is System.GRAVITY:
        potential = -spec.constant * float(np.sum(m[iu[0]] * m[iu[1]] * inv_r))
    else:
        c = state.charges
        potential = spec.constant * float(np.sum(c[iu[0]] * c[iu[1]] * inv_r))
    return kinetic + potential


def _kdk(pos, vel, acc, h, accel_fn):
    vel = vel + 0.5 * h * acc
    pos = pos + h * vel
    acc = accel_fn(pos)
    vel = vel + 0.5 * h * acc
    return pos, vel, acc


def leapfrog_step(state: ParticleState, spec: SystemSpec, h: float | None = None) -> ParticleState:
    """One kick-drift-kick step of size ``h`` (default ``spec.dt``)."""
    h = spec.dt if h is None else h
    accel = lambda p: _acceleration(  # noqa: E731
        p, state.masses, state.charges, spec.system, spec.constant, spec.softening
    )
    pos, vel, _ = _kdk(state.positions, state.velocities, accel(state.positions), h, accel)
    return state.with_kinematics(pos, vel)


def advance(state: ParticleState, spec: SystemSpec, stamps: int) -> np.ndarray:
    """Integrate ``stamps`` recorded intervals; returns the (stamps + 1, n, d) array.

    Each interval runs ``spec.substeps`` Leapfrog steps; the end-of-step
    acceleration is reused as the next step's opening kick.
    """
    m, c = state.masses, state.charges
    accel = lambda p: _acceleration(p, m, c, spec.system, spec.constant, spec.softening)  # noqa: E731
    h = spec.dt / spec.substeps
    pos, vel = state.positions.copy(), state.velocities.copy()
    acc = accel(pos)
    lay = state.layout
    out = np.empty((stamps + 1,) + state.features.shape)
    out[:] = state.features
    for t in range(1, stamps + 1):
        for _ in range(spec.substeps):
            pos, vel, acc = _kdk(pos, vel, acc, h, accel)
        out[t, :, lay.coords[0] : lay.coords[1] + 1] = pos
        out[t, :, lay.vels[0] : lay.vels[1] + 1] = vel
    return out


def sample_initial(n: int, spec: SystemSpec, rng: np.random.Generator) -> ParticleState:
    """Uniform positions on a square of side sqrt(n / intensity), unit masses,
    velocities uniform on (-1, 1), charges uniform on (0.5, 1.5)."""
    if n < 2:
        raise ValueError(f"need at least 2 particles, got {n}")
    side = np.sqrt(n / spec.intensity)
    lay = spec.layout
    f = np.empty((n, lay.d))
    f[:, 0] = 1.0
    if lay.charge is not None:
        f[:, lay.charge] = rng.uniform(0.5, 1.5, n)
    f[:, lay.coords[0] : lay.coords[1] + 1] = rng.uniform(0.0, side, (n, 2))
    f[:, lay.vels[0] : lay.vels[1] + 1] = rng.uniform(-1.0, 1.0, (n, 2))
    return ParticleState(spec.system, f)


SPLITS = ("train", "val", "test")


def trajectory_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Independent PCG64 stream per (seed, split, trajectory index)."""
    return np.random.default_rng([seed, SPLITS.index(split), index])


def simulate(n: int, spec: SystemSpec, T: int, rng: np.random.Generator) -> Trajectory:
    if T < 2:
        raise ValueError(f"trajectory needs T >= 2 stamps, got {T}")
    x0 = sample_initial(n, spec, rng)
    return Trajectory(spec.system, advance(x0, spec, T - 1), spec.dt)


def generate_dataset(
    n: int,
    spec: SystemSpec,
    T: int = 200,
    counts: tuple[int, int, int] = (100, 20, 20),
    seed: int = 0,
    workers: int = 1,
) -> dict[str, list[Trajectory]]:
    """Simulate train/val/test trajectory lists; deterministic per ``seed``."""
    if T < 2:
        raise ValueError(f"trajectory needs T >= 2 stamps, got {T}")
    jobs = [(split, i) for split, c in zip(SPLITS, counts) for i in range(c)]

    def run(job):
        split, i = job
        try:
            return simulate(n, spec, T, trajectory_rng(seed, split, i))
        except (ArithmeticError, ValueError) as exc:
            raise RuntimeError(f"{split} trajectory {i} failed: {exc}") from exc

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    out: dict[str, list[Trajectory]] = {s: [] for s in SPLITS}
    for (split, _), traj in zip(jobs, results):
        out[split].append(traj)
    return out


def downsample(traj: Trajectory, stride: int) -> Trajectory:
    """Keep stamps 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return replace(traj, states=traj.states[::stride].copy(), dt_effective=traj.dt_effective * stride)


def total_momentum(state: ParticleState) -> np.ndarray:
    return (state.masses[:, None] * state.velocities).sum(axis=0)
