"""Graph interaction network inside a spatial neural ODE, coupled to a temporal neural ODE.

One prediction ``X_t -> X_{t+1}``:

1. ``H_0`` = standardized ``X_t``; ``H_1 = H_0 + int_0^1 GIN(H_l, l) dl``.
2. ``D_t`` = masked head MLP on ``H_1``, rescaled to per-stamp increments.
3. ``X_{t+1} = X_t + int_0^1 D_tau dtau`` with ``D_tau = D_t + tau * g([D_t, X_t, tau])``.

The ablations swap step 1 for a single skip-connected GIN step and step 3 for
``X_t + D_t``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import SpatialGraph, knn_graph, merge_graphs
from .ode import OdeConfig, integrate
from .physics import LAYOUTS, ParticleState, System, Trajectory

GROUPS = ("message", "update", "head", "temporal")
_TAU_SLACK = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    system: System = System.GRAVITY
    spatial_ode: OdeConfig = field(default_factory=lambda: OdeConfig("rk4", 2))
    temporal_ode: OdeConfig = field(default_factory=lambda: OdeConfig("rk4", 4))
    ablate_spatial: bool = False
    ablate_temporal: bool = False
    hidden_width: int = 64
    k: int = 15

    def __post_init__(self):
        object.__setattr__(self, "system", System.parse(self.system))
        if self.hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @property
    def d(self) -> int:
        return LAYOUTS[self.system].d

    @property
    def static_mask(self) -> np.ndarray:
        """True at the static feature columns (mass, charge)."""
        mask = np.zeros(self.d, dtype=bool)
        mask[list(LAYOUTS[self.system].static)] = True
        return mask

    def to_dict(self) -> dict:
        out = asdict(self)
        out["system"] = self.system.name.lower()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["spatial_ode"] = OdeConfig(**d["spatial_ode"])
        d["temporal_ode"] = OdeConfig(**d["temporal_ode"])
        return cls(**d)


@dataclass(frozen=True)
class NormStats:
    """Training-set statistics.

    ``mean``/``std`` standardize inputs, ``delta_std`` is the per-feature
    spread of one-stamp increments and sets the output scale of the
    dynamics, ``length_scale`` divides edge geometry.
    """

    mean: np.ndarray
    std: np.ndarray
    delta_std: np.ndarray
    length_scale: float

    @classmethod
    def fit(cls, trajectories: list[Trajectory]) -> "NormStats":
        if not trajectories:
            raise ValueError("cannot fit normalization on an empty trajectory list")
        lay = LAYOUTS[trajectories[0].system]
        states = np.concatenate([t.states.reshape(-1, lay.d) for t in trajectories])
        deltas = np.concatenate(
            [np.diff(t.states, axis=0).reshape(-1, lay.d) for t in trajectories]
        )
        std = _floor(states.std(axis=0))
        c = list(lay.coords)
        return cls(
            mean=states.mean(axis=0),
            std=std,
            delta_std=_floor(deltas.std(axis=0)),
            length_scale=float(np.mean(std[c])),
        )

    @classmethod
    def identity(cls, d: int) -> "NormStats":
        return cls(np.zeros(d), np.ones(d), np.ones(d), 1.0)

    def to_dict(self) -> dict:
        return {
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
            "delta_std": [float(x) for x in self.delta_std],
            "length_scale": float(self.length_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            np.array(d["mean"], dtype=np.float64),
            np.array(d["std"], dtype=np.float64),
            np.array(d["delta_std"], dtype=np.float64),
            float(d["length_scale"]),
        )


def _floor(std: np.ndarray) -> np.ndarray:
    # constant features (unit masses, zero increments of static columns) scale by 1
    return np.where(std > 1e-12, std, 1.0)


@dataclass(eq=False)
class ModelParameters:
    tensors: dict[str, Tensor]
    norm: NormStats

    def group(self, name: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith(name + ".")}

    def replace_tensors(self, tensors: dict[str, Tensor]) -> "ModelParameters":
        return ModelParameters(tensors, self.norm)

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


def layer_sizes(cfg: ModelConfig) -> dict[str, list[int]]:
    d, w = cfg.d, cfg.hidden_width
    return {
        "message": [2 * d + 3 + 1, w, w, d],
        "update": [2 * d + 1, w, w, d],
        "head": [d, w, w, d],
        "temporal": [2 * d + 1, w, w, d],
    }


def init_params(cfg: ModelConfig, norm: NormStats, rng: np.random.Generator) -> ModelParameters:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    tensors = {}
    for group, sizes in layer_sizes(cfg).items():
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            tensors[f"{group}.w{i}"] = Tensor(
                rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True, name=f"{group}.w{i}"
            )
            tensors[f"{group}.b{i}"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{group}.b{i}")
    return ModelParameters(tensors, norm)


def zero_params(cfg: ModelConfig, norm: NormStats | None = None) -> ModelParameters:
    norm = NormStats.identity(cfg.d) if norm is None else norm
    p = init_params(cfg, norm, np.random.default_rng(0))
    return p.replace_tensors(
        {k: Tensor(np.zeros_like(v.data), requires_grad=True, name=k) for k, v in p.tensors.items()}
    )


def mlp(x: Tensor, params: ModelParameters, group: str) -> Tensor:
    """tanh hidden layers, linear output layer."""
    layers = len(params.group(group)) // 2
    rows = x.shape[0]
    for i in range(layers):
        x = x @ params.tensors[f"{group}.w{i}"] + ad.broadcast_row(params.tensors[f"{group}.b{i}"], rows)
        if i < layers - 1:
            x = ad.tanh(x)
    return x


def _column(value: float, rows: int) -> np.ndarray:
    return np.full((rows, 1), float(value))


def gin_derivative(H: Tensor, graph: SpatialGraph, l: float, params: ModelParameters) -> Tensor:
    """Message passing with the layer variable ``l`` appended to every MLP input."""
    n = H.shape[0]
    if graph.n != n:
        raise ad.ShapeError(f"gin_derivative: graph has {graph.n} nodes, H has {n} rows")
    edges = graph.num_edges
    e = graph.edge_features / params.norm.length_scale
    h_recv = ad.gather(H, graph.receivers)
    h_send = ad.gather(H, graph.senders)
    msg = mlp(ad.concat([h_recv, h_send, e, _column(l, edges)], axis=1), params, "message")
    agg = ad.segment_sum(msg, graph.receivers, n)
    return mlp(ad.concat([H, agg, _column(l, n)], axis=1), params, "update")


def normalize(X: np.ndarray, params: ModelParameters) -> np.ndarray:
    return (X - params.norm.mean) / params.norm.std


def spatial_ode_solve(X: np.ndarray, graph: SpatialGraph, params: ModelParameters, cfg: ModelConfig) -> Tensor:
    """Hidden state after integrating the GIN derivative over l in [0, 1]."""
    H0 = Tensor(normalize(X, params))
    if cfg.ablate_spatial:
        return H0 + gin_derivative(H0, graph, 0.0, params)
    return integrate(lambda H, l: gin_derivative(H, graph, l, params), H0, 0.0, 1.0, cfg.spatial_ode)


def _dynamic_scale(params: ModelParameters, mask: np.ndarray, rows: int) -> np.ndarray:
    s = np.where(mask, 0.0, params.norm.delta_std)
    return np.broadcast_to(s, (rows, s.size)).copy()


def dynamics_head(H: Tensor, params: ModelParameters, static_mask: np.ndarray) -> Tensor:
    """Per-particle temporal dynamics D_t in raw feature units; static columns are 0."""
    out = mlp(H, params, "head")
    return out * _dynamic_scale(params, static_mask, H.shape[0])


def temporal_dynamics_fn(
    D: Tensor, X: np.ndarray, tau: float, params: ModelParameters, static_mask: np.ndarray
) -> Tensor:
    """``D_tau = D_t + tau * g([D_t, X_t, tau])``; equals ``D_t`` at ``tau = 0``."""
    if not (-_TAU_SLACK <= tau <= 1.0 + _TAU_SLACK):
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    rows = D.shape[0]
    scale = _dynamic_scale(params, static_mask, rows)
    inv = np.divide(1.0, scale, out=np.zeros_like(scale), where=scale != 0.0)
    D_norm = D * inv
    g = mlp(ad.concat([D_norm, normalize(X, params), _column(tau, rows)], axis=1), params, "temporal")
    return D + (g * scale) * tau


def build_graph(X: np.ndarray, system: System, k: int) -> SpatialGraph:
    c = LAYOUTS[system].coords
    return knn_graph(X[:, c[0] : c[1] + 1], k)


def predict_batch(states: np.ndarray, params: ModelParameters, cfg: ModelConfig) -> Tensor:
    """Predict the next state for a (B, n, d) stack; returns a (B*n, d) tensor.

    The B graphs are merged into one disjoint graph so every MLP call sees
    all particles at once.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    B, n, d = states.shape
    if d != cfg.d:
        raise ad.ShapeError(f"state has {d} features, model expects {cfg.d}")
    graph = merge_graphs([build_graph(s, cfg.system, cfg.k) for s in states])
    X = states.reshape(B * n, d)
    mask = cfg.static_mask
    H = spatial_ode_solve(X, graph, params, cfg)
    D = dynamics_head(H, params, mask)
    if cfg.ablate_temporal:
        X_next = Tensor(X) + D
    else:
        X_next = integrate(
            lambda y, tau: temporal_dynamics_fn(D, X, tau, params, mask), X, 0.0, 1.0, cfg.temporal_ode
        )
    ad.check_finite(X_next, "prediction")
    return X_next


def predict_step(state: ParticleState, params: ModelParameters, cfg: ModelConfig) -> ParticleState:
    out = predict_batch(state.features[None], params, cfg).data
    f = np.array(out)
    # static columns pass through untouched
    f[:, cfg.static_mask] = state.features[:, cfg.static_mask]
    return ParticleState(state.system, f)
