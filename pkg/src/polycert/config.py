"""JSON run configuration: schema, loading and object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .autodiff import AdamConfig, as_tensor
from .dynamics import DisturbanceSpec, LinearSystem, OpenLoopSystem
from .interval import EmptyIntersection
from .lifted import Lifting, Polytope
from .models import double_integrator, platoon, platoon_lifting, platoon_policy, segway
from .neural import MLP
from .trainer import ImitationSpec, TrainConfig, TrainProblem


class ConfigError(ValueError):
    pass


_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_num_or_vec = {"oneOf": [{"type": "number"}, _vector]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "model": _obj(
            {
                "name": {"enum": ["double_integrator", "segway", "platoon", "linear"]},
                "N": {"type": "integer", "minimum": 1},
                "active_params": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 10}},
                "u_lim": {"type": "number", "exclusiveMinimum": 0},
                "A": _matrix,
                "B": _matrix,
                "D": _matrix,
            },
            ["name"],
        ),
        "network": {
            "oneOf": [
                _obj({"layers": {"type": "array", "items": _obj({"W": _matrix, "b": _vector}, ["W", "b"])}}, ["layers"]),
                _obj({"path": {"type": "string"}}, ["path"]),
                _obj({"init": _obj({"hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                                    "seed": {"type": "integer", "minimum": 0}}, ["hidden"])}, ["init"]),
            ]
        },
        "polytope": {
            "oneOf": [
                _obj({"H": _matrix, "y_lo": _vector, "y_hi": _vector,
                      "eta": {"oneOf": [{"const": "zero"}, _matrix]}}, ["H", "y_lo", "y_hi"]),
                _obj({"preset": {"const": "platoon"}, "eta": {"oneOf": [{"const": "zero"}, _matrix]}}, ["preset"]),
            ]
        },
        "disturbance": _obj({"radius": _num_or_vec, "partitions_per_dim": {"enum": [1, 2]}}),
        "corner": {"enum": ["lower", "upper"]},
        "training": _obj(
            {
                "lambda": {"type": "number", "minimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number"},
                "beta2": {"type": "number"},
                "adam_eps": {"type": "number"},
                "train_eta": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
                "imitation": _obj(
                    {"K": _matrix, "box_lo": _vector, "box_hi": _vector, "batch_size": {"type": "integer", "minimum": 1}},
                    ["K", "box_lo", "box_hi"],
                ),
            }
        ),
        "simulation": _obj(
            {
                "x0": {"oneOf": [_matrix, {"const": "boundary"}]},
                "n_samples": {"type": "integer", "minimum": 1},
                "T": {"type": "number", "minimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "hold": {"type": "integer", "minimum": 1},
                "lifted": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            }
        ),
        "output_dir": {"type": "string"},
    },
    ["model", "network", "polytope"],
)


@dataclass(frozen=True)
class SimulationConfig:
    x0: object = "boundary"
    n_samples: int = 10
    T: float = 10.0
    dt: float = 1e-3
    hold: int = 100
    lifted: bool = False
    seed: int = 0


@dataclass(eq=False)
class RunConfig:
    raw: dict
    base: Path
    sys: OpenLoopSystem
    net: MLP
    make_policy: object
    lifting: Lifting
    polytope: Polytope
    disturbance: DisturbanceSpec
    corner: str
    training: TrainConfig
    simulation: SimulationConfig
    output_dir: Path

    def problem(self) -> TrainProblem:
        return TrainProblem(self.sys, self.net, self.lifting, self.polytope.y_lo, self.polytope.y_hi,
                            self.disturbance, self.make_policy, self.corner)


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _system(m: dict) -> tuple[OpenLoopSystem, object, int]:
    name = m["name"]
    allowed = {
        "double_integrator": set(),
        "segway": {"active_params"},
        "platoon": {"N", "u_lim"},
        "linear": {"A", "B", "D"},
    }[name]
    extra = set(m) - allowed - {"name"}
    if extra:
        raise ConfigError(f"model '{name}' does not take {sorted(extra)}")
    if name == "double_integrator":
        return double_integrator(), None, 2
    if name == "segway":
        return segway(tuple(m.get("active_params", range(11)))), None, 3
    if name == "platoon":
        N = m.get("N", 4)
        return platoon(N, m.get("u_lim", 10.0)), N, 6
    if "A" not in m or "B" not in m:
        raise ConfigError("linear model needs A and B")
    sys = LinearSystem(m["A"], m["B"], m.get("D"))
    return sys, None, sys.n


def _network(block: dict, in_dim: int, out_dim: int, base: Path) -> MLP:
    if "layers" in block:
        return MLP.from_json(block)
    if "path" in block:
        p = Path(block["path"])
        return MLP.from_json(load_json(p if p.is_absolute() else base / p))
    init = block["init"]
    return MLP.init([in_dim, *init["hidden"], out_dim], init.get("seed", 0))


def build(raw: dict, base=".", out=None, seed=None) -> RunConfig:
    """Validate ``raw`` against :data:`SCHEMA` and construct every run object."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from exc
    base = Path(base)
    try:
        sys, N, obs_dim = _system(raw["model"])
        net = _network(raw["network"], obs_dim, 1 if N is not None else sys.p, base)
        if N is not None:
            make_policy = lambda n, N=N: platoon_policy(n, N)  # noqa: E731
        else:
            if net.in_dim != sys.n or net.out_dim != sys.p:
                raise ConfigError(f"network maps R^{net.in_dim} -> R^{net.out_dim}, model needs R^{sys.n} -> R^{sys.p}")
            make_policy = lambda n: n  # noqa: E731
        pb = raw["polytope"]
        if "preset" in pb:
            if N is None:
                raise ConfigError("polytope preset 'platoon' needs the platoon model")
            H, y_lo, y_hi = platoon_lifting(N)
        else:
            H, y_lo, y_hi = pb["H"], pb["y_lo"], pb["y_hi"]
        polytope = Polytope(H, y_lo, y_hi)
        if polytope.n != sys.n:
            raise ConfigError(f"polytope lives in R^{polytope.n}, model state is R^{sys.n}")
        eta = pb.get("eta", "zero")
        lifting = Lifting.from_H(polytope.H, None if eta == "zero" else eta)

        db = raw.get("disturbance", {})
        radius = as_tensor(db.get("radius", 0.0)).reshape(-1)
        if radius.numel() == 1:
            radius = radius.expand(sys.q).clone()
        if radius.numel() != sys.q:
            raise ConfigError(f"disturbance radius has {radius.numel()} entries, model has {sys.q}")
        if bool((radius < 0).any()):
            raise ConfigError("disturbance radius must be non-negative")
        disturbance = DisturbanceSpec.radius(radius, db.get("partitions_per_dim", 1))

        tb = dict(raw.get("training", {}))
        imit = tb.get("imitation")
        training = TrainConfig(
            lam=tb.get("lambda", 1.0),
            epsilon=tb.get("epsilon", 0.02),
            max_iters=tb.get("max_iters", 20000),
            adam=AdamConfig(tb.get("lr", 1e-3), tb.get("beta1", 0.9), tb.get("beta2", 0.999), tb.get("adam_eps", 1e-8)),
            imitation=None if imit is None else ImitationSpec(imit["K"], imit["box_lo"], imit["box_hi"], imit.get("batch_size", 1000)),
            train_eta=tb.get("train_eta", True),
            seed=tb.get("seed", 0) if seed is None else seed,
        )
        sb = dict(raw.get("simulation", {}))
        if seed is not None:
            sb["seed"] = seed
        simulation = SimulationConfig(**sb)
    except (ConfigError, EmptyIntersection):
        raise
    except (ValueError, KeyError, TypeError, RuntimeError) as exc:
        raise ConfigError(str(exc)) from exc
    output_dir = Path(out) if out is not None else base / raw.get("output_dir", ".")
    return RunConfig(raw, base, sys, net, make_policy, lifting, polytope, disturbance,
                     raw.get("corner", "lower"), training, simulation, output_dir)


def load(path, out=None, seed=None) -> RunConfig:
    path = Path(path)
    return build(load_json(path), path.parent, out, seed)
