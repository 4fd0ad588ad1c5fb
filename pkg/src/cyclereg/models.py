"""MLPs and forward/backward model pairs.

A model is a stack of linear layers with optional per-layer batch
normalization, activation and dropout; the output layer of a regression
head stays linear. Parameters live in a flat dict keyed
``layer{i}.{w,b,gamma,beta}`` so optimizers, gradient maps and
checkpoints all speak the same names. Initialization is deterministic
given the configured seed: weights uniform in [-s, s] with
s = sqrt(6 / (fan_in + fan_out)), biases zero, batchnorm affine at
identity, running stats at (0, 1).
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import BatchNormState, Tape

ACTIVATIONS = ("tanh", "relu", "none")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "tanh"
    batchnorm: bool = True
    dropout: bool = False


@dataclass(frozen=True)
class MlpSpec:
    layers: tuple
    seed: int = 0
    dropout_p: float = 0.1


def mlp_spec(widths, seed=0, activation="tanh", batchnorm=True, dropout=False,
             dropout_p=0.1):
    """Spec for [in, hidden..., out]; hidden layers get the activation,
    batchnorm and dropout flags, the output layer stays plain linear."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValueError("need at least an input and an output width")
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        layers.append(LayerSpec(
            in_width=a, out_width=b,
            activation="none" if last else activation,
            batchnorm=False if last else batchnorm,
            dropout=False if last else dropout,
        ))
    return MlpSpec(layers=tuple(layers), seed=seed, dropout_p=dropout_p)


def default_arch(dim_in, dim_out, seed=0):
    # four hidden layers of 64 tanh units with batchnorm
    return mlp_spec([dim_in, 64, 64, 64, 64, dim_out], seed=seed)


def _validate_spec(spec):
    if not spec.layers:
        raise ValueError("model spec has no layers")
    for i, lay in enumerate(spec.layers):
        if lay.in_width < 1 or lay.out_width < 1:
            raise ValueError(f"layer {i} has non-positive width")
        if lay.activation not in ACTIVATIONS:
            raise ValueError(
                f"layer {i} activation {lay.activation!r} not in {ACTIVATIONS}")
        if i and spec.layers[i - 1].out_width != lay.in_width:
            raise ValueError(
                f"layer {i} in_width {lay.in_width} != previous out_width "
                f"{spec.layers[i - 1].out_width}")
    if not 0.0 <= spec.dropout_p < 1.0:
        raise ValueError(f"dropout_p must be in [0, 1), got {spec.dropout_p}")


class Mlp:
    def __init__(self, spec, params, bn_states):
        self.spec = spec
        self.params = params
        self.bn_states = bn_states

    @property
    def dim_in(self):
        return self.spec.layers[0].in_width

    @property
    def dim_out(self):
        return self.spec.layers[-1].out_width

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return Mlp(self.spec, {k: v.copy() for k, v in self.params.items()},
                   {i: s.copy() for i, s in self.bn_states.items()})


def build_mlp(spec):
    _validate_spec(spec)
    rng = np.random.default_rng(spec.seed)
    params = {}
    bn_states = {}
    for i, lay in enumerate(spec.layers):
        s = np.sqrt(6.0 / (lay.in_width + lay.out_width))
        params[f"layer{i}.w"] = rng.uniform(-s, s, size=(lay.in_width, lay.out_width))
        params[f"layer{i}.b"] = np.zeros(lay.out_width)
        if lay.batchnorm:
            params[f"layer{i}.gamma"] = np.ones(lay.out_width)
            params[f"layer{i}.beta"] = np.zeros(lay.out_width)
            bn_states[i] = BatchNormState(np.zeros(lay.out_width), np.ones(lay.out_width))
    return Mlp(spec, params, bn_states)


def model_forward(tape, model, x, training=False, prefix="", rng=None):
    """Record the model on the tape; returns the output node id.

    ``x`` may be a node id or a raw array. ``prefix`` namespaces the
    parameter leaves (``phi.`` / ``psi.`` for pairs). Dropout draws its
    masks from ``rng``, so training-time forwards with dropout enabled
    need one.
    """
    h = x if isinstance(x, (int, np.integer)) else tape.constant(x)
    got = tape.nodes[h].value.shape[1]
    if got != model.dim_in:
        raise ValueError(f"input has {got} features, model expects {model.dim_in}")
    for i, lay in enumerate(model.spec.layers):
        w = tape.param(f"{prefix}layer{i}.w", model.params[f"layer{i}.w"])
        b = tape.param(f"{prefix}layer{i}.b", model.params[f"layer{i}.b"])
        h = tape.add_bias(tape.matmul(h, w), b)
        if lay.batchnorm:
            g = tape.param(f"{prefix}layer{i}.gamma", model.params[f"layer{i}.gamma"])
            be = tape.param(f"{prefix}layer{i}.beta", model.params[f"layer{i}.beta"])
            h = tape.batchnorm(h, g, be, model.bn_states[i], training)
        if lay.activation == "tanh":
            h = tape.tanh(h)
        elif lay.activation == "relu":
            h = tape.relu(h)
        if lay.dropout and training:
            if rng is None:
                raise ValueError("dropout in training mode needs an rng")
            p = model.spec.dropout_p
            mask = (rng.random(tape.nodes[h].value.shape) >= p) / (1.0 - p)
            h = tape.dropout(h, mask)
    return h


def predict(model, x):
    """Inference-mode forward pass, plain array in and out."""
    tape = Tape()
    return tape.value(model_forward(tape, model, np.asarray(x, dtype=np.float64)))


@dataclass
class ModelPair:
    """phi maps X -> Y (forward task), psi maps Y -> X (backward task)."""

    phi: Mlp
    psi: Mlp

    def copy(self):
        return ModelPair(self.phi.copy(), self.psi.copy())


def build_pair(dim_x, dim_y, phi_seed, psi_seed, hidden=(64, 64, 64, 64),
               activation="tanh", batchnorm=True, dropout=False, dropout_p=0.1):
    phi = build_mlp(mlp_spec([dim_x, *hidden, dim_y], seed=phi_seed,
                             activation=activation, batchnorm=batchnorm,
                             dropout=dropout, dropout_p=dropout_p))
    psi = build_mlp(mlp_spec([dim_y, *hidden, dim_x], seed=psi_seed,
                             activation=activation, batchnorm=batchnorm,
                             dropout=dropout, dropout_p=dropout_p))
    return ModelPair(phi, psi)


# -- checkpoints ---------------------------------------------------------

def _spec_to_dict(spec):
    return {"layers": [asdict(l) for l in spec.layers], "seed": spec.seed,
            "dropout_p": spec.dropout_p}


def _spec_from_dict(d):
    return MlpSpec(layers=tuple(LayerSpec(**l) for l in d["layers"]),
                   seed=d["seed"], dropout_p=d["dropout_p"])


def save_checkpoint(path, pair):
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "specs": np.array(json.dumps(
            {"phi": _spec_to_dict(pair.phi.spec), "psi": _spec_to_dict(pair.psi.spec)},
            sort_keys=True)),
    }
    for tag, model in (("phi", pair.phi), ("psi", pair.psi)):
        for k, v in model.params.items():
            arrays[f"{tag}.{k}"] = v
        for i, st in model.bn_states.items():
            arrays[f"{tag}.bn{i}.mean"] = st.mean
            arrays[f"{tag}.bn{i}.var"] = st.var
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint format version {version} not supported")
        specs = json.loads(str(z["specs"]))
        models = {}
        for tag in ("phi", "psi"):
            spec = _spec_from_dict(specs[tag])
            model = build_mlp(spec)
            for k in model.params:
                model.params[k] = z[f"{tag}.{k}"]
            for i in model.bn_states:
                model.bn_states[i].mean = z[f"{tag}.bn{i}.mean"]
                model.bn_states[i].var = z[f"{tag}.bn{i}.var"]
            models[tag] = model
    return ModelPair(models["phi"], models["psi"])
