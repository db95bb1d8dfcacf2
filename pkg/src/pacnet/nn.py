"""Dense multilayer perceptrons stored as one flat parameter vector.

A model owns a single float64 array ``params``; per-layer weight matrices and
bias vectors are reshaped views into it, laid out layer by layer as
``W_0, b_0, W_1, b_1, ...``.  Weight matrices have shape ``(fan_in, fan_out)``
so a layer computes ``x @ W + b``.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

# exp and square are not used by any task; they let tests hand-build networks
# with closed-form outputs (polynomials, exact heat-equation solutions)
ACTIVATIONS = ("relu", "tanh", "swish", "linear", "exp", "square")

MAGIC = b"PACNET01"


@dataclass(frozen=True)
class NetworkSpec:
    input_width: int
    hidden: tuple
    output_width: int = 1
    seed: int = 0

    def __post_init__(self):
        hidden = tuple((int(w), str(a)) for w, a in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if self.input_width < 1 or self.output_width < 1:
            raise ValueError("input and output widths must be >= 1")
        if not hidden:
            raise ValueError("at least one hidden layer is required")
        for width, act in hidden:
            if width < 1:
                raise ValueError(f"hidden width must be >= 1, got {width}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @classmethod
    def mlp(cls, input_width, width, depth, activation, output_width=1, seed=0):
        return cls(input_width, tuple((width, activation) for _ in range(depth)),
                   output_width, seed)

    @property
    def widths(self):
        return [self.input_width] + [w for w, _ in self.hidden] + [self.output_width]

    @property
    def activations(self):
        return [a for _, a in self.hidden] + ["linear"]

    def to_dict(self):
        return {"input_width": self.input_width,
                "hidden": [list(h) for h in self.hidden],
                "output_width": self.output_width,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_width"], tuple(tuple(h) for h in d["hidden"]),
                   d["output_width"], d.get("seed", 0))


@dataclass(frozen=True)
class LayoutEntry:
    layer: int
    kind: str  # "weight" | "bias"
    shape: tuple
    offset: int

    @property
    def size(self):
        return int(np.prod(self.shape))


def layout_for(spec):
    entries = []
    offset = 0
    widths = spec.widths
    for i in range(len(widths) - 1):
        for kind, shape in (("weight", (widths[i], widths[i + 1])),
                            ("bias", (widths[i + 1],))):
            entries.append(LayoutEntry(i, kind, shape, offset))
            offset += int(np.prod(shape))
    return tuple(entries)


@dataclass
class NetworkModel:
    spec: NetworkSpec
    params: np.ndarray = field(default=None)

    def __post_init__(self):
        self.layout = layout_for(self.spec)
        n = sum(e.size for e in self.layout)
        if self.params is None:
            self.params = np.zeros(n)
        else:
            self.params = np.array(self.params, dtype=np.float64)
            if self.params.shape != (n,):
                raise ValueError(f"expected {n} parameters, got {self.params.shape}")

    @property
    def size(self):
        return self.params.size

    @property
    def n_layers(self):
        return len(self.spec.widths) - 1

    def layers(self, params=None):
        """List of ``(W, b, activation)`` views into ``params`` (default: own)."""
        p = self.params if params is None else params
        acts = self.spec.activations
        out = []
        for i in range(self.n_layers):
            w, b = self.layout[2 * i], self.layout[2 * i + 1]
            out.append((p[w.offset:w.offset + w.size].reshape(w.shape),
                        p[b.offset:b.offset + b.size],
                        acts[i]))
        return out

    def weight_mask(self):
        """Boolean vector, True on weight-matrix entries and False on biases."""
        m = np.zeros(self.size, dtype=bool)
        for e in self.layout:
            if e.kind == "weight":
                m[e.offset:e.offset + e.size] = True
        return m

    def copy(self):
        return NetworkModel(self.spec, self.params.copy())

    def with_params(self, v):
        return NetworkModel(self.spec, v)


def he_normal(model, rng, where=None):
    """He-normal draws (std ``sqrt(2/fan_in)``) for every weight entry.

    Returns a full-length vector with zeros on biases.  If ``where`` is given,
    entries outside it are zeroed as well.
    """
    out = np.zeros(model.size)
    for e in model.layout:
        if e.kind == "weight":
            std = np.sqrt(2.0 / e.shape[0])
            out[e.offset:e.offset + e.size] = rng.normal(0.0, std, e.size)
    if where is not None:
        out[~where] = 0.0
    return out


def build(spec):
    """He-normal weights, zero biases, drawn from a seeded stream."""
    model = NetworkModel(spec)
    model.params[:] = he_normal(model, stream(spec.seed, "init"))
    return model


def flatten(model):
    return model.params.copy()


def load(model, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != model.params.shape:
        raise ValueError(f"parameter length mismatch: model has {model.size}, got {v.size}")
    model.params[:] = v


def save_checkpoint(path, model, mask=None):
    """Write ``model`` (and optionally a prune mask) in the PACNET01 format.

    Layout: 8-byte magic, uint64 LE header length, UTF-8 JSON header, float64
    LE parameters, then optionally one byte per parameter for the mask.
    """
    params = model.params.astype("<f8").tobytes()
    mask_bytes = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != model.params.shape:
            raise ValueError("mask length does not match parameter count")
        mask_bytes = mask.astype(np.uint8).tobytes()

    header = {
        "spec": model.spec.to_dict(),
        "layout": [{"layer": e.layer, "kind": e.kind, "shape": list(e.shape),
                    "offset": e.offset} for e in model.layout],
        "n_params": model.size,
        "has_mask": mask is not None,
        "params_offset": 0,
        "mask_offset": None,
    }
    # offsets depend on the header length, so iterate to a fixed point
    while True:
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        start = len(MAGIC) + 8 + len(blob)
        mask_off = start + len(params) if mask is not None else None
        if header["params_offset"] == start and header["mask_offset"] == mask_off:
            break
        header["params_offset"], header["mask_offset"] = start, mask_off

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(params)
        if mask_bytes is not None:
            f.write(mask_bytes)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, mask_or_None)``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a PACNET01 checkpoint")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    spec = NetworkSpec.from_dict(header["spec"])
    n = header["n_params"]
    off = header["params_offset"]
    params = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    model = NetworkModel(spec, params)
    mask = None
    if header["has_mask"]:
        moff = header["mask_offset"]
        mask = np.frombuffer(data, dtype=np.uint8, count=n, offset=moff).astype(bool)
    return model, mask
