"""Neural attachment points: named places in simulation code where a value
becomes analytical-term + network-residual.

Simulation code records named variables into a :class:`NeuralRegistry` as it
runs and calls :func:`resolve` at each attachment point.  Which points
actually get a network, with what architecture and weights, is declared
externally in a blueprint file (see :func:`parse_blueprint` for the
grammar).  With no attachment, or with all-zero weights, ``resolve`` leaves
the analytical value untouched, so an empty blueprint reproduces the plain
analytical simulator exactly.

All forward passes are generic over the scalar type, so network outputs are
differentiable with respect to both the packed weights and the recorded
inputs when run on dual numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual

__all__ = [
    "NetworkSpec",
    "NeuralBlueprint",
    "NeuralRegistry",
    "BlueprintError",
    "weight_count",
    "mlp_forward",
    "resolve",
    "parse_blueprint",
    "serialize_blueprint",
]


class BlueprintError(ValueError):
    """Malformed blueprint text or inconsistent attachment configuration."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of one attached network.

    ``input_shift``/``input_scale`` are optional per-input affine
    normalization constants applied as ``(x - shift) * scale`` before the
    first layer; they are data, not learned parameters.  ``replace=True``
    drops the analytical term instead of adding the network output to it.
    """

    input_names: tuple[str, ...]
    hidden_layers: tuple[int, ...] = ()
    output_dim: int = 1
    activation: str = "tanh"
    replace: bool = False
    input_shift: tuple[float, ...] | None = None
    input_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.input_names:
            raise BlueprintError("network needs at least one input")
        if self.output_dim < 1:
            raise BlueprintError("output_dim must be >= 1")
        if any(w < 1 for w in self.hidden_layers):
            raise BlueprintError("hidden layer widths must be >= 1")
        if self.activation != "tanh":
            raise BlueprintError(f"unsupported activation {self.activation!r}")
        for name, vec in (("input_shift", self.input_shift),
                          ("input_scale", self.input_scale)):
            if vec is not None and len(vec) != len(self.input_names):
                raise BlueprintError(
                    f"{name} length {len(vec)} does not match "
                    f"{len(self.input_names)} inputs"
                )

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, input to output."""
        widths = [len(self.input_names), *self.hidden_layers, self.output_dim]
        return list(zip(widths[:-1], widths[1:]))


def weight_count(spec: NetworkSpec) -> int:
    """Total packed parameters: per layer fan_in*fan_out weights + fan_out biases."""
    return sum(fi * fo + fo for fi, fo in spec.layer_dims)


def mlp_forward(spec: NetworkSpec, weights, inputs, name: str = "network"):
    """Forward pass; returns a list of ``output_dim`` scalars.

    ``weights`` is a flat slice in layer-major weights-then-biases order;
    hidden layers use tanh, the output layer is affine.
    """
    if len(inputs) != len(spec.input_names):
        raise BlueprintError(
            f"{name}: got {len(inputs)} inputs, expected {len(spec.input_names)}"
        )
    if len(weights) != weight_count(spec):
        raise BlueprintError(
            f"{name}: got {len(weights)} weights, expected {weight_count(spec)}"
        )
    xs = list(inputs)
    if spec.input_shift is not None:
        xs = [x - s for x, s in zip(xs, spec.input_shift)]
    if spec.input_scale is not None:
        xs = [x * s for x, s in zip(xs, spec.input_scale)]

    off = 0
    dims = spec.layer_dims
    for layer, (fan_in, fan_out) in enumerate(dims):
        bias_off = off + fan_in * fan_out
        ys = []
        for j in range(fan_out):
            acc = weights[bias_off + j]
            row = off + j * fan_in
            for i in range(fan_in):
                acc = acc + weights[row + i] * xs[i]
            if layer < len(dims) - 1:
                acc = dual.tanh(acc)
            ys.append(acc)
        xs = ys
        off = bias_off + fan_out
    return xs


@dataclass
class NeuralBlueprint:
    """Attachment-point declarations plus one packed weight vector.

    ``weights`` concatenates every attached network in declaration order.
    It is a plain list so the entries can be floats or dual numbers.
    """

    attachments: dict[str, NetworkSpec] = field(default_factory=dict)
    weights: list = field(default_factory=list)

    def __post_init__(self):
        expected = sum(weight_count(s) for s in self.attachments.values())
        if len(self.weights) != expected:
            raise BlueprintError(
                f"blueprint weight vector has {len(self.weights)} entries, "
                f"expected {expected}"
            )

    @property
    def n_weights(self) -> int:
        return len(self.weights)

    def weight_slice(self, name: str) -> slice:
        off = 0
        for att_name, spec in self.attachments.items():
            n = weight_count(spec)
            if att_name == name:
                return slice(off, off + n)
            off += n
        raise KeyError(name)

    def with_weights(self, weights) -> "NeuralBlueprint":
        """Copy with a substituted packed weight vector (floats or duals)."""
        return NeuralBlueprint(dict(self.attachments), list(weights))

    def zeroed(self) -> "NeuralBlueprint":
        return self.with_weights([0.0] * self.n_weights)


class NeuralRegistry:
    """Per-simulation store of the named variables recorded this step."""

    def __init__(self, blueprint: NeuralBlueprint | None = None):
        self.blueprint = blueprint if blueprint is not None else NeuralBlueprint()
        self.values: dict = {}

    def begin_step(self):
        self.values.clear()

    def record(self, name: str, value):
        self.values[name] = value

    def record_many(self, named_values):
        self.values.update(named_values)

    def resolve(self, name: str, analytical):
        return resolve(name, analytical, self)


def resolve(name: str, analytical, registry: NeuralRegistry | None):
    """Combine an analytical value with the attached network output, if any.

    ``analytical`` may be a scalar (output_dim 1) or a sequence matching the
    attachment's output dimension; scalar in gives scalar out.  Without an
    attachment the analytical value is returned unchanged.
    """
    if registry is None:
        return analytical
    spec = registry.blueprint.attachments.get(name)
    if spec is None:
        return analytical

    missing = [n for n in spec.input_names if n not in registry.values]
    if missing:
        raise BlueprintError(
            f"attachment {name!r}: inputs not recorded this step: "
            + ", ".join(missing)
        )
    inputs = [registry.values[n] for n in spec.input_names]
    weights = registry.blueprint.weights[registry.blueprint.weight_slice(name)]
    outputs = mlp_forward(spec, weights, inputs, name=name)

    scalar_in = not isinstance(analytical, (list, tuple))
    if scalar_in:
        if spec.output_dim != 1:
            raise BlueprintError(
                f"attachment {name!r} has output_dim {spec.output_dim} "
                "but was resolved with a scalar analytical value"
            )
        return outputs[0] if spec.replace else analytical + outputs[0]
    if len(analytical) != spec.output_dim:
        raise BlueprintError(
            f"attachment {name!r} output_dim {spec.output_dim} does not "
            f"match {len(analytical)} analytical components"
        )
    if spec.replace:
        return list(outputs)
    return [a + o for a, o in zip(analytical, outputs)]


# -- blueprint text format ---------------------------------------------------
#
# attach "<name>" {
#   inputs = [<name>, ...]
#   hidden = [<w>, ...]          # optional, default []
#   output = <n>                 # optional, default 1
#   weights = [<numbers>]        # optional, default seeded init
#   seed = <int>                 # optional, default 0
#   replace = true|false         # optional, default false
#   input_shift = [<numbers>]    # optional
#   input_scale = [<numbers>]    # optional
# }
#
# Key/value pairs are separated by newlines or semicolons; '#' starts a
# comment.  Unknown keys are rejected.

_INIT_HALFWIDTH = 0.01

_KNOWN_KEYS = {
    "inputs", "hidden", "output", "weights", "seed", "replace",
    "input_shift", "input_scale",
}


class _Tokenizer:
    def __init__(self, text: str):
        self.tokens: list[tuple[str, str, int]] = []  # (kind, value, line)
        line = 1
        i = 0
        n = len(text)
        while i < n:
            c = text[i]
            if c == "\n":
                line += 1
                i += 1
            elif c in " \t\r":
                i += 1
            elif c == "#":
                while i < n and text[i] != "\n":
                    i += 1
            elif c in "{}[]=,;":
                self.tokens.append(("sym", c, line))
                i += 1
            elif c == '"':
                j = text.find('"', i + 1)
                if j < 0:
                    raise BlueprintError(f"line {line}: unterminated string")
                self.tokens.append(("str", text[i + 1:j], line))
                i = j + 1
            else:
                j = i
                while j < n and text[j] not in ' \t\r\n{}[]=,;#"':
                    j += 1
                word = text[i:j]
                self.tokens.append(("word", word, line))
                i = j
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expect: str | None = None):
        tok = self.peek()
        if tok is None:
            raise BlueprintError("unexpected end of blueprint")
        self.pos += 1
        if expect is not None and tok[1] != expect:
            raise BlueprintError(
                f"line {tok[2]}: expected {expect!r}, got {tok[1]!r}"
            )
        return tok


def _parse_number(tok) -> float:
    try:
        return float(tok[1])
    except ValueError:
        raise BlueprintError(f"line {tok[2]}: expected a number, got {tok[1]!r}")


def _parse_list(tz: _Tokenizer) -> list[tuple[str, str, int]]:
    tz.next("[")
    items = []
    while True:
        tok = tz.peek()
        if tok is None:
            raise BlueprintError("unterminated list")
        if tok[1] == "]":
            tz.next()
            return items
        if tok[1] == ",":
            tz.next()
            continue
        items.append(tz.next())


def parse_blueprint(text: str) -> NeuralBlueprint:
    """Parse blueprint text into specs plus a packed weight vector.

    Weights omitted from an attachment are initialized uniformly in
    [-0.01, 0.01] from that attachment's seed, so repeated parses are
    bit-identical.
    """
    tz = _Tokenizer(text)
    attachments: dict[str, NetworkSpec] = {}
    weight_chunks: list[list[float]] = []

    while tz.peek() is not None:
        tok = tz.next()
        if tok[1] == ";":
            continue
        if tok[1] != "attach":
            raise BlueprintError(
                f"line {tok[2]}: expected 'attach', got {tok[1]!r}"
            )
        name_tok = tz.next()
        if name_tok[0] != "str":
            raise BlueprintError(
                f"line {name_tok[2]}: attachment name must be quoted"
            )
        name = name_tok[1]
        if name in attachments:
            raise BlueprintError(
                f"line {name_tok[2]}: duplicate attachment {name!r}"
            )
        tz.next("{")

        fields: dict = {}
        while True:
            tok = tz.peek()
            if tok is None:
                raise BlueprintError(f"attachment {name!r}: missing '}}'")
            if tok[1] == "}":
                tz.next()
                break
            if tok[1] == ";":
                tz.next()
                continue
            key_tok = tz.next()
            key = key_tok[1]
            if key not in _KNOWN_KEYS:
                raise BlueprintError(
                    f"line {key_tok[2]}: unknown key {key!r} in attachment {name!r}"
                )
            if key in fields:
                raise BlueprintError(
                    f"line {key_tok[2]}: duplicate key {key!r} in attachment {name!r}"
                )
            tz.next("=")
            if key == "inputs":
                fields[key] = tuple(t[1] for t in _parse_list(tz))
            elif key in ("hidden",):
                fields[key] = tuple(int(_parse_number(t)) for t in _parse_list(tz))
            elif key in ("weights", "input_shift", "input_scale"):
                fields[key] = [_parse_number(t) for t in _parse_list(tz)]
            elif key == "output":
                fields[key] = int(_parse_number(tz.next()))
            elif key == "seed":
                fields[key] = int(_parse_number(tz.next()))
            elif key == "replace":
                val_tok = tz.next()
                if val_tok[1] not in ("true", "false"):
                    raise BlueprintError(
                        f"line {val_tok[2]}: replace must be true or false"
                    )
                fields[key] = val_tok[1] == "true"

        if "inputs" not in fields:
            raise BlueprintError(f"attachment {name!r}: missing 'inputs'")
        try:
            spec = NetworkSpec(
                input_names=fields["inputs"],
                hidden_layers=fields.get("hidden", ()),
                output_dim=fields.get("output", 1),
                replace=fields.get("replace", False),
                input_shift=tuple(fields["input_shift"]) if "input_shift" in fields else None,
                input_scale=tuple(fields["input_scale"]) if "input_scale" in fields else None,
            )
        except BlueprintError as err:
            raise BlueprintError(f"attachment {name!r}: {err}") from None

        n = weight_count(spec)
        if "weights" in fields:
            if len(fields["weights"]) != n:
                raise BlueprintError(
                    f"attachment {name!r}: {len(fields['weights'])} weights "
                    f"listed, architecture needs {n}"
                )
            chunk = [float(w) for w in fields["weights"]]
        else:
            rng = np.random.default_rng(fields.get("seed", 0))
            chunk = rng.uniform(-_INIT_HALFWIDTH, _INIT_HALFWIDTH, size=n).tolist()
        attachments[name] = spec
        weight_chunks.append(chunk)

    return NeuralBlueprint(attachments, [w for c in weight_chunks for w in c])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def serialize_blueprint(bp: NeuralBlueprint) -> str:
    """Render a blueprint back to text; parse(serialize(bp)) round-trips."""
    lines = []
    for name, spec in bp.attachments.items():
        lines.append(f'attach "{name}" {{')
        lines.append("  inputs = [" + ", ".join(spec.input_names) + "]")
        if spec.hidden_layers:
            lines.append(
                "  hidden = [" + ", ".join(str(w) for w in spec.hidden_layers) + "]"
            )
        lines.append(f"  output = {spec.output_dim}")
        if spec.replace:
            lines.append("  replace = true")
        if spec.input_shift is not None:
            lines.append(
                "  input_shift = [" + ", ".join(_fmt(v) for v in spec.input_shift) + "]"
            )
        if spec.input_scale is not None:
            lines.append(
                "  input_scale = [" + ", ".join(_fmt(v) for v in spec.input_scale) + "]"
            )
        ws = bp.weights[bp.weight_slice(name)]
        lines.append(
            "  weights = [" + ", ".join(_fmt(dual.real(w)) for w in ws) + "]"
        )
        lines.append("}")
    return "\n".join(lines) + ("\n" if lines else "")
