"""Multibody model description and its text file format.

Two model forms are supported: a serial chain of revolute joints in
minimal coordinates (``chain`` block, one ``link`` block per joint) and a
single free-floating 6-DoF box (``free_body`` block, optional ``contact``
block for the ground interaction).  Any scalar field may be marked
``free(min, max)``, which registers it as an analytical parameter to be
identified; bounds must contain the nominal value.

Field values are plain Python floats on the nominal model; substituting
dual numbers via :meth:`MultiBodyModel.with_values` turns every simulation
quantity downstream into a derivative-carrying scalar.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

__all__ = [
    "LinkParams",
    "FreeBodyParams",
    "ContactParams",
    "FreeParam",
    "MultiBodyModel",
    "ModelError",
    "parse_model",
    "serialize_model",
]


class ModelError(ValueError):
    """Malformed model text or physically invalid parameters."""


@dataclass
class LinkParams:
    """One revolute link: mass, joint-to-joint length, COM offset along the
    link, rotational inertia about the COM, viscous joint damping.

    ``com_offset=None`` places the mass at the link tip and keeps it there
    when the length is re-identified (classic point-mass pendulum)."""

    mass: float
    length: float
    com_offset: float | None = None
    inertia_zz: float = 1e-12
    damping: float = 0.0

    @property
    def com(self):
        return self.length if self.com_offset is None else self.com_offset


@dataclass
class FreeBodyParams:
    """Free-floating box: mass, body-frame diagonal inertia, half extents."""

    mass: float
    inertia: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    half_extents: list = field(default_factory=lambda: [0.5, 0.5, 0.5])


@dataclass
class ContactParams:
    """Ground contact constants: Hertzian stiffness, penetration-rate
    damping, Coulomb friction coefficient, friction velocity smoothing."""

    stiffness: float = 1e4
    damping: float = 0.0
    mu0: float = 0.5
    eps_v: float = 1e-3


@dataclass(frozen=True)
class FreeParam:
    """One identifiable scalar: attribute path into the model plus bounds."""

    name: str            # e.g. "link0.mass" or "contact.stiffness"
    path: tuple          # attribute walk, e.g. ("links", 0, "mass")
    lower: float
    upper: float


@dataclass
class MultiBodyModel:
    """Either a revolute chain or a free body, plus the free-parameter map."""

    links: list[LinkParams] = field(default_factory=list)
    gravity: float = 9.81
    free_body: FreeBodyParams | None = None
    contact: ContactParams | None = None
    free_params: list[FreeParam] = field(default_factory=list)

    def __post_init__(self):
        if self.links and self.free_body is not None:
            raise ModelError("model cannot be both a chain and a free body")
        if not self.links and self.free_body is None:
            raise ModelError("model needs a chain or a free_body block")

    @property
    def is_chain(self) -> bool:
        return bool(self.links)

    @property
    def dof(self) -> int:
        return len(self.links) if self.is_chain else 6

    @property
    def nq(self) -> int:
        """Generalized-position dimension (quaternion included for free body)."""
        return len(self.links) if self.is_chain else 7

    def validate(self):
        for i, link in enumerate(self.links):
            if not (_pos(link.mass) and _pos(link.length) and _pos(link.inertia_zz)):
                raise ModelError(
                    f"link {i}: mass, length and inertia_zz must be positive"
                )
            if link.com_offset is not None and link.com_offset <= 0:
                raise ModelError(f"link {i}: com_offset must be positive")
        if self.free_body is not None:
            fb = self.free_body
            if not _pos(fb.mass) or any(not _pos(v) for v in fb.inertia):
                raise ModelError("free body mass and inertia must be positive")
            if any(not _pos(v) for v in fb.half_extents):
                raise ModelError("free body half_extents must be positive")
        if self.contact is not None:
            if not _pos(self.contact.stiffness) or self.contact.damping < 0:
                raise ModelError("contact stiffness must be > 0, damping >= 0")
        for fp in self.free_params:
            v = self._get(fp.path)
            if not (fp.lower <= v <= fp.upper):
                raise ModelError(
                    f"free parameter {fp.name}: nominal {v} outside "
                    f"[{fp.lower}, {fp.upper}]"
                )

    # -- free-parameter plumbing -------------------------------------------

    def _get(self, path: tuple):
        obj = self
        for step in path:
            obj = obj[step] if isinstance(step, int) else getattr(obj, step)
        return obj

    def _set(self, path: tuple, value):
        obj = self
        for step in path[:-1]:
            obj = obj[step] if isinstance(step, int) else getattr(obj, step)
        last = path[-1]
        if isinstance(last, int):
            obj[last] = value
        else:
            setattr(obj, last, value)

    def free_values(self) -> list[float]:
        return [self._get(fp.path) for fp in self.free_params]

    def free_bounds(self) -> list[tuple[float, float]]:
        return [(fp.lower, fp.upper) for fp in self.free_params]

    def with_values(self, values) -> "MultiBodyModel":
        """Deep copy with the free parameters substituted (floats or duals)."""
        if len(values) != len(self.free_params):
            raise ModelError(
                f"got {len(values)} values for {len(self.free_params)} "
                "free parameters"
            )
        out = copy.deepcopy(self)
        for fp, v in zip(out.free_params, values):
            out._set(fp.path, v)
        return out


def _pos(x) -> bool:
    return x > 0


# -- model text format --------------------------------------------------
#
# chain {
#   link { mass=1.0 free(0.1, 5.0), length=0.5, com=0.25, inertia_zz=0.02, damping=0.01 }
#   link { ... }
#   gravity = 9.81
# }
#
# free_body { mass=1.0, inertia=[0.0017, 0.0017, 0.0017], half_extents=[0.05, 0.05, 0.05] }
# contact { stiffness=1e5 free(1e3, 1e7), damping=0.5, mu0=0.5, eps_v=1e-3 }
#
# Separators between fields: commas, semicolons, or newlines; '#' comments.
# Any scalar field may append free(min, max).

_LINK_KEYS = {"mass", "length", "com", "inertia_zz", "damping"}
_LINK_ATTR = {"com": "com_offset"}
_FREEBODY_SCALARS = {"mass"}
_FREEBODY_VECTORS = {"inertia": 3, "half_extents": 3}
_CONTACT_KEYS = {"stiffness", "damping", "mu0", "eps_v"}


class _Tok:
    def __init__(self, text: str):
        self.toks: list[tuple[str, int]] = []
        line = 1
        i, n = 0, len(text)
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
            elif c in "{}[]=,;()":
                self.toks.append((c, line))
                i += 1
            else:
                j = i
                while j < n and text[j] not in ' \t\r\n{}[]=,;()#':
                    j += 1
                self.toks.append((text[i:j], line))
                i = j
        self.pos = 0

    def peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self, expect: str | None = None):
        tok = self.peek()
        if tok is None:
            raise ModelError("unexpected end of model text")
        self.pos += 1
        if expect is not None and tok[0] != expect:
            raise ModelError(f"line {tok[1]}: expected {expect!r}, got {tok[0]!r}")
        return tok


def _num(tok) -> float:
    try:
        return float(tok[0])
    except ValueError:
        raise ModelError(f"line {tok[1]}: expected a number, got {tok[0]!r}")


def _parse_value(tz: _Tok):
    """number, optional free(min,max) suffix -> (value, bounds-or-None)."""
    value = _num(tz.next())
    nxt = tz.peek()
    if nxt is not None and nxt[0] == "free":
        tz.next()
        tz.next("(")
        lo = _num(tz.next())
        tz.next(",")
        hi = _num(tz.next())
        tz.next(")")
        if not lo < hi:
            raise ModelError(f"free({lo}, {hi}): bounds must satisfy min < max")
        return value, (lo, hi)
    return value, None


def _parse_vector(tz: _Tok, n: int, key: str, line: int) -> list[float]:
    tz.next("[")
    vals = []
    while True:
        tok = tz.peek()
        if tok is None:
            raise ModelError(f"line {line}: unterminated vector for {key!r}")
        if tok[0] == "]":
            tz.next()
            break
        if tok[0] == ",":
            tz.next()
            continue
        vals.append(_num(tz.next()))
    if len(vals) != n:
        raise ModelError(
            f"line {line}: {key!r} needs {n} components, got {len(vals)}"
        )
    return vals


def _skip_seps(tz: _Tok):
    while True:
        tok = tz.peek()
        if tok is not None and tok[0] in (",", ";"):
            tz.next()
        else:
            return


def parse_model(text: str) -> MultiBodyModel:
    """Parse model text; rejects unknown keys and out-of-bounds nominals."""
    tz = _Tok(text)
    links: list[LinkParams] = []
    gravity = 9.81
    free_body: FreeBodyParams | None = None
    contact: ContactParams | None = None
    free_params: list[FreeParam] = []

    def scalar_field(obj_name, key_tok, known, path_prefix, attr_map=None):
        key, line = key_tok
        if key not in known:
            raise ModelError(f"line {line}: unknown key {key!r} in {obj_name}")
        tz.next("=")
        value, bounds = _parse_value(tz)
        attr = (attr_map or {}).get(key, key)
        if bounds is not None:
            free_params.append(
                FreeParam(f"{obj_name}.{key}", (*path_prefix, attr), *bounds)
            )
        return attr, value

    while tz.peek() is not None:
        head, line = tz.next()
        if head in (",", ";"):
            continue
        if head == "chain":
            tz.next("{")
            while True:
                tok = tz.peek()
                if tok is None:
                    raise ModelError("chain block missing '}'")
                if tok[0] == "}":
                    tz.next()
                    break
                if tok[0] in (",", ";"):
                    tz.next()
                    continue
                if tok[0] == "link":
                    tz.next()
                    tz.next("{")
                    idx = len(links)
                    fields: dict = {}
                    while True:
                        t2 = tz.peek()
                        if t2 is None:
                            raise ModelError(f"link {idx} missing '}}'")
                        if t2[0] == "}":
                            tz.next()
                            break
                        if t2[0] in (",", ";"):
                            tz.next()
                            continue
                        attr, value = scalar_field(
                            f"link{idx}", tz.next(), _LINK_KEYS,
                            ("links", idx), _LINK_ATTR,
                        )
                        if attr in fields:
                            raise ModelError(f"link {idx}: duplicate field {attr!r}")
                        fields[attr] = value
                    for required in ("mass", "length"):
                        if required not in fields:
                            raise ModelError(f"link {idx}: missing {required!r}")
                    links.append(LinkParams(**fields))
                elif tok[0] == "gravity":
                    tz.next()
                    tz.next("=")
                    gravity, bounds = _parse_value(tz)
                    if bounds is not None:
                        free_params.append(
                            FreeParam("gravity", ("gravity",), *bounds)
                        )
                else:
                    raise ModelError(
                        f"line {tok[1]}: unknown key {tok[0]!r} in chain"
                    )
        elif head == "free_body":
            tz.next("{")
            fb_fields: dict = {}
            while True:
                tok = tz.peek()
                if tok is None:
                    raise ModelError("free_body block missing '}'")
                if tok[0] == "}":
                    tz.next()
                    break
                if tok[0] in (",", ";"):
                    tz.next()
                    continue
                key_tok = tz.next()
                key = key_tok[0]
                if key in _FREEBODY_SCALARS:
                    tz.next("=")
                    value, bounds = _parse_value(tz)
                    fb_fields[key] = value
                    if bounds is not None:
                        free_params.append(
                            FreeParam(f"free_body.{key}", ("free_body", key), *bounds)
                        )
                elif key in _FREEBODY_VECTORS:
                    tz.next("=")
                    fb_fields[key] = _parse_vector(
                        tz, _FREEBODY_VECTORS[key], key, key_tok[1]
                    )
                else:
                    raise ModelError(
                        f"line {key_tok[1]}: unknown key {key!r} in free_body"
                    )
            if "mass" not in fb_fields:
                raise ModelError("free_body: missing 'mass'")
            free_body = FreeBodyParams(**fb_fields)
        elif head == "contact":
            tz.next("{")
            while True:
                tok = tz.peek()
                if tok is None:
                    raise ModelError("contact block missing '}'")
                if tok[0] == "}":
                    tz.next()
                    break
                if tok[0] in (",", ";"):
                    tz.next()
                    continue
                if contact is None:
                    contact = ContactParams()
                attr, value = scalar_field(
                    "contact", tz.next(), _CONTACT_KEYS, ("contact",)
                )
                setattr(contact, attr, value)
            if contact is None:
                contact = ContactParams()
        elif head == "gravity":
            tz.next("=")
            gravity, bounds = _parse_value(tz)
            if bounds is not None:
                free_params.append(FreeParam("gravity", ("gravity",), *bounds))
        else:
            raise ModelError(f"line {line}: unknown top-level block {head!r}")

    model = MultiBodyModel(
        links=links, gravity=gravity, free_body=free_body,
        contact=contact, free_params=free_params,
    )
    model.validate()
    return model


def _fmt(x) -> str:
    return format(float(x), ".17g")


def serialize_model(model: MultiBodyModel) -> str:
    """Render a model back to text, preserving free(min,max) markers."""
    bounds_of = {fp.path: (fp.lower, fp.upper) for fp in model.free_params}

    def fmt_field(key: str, path: tuple, value) -> str:
        out = f"{key}={_fmt(value)}"
        if path in bounds_of:
            lo, hi = bounds_of[path]
            out += f" free({_fmt(lo)}, {_fmt(hi)})"
        return out

    lines = []
    if model.is_chain:
        lines.append("chain {")
        for i, link in enumerate(model.links):
            parts = [
                fmt_field("mass", ("links", i, "mass"), link.mass),
                fmt_field("length", ("links", i, "length"), link.length),
            ]
            if link.com_offset is not None:
                parts.append(fmt_field("com", ("links", i, "com_offset"), link.com_offset))
            parts += [
                fmt_field("inertia_zz", ("links", i, "inertia_zz"), link.inertia_zz),
                fmt_field("damping", ("links", i, "damping"), link.damping),
            ]
            lines.append("  link { " + ", ".join(parts) + " }")
        lines.append("  " + fmt_field("gravity", ("gravity",), model.gravity))
        lines.append("}")
    else:
        fb = model.free_body
        lines.append("free_body {")
        lines.append("  " + fmt_field("mass", ("free_body", "mass"), fb.mass))
        lines.append("  inertia=[" + ", ".join(_fmt(v) for v in fb.inertia) + "]")
        lines.append(
            "  half_extents=[" + ", ".join(_fmt(v) for v in fb.half_extents) + "]"
        )
        lines.append("}")
        lines.append("gravity=" + _fmt(model.gravity))
    if model.contact is not None:
        c = model.contact
        parts = [
            fmt_field("stiffness", ("contact", "stiffness"), c.stiffness),
            fmt_field("damping", ("contact", "damping"), c.damping),
            fmt_field("mu0", ("contact", "mu0"), c.mu0),
            fmt_field("eps_v", ("contact", "eps_v"), c.eps_v),
        ]
        lines.append("contact { " + ", ".join(parts) + " }")
    return "\n".join(lines) + "\n"
