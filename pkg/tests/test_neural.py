import math

import numpy as np
import pytest

from hybridsim.dual import Dual, gradient, real, seed_vector
from hybridsim.neural import (
    BlueprintError,
    NetworkSpec,
    NeuralBlueprint,
    NeuralRegistry,
    mlp_forward,
    parse_blueprint,
    resolve,
    serialize_blueprint,
    weight_count,
)

from conftest import central_diff


def test_weight_count_arithmetic():
    assert weight_count(NetworkSpec(("a", "b", "c", "d"), (16, 16), 2)) == 386
    assert weight_count(NetworkSpec(("x",), (), 1)) == 2
    assert weight_count(NetworkSpec(("a", "b", "c"), (8,), 1)) == 41


def test_mlp_zero_weights_gives_zero_outputs():
    spec = NetworkSpec(("a", "b"), (4,), 2)
    out = mlp_forward(spec, [0.0] * weight_count(spec), [0.37, -2.5])
    assert out == [0.0, 0.0]


def test_mlp_linear_identity():
    spec = NetworkSpec(("x",), (), 1)
    out = mlp_forward(spec, [1.0, 0.0], [0.7])  # weight 1, bias 0
    assert out == [0.7]


def test_mlp_length_mismatches_name_the_attachment():
    spec = NetworkSpec(("a", "b"), (), 1)
    with pytest.raises(BlueprintError, match="friction.*inputs"):
        mlp_forward(spec, [0.0] * 3, [1.0], name="friction")
    with pytest.raises(BlueprintError, match="friction.*weights"):
        mlp_forward(spec, [0.0] * 2, [1.0, 2.0], name="friction")


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    spec = NetworkSpec(("a", "b", "c"), (5,), 2)
    n = weight_count(spec)
    weights = rng.uniform(-0.8, 0.8, size=n)
    inputs = rng.uniform(-1.0, 1.0, size=3)

    for out_idx in range(2):
        def f_w(ws, out_idx=out_idx):
            return mlp_forward(spec, list(ws), list(inputs))[out_idx]

        g = gradient(f_w, weights)
        fd = central_diff(lambda ws: float(f_w(ws)), weights)
        scale = max(1.0, np.abs(fd).max())
        assert np.abs(g - fd).max() / scale < 1e-4

        def f_x(xs, out_idx=out_idx):
            return mlp_forward(spec, list(weights), list(xs))[out_idx]

        g = gradient(f_x, inputs)
        fd = central_diff(lambda xs: float(f_x(xs)), inputs)
        assert np.abs(g - fd).max() / max(1.0, np.abs(fd).max()) < 1e-4


def _friction_blueprint(weights=None, seed=None, extra=""):
    lines = [
        'attach "contact_friction" {',
        "  inputs = [vt, fn]",
        "  hidden = [3]",
        "  output = 1",
    ]
    if weights is not None:
        lines.append("  weights = [" + ", ".join(str(w) for w in weights) + "]")
    if seed is not None:
        lines.append(f"  seed = {seed}")
    if extra:
        lines.append(extra)
    lines.append("}")
    return "\n".join(lines)


def test_resolve_without_attachment_is_identity():
    registry = NeuralRegistry(NeuralBlueprint())
    assert resolve("joint_damping", 0.3, registry) == 0.3
    assert resolve("joint_damping", 0.3, None) == 0.3


def test_resolve_zero_weights_keeps_analytical_value():
    n = weight_count(NetworkSpec(("vt", "fn"), (3,), 1))
    bp = parse_blueprint(_friction_blueprint(weights=[0.0] * n))
    registry = NeuralRegistry(bp)
    registry.record("vt", 0.4)
    registry.record("fn", 2.0)
    assert resolve("contact_friction", 0.3, registry) == 0.3


def test_resolve_missing_inputs_lists_names():
    bp = parse_blueprint(_friction_blueprint(seed=1))
    registry = NeuralRegistry(bp)
    registry.record("vt", 0.4)
    with pytest.raises(BlueprintError, match="fn"):
        resolve("contact_friction", 0.3, registry)


def test_resolve_composes_analytical_plus_network():
    bp = parse_blueprint(_friction_blueprint(seed=5))
    registry = NeuralRegistry(bp)
    registry.record("vt", 0.4)
    registry.record("fn", 2.0)
    got = resolve("contact_friction", 0.3, registry)
    spec = bp.attachments["contact_friction"]
    nn = mlp_forward(spec, bp.weights, [0.4, 2.0])[0]
    assert got == 0.3 + nn
    assert nn != 0.0


def test_resolve_gradient_wrt_weights_matches_fd():
    bp = parse_blueprint(_friction_blueprint(seed=9))
    spec = bp.attachments["contact_friction"]

    def f(ws):
        registry = NeuralRegistry(bp.with_weights(list(ws)))
        registry.record("vt", 0.4)
        registry.record("fn", 2.0)
        return resolve("contact_friction", 0.3, registry)

    w0 = [real(w) for w in bp.weights]
    g = gradient(f, w0)
    fd = central_diff(lambda ws: float(f(ws)), w0)
    assert np.abs(g - fd).max() / max(1.0, np.abs(fd).max()) < 1e-4


def test_replace_mode_drops_analytical_part():
    n = weight_count(NetworkSpec(("vt",), (), 1))
    text = 'attach "e" { inputs = [vt]; output = 1; replace = true; weights = [2.0, 0.5] }'
    bp = parse_blueprint(text)
    registry = NeuralRegistry(bp)
    registry.record("vt", 1.5)
    assert resolve("e", 100.0, registry) == 2.0 * 1.5 + 0.5


def test_parse_empty_blueprint():
    bp = parse_blueprint("")
    assert bp.attachments == {} and bp.n_weights == 0


def test_parse_explicit_weights_round_trip():
    weights = [0.125, -3.5, 7.0, 0.0078125, 2.0, -1.0, 0.5, 1.25, -0.25, 0.75,
               1.0, 2.5, 3.75]
    bp = parse_blueprint(_friction_blueprint(weights=weights))
    assert bp.weights == weights
    again = parse_blueprint(serialize_blueprint(bp))
    assert again.weights == bp.weights
    assert again.attachments == bp.attachments


def test_parse_seeded_init_is_repeatable_and_small():
    a = parse_blueprint(_friction_blueprint(seed=123))
    b = parse_blueprint(_friction_blueprint(seed=123))
    assert a.weights == b.weights
    assert all(abs(w) <= 0.01 for w in a.weights)
    c = parse_blueprint(_friction_blueprint(seed=124))
    assert c.weights != a.weights


def test_parse_rejects_unknown_keys_with_location():
    text = 'attach "x" {\n  inputs = [a]\n  widht = [3]\n}'
    with pytest.raises(BlueprintError, match="line 3.*widht"):
        parse_blueprint(text)


def test_parse_rejects_weight_count_mismatch():
    with pytest.raises(BlueprintError, match="weights"):
        parse_blueprint(_friction_blueprint(weights=[1.0, 2.0]))


def test_parse_rejects_duplicates_and_malformed_widths():
    with pytest.raises(BlueprintError, match="duplicate"):
        parse_blueprint(_friction_blueprint(seed=1) + "\n" + _friction_blueprint(seed=2))
    with pytest.raises(BlueprintError, match="number"):
        parse_blueprint('attach "x" { inputs = [a]; hidden = [wide]; output = 1 }')


def test_weight_slice_pack_unpack_round_trip():
    text = (
        'attach "one" { inputs = [a]; hidden = [2]; output = 1; seed = 1 }\n'
        'attach "two" { inputs = [a, b]; output = 2; seed = 2 }\n'
    )
    bp = parse_blueprint(text)
    rebuilt = [0.0] * bp.n_weights
    for name in bp.attachments:
        sl = bp.weight_slice(name)
        rebuilt[sl] = bp.weights[sl]
    assert rebuilt == bp.weights
    assert bp.weight_slice("one").start == 0
    assert bp.weight_slice("two").stop == bp.n_weights


def test_input_normalization_applies_affine_transform():
    text = (
        'attach "e" { inputs = [a]; output = 1; replace = true;\n'
        "  input_shift = [2.0]; input_scale = [0.5]; weights = [1.0, 0.0] }"
    )
    bp = parse_blueprint(text)
    registry = NeuralRegistry(bp)
    registry.record("a", 6.0)
    assert resolve("e", 0.0, registry) == (6.0 - 2.0) * 0.5
