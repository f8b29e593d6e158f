"""Case parsing, the DC measurement matrix, and measurement synthesis."""

import numpy as np
import pytest

import helpers
from fdialab import grid


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def test_parse_native_three_bus():
    case = grid.parse_case(helpers.THREE_BUS_NATIVE)
    assert case.name == "toy3"
    assert case.m == 3
    assert case.n == 2
    assert case.reference_bus == 1
    assert case.state_bus_ids == (2, 3)
    assert [(b.from_bus, b.to_bus, b.reactance) for b in case.branches] == [
        (1, 2, 0.5),
        (2, 3, 0.25),
        (1, 3, 0.2),
    ]


def test_parse_native_two_branches_still_connected():
    doc = helpers.THREE_BUS_NATIVE.replace('    {"from": 2, "to": 3, "x": 0.25},\n', "")
    case = grid.parse_case(doc)
    assert case.m == 2
    assert case.n == 2


def test_parse_matpower_subset_14_bus(case14):
    assert len(case14.buses) == 14
    assert len(case14.branches) == 20
    assert case14.m == 20
    assert case14.n == 13
    assert case14.reference_bus == 1


def test_parse_sniffs_format():
    native = grid.parse_case(helpers.THREE_BUS_NATIVE, fmt=None)
    assert native.m == 3
    mp = "mpc.bus = [\n1 3;\n2 1;\n];\nmpc.branch = [\n1 2 0.0 0.5;\n];"
    case = grid.parse_case(mp, fmt=None, name="tiny")
    assert case.reference_bus == 1
    assert case.branches[0].reactance == 0.5


def test_parse_matpower_ignores_comments_and_extra_columns():
    mp = (
        "% a comment line\n"
        "mpc.bus = [\n"
        "1 3 0.0 1.1; % trailing comment\n"
        "2 1 0.0 1.2;\n"
        "];\n"
        "mpc.branch = [\n"
        "1 2 0.01 0.25 0.0 99 99 99;\n"
        "];\n"
    )
    case = grid.parse_case(mp, fmt="matpower-subset")
    assert case.m == 1
    assert case.branches[0].reactance == 0.25


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d.replace('"ref": true', '"ref": false'), "no reference bus"),
        (lambda d: d.replace('{"id": 3, "ref": false', '{"id": 2, "ref": false'), "duplicate"),
        (lambda d: d.replace('"x": 0.25', '"x": -0.25'), "nonpositive reactance"),
        (lambda d: d.replace('"to": 3, "x": 0.25', '"to": 9, "x": 0.25'), "unknown bus"),
    ],
)
def test_parse_structural_errors(mutate, message):
    with pytest.raises(grid.CaseFormatError, match=message):
        grid.parse_case(mutate(helpers.THREE_BUS_NATIVE))


def test_parse_disconnected_case_rejected():
    doc = """
    {
      "name": "split",
      "buses": [
        {"id": 1, "ref": true}, {"id": 2}, {"id": 3}, {"id": 4}
      ],
      "branches": [
        {"from": 1, "to": 2, "x": 0.5},
        {"from": 3, "to": 4, "x": 0.5}
      ]
    }
    """
    with pytest.raises(grid.CaseFormatError, match="disconnected"):
        grid.parse_case(doc)


def test_parse_error_carries_location():
    with pytest.raises(grid.CaseFormatError, match=r"line"):
        grid.parse_case('{"name": "broken", "buses": [', fmt="native-json")
    bad = "mpc.bus = [\n1 3;\n];\nmpc.branch = [\n1 oops 0.0 0.5;\n];"
    with pytest.raises(grid.CaseFormatError, match="oops"):
        grid.parse_case(bad, fmt="matpower-subset")


def test_serialize_round_trip(case3, case14):
    for case in (case3, case14):
        again = grid.parse_case(grid.serialize_case(case), name=case.name)
        assert again == case


def test_load_bundled_unknown_name():
    with pytest.raises(grid.CaseFormatError, match="no bundled case"):
        grid.load_bundled_case("case9000")


# ---------------------------------------------------------------------------
# H construction
# ---------------------------------------------------------------------------


def test_build_h_three_bus_hand_oracle(case3, h3):
    # rows are branches 1-2 (x=.5), 2-3 (x=.25), 1-3 (x=.2); columns buses 2, 3
    expected = np.array([[-2.0, 0.0], [4.0, -4.0], [0.0, -5.0]])
    assert np.array_equal(h3, expected)


def test_build_h_single_branch():
    doc = """
    {"name": "pair",
     "buses": [{"id": 1, "ref": true}, {"id": 2}],
     "branches": [{"from": 1, "to": 2, "x": 1.0}]}
    """
    h = grid.build_h(grid.parse_case(doc))
    assert np.array_equal(h, np.array([[-1.0]]))


def test_build_h_118_bus_shape_and_rank(h118):
    assert h118.shape == (186, 117)
    assert np.linalg.matrix_rank(h118) == 117


def test_118_bus_m_minus_n_is_69(case118):
    assert case118.m - case118.n == 69


def test_build_h_row_sums_zero_off_reference(case118, h118):
    ref = case118.reference_bus
    for row, br in enumerate(case118.branches):
        if ref not in (br.from_bus, br.to_bus):
            assert h118[row].sum() == pytest.approx(0.0, abs=1e-12)


def test_column_space_vectors_have_zero_residual(h118):
    rng = np.random.default_rng(7)
    for _ in range(5):
        c = rng.normal(size=h118.shape[1])
        z = h118 @ c
        assert helpers.lstsq_residual_norm(h118, z) <= 1e-9 * np.linalg.norm(z)


def test_build_h_rank_equals_n(h3, h14):
    assert np.linalg.matrix_rank(h3) == 2
    assert np.linalg.matrix_rank(h14) == 13


# ---------------------------------------------------------------------------
# state sampling and measurement
# ---------------------------------------------------------------------------


def test_sample_states_zero_spread_hits_center(case3):
    states = grid.sample_states(case3, count=4, spread=0.0, rng_seed=3)
    center = grid.operating_state(case3)
    assert np.array_equal(states, np.tile(center, (4, 1)))


def test_sample_states_deterministic(case3):
    a = grid.sample_states(case3, count=5, spread=0.1, rng_seed=42)
    b = grid.sample_states(case3, count=5, spread=0.1, rng_seed=42)
    assert np.array_equal(a, b)
    c = grid.sample_states(case3, count=5, spread=0.1, rng_seed=43)
    assert not np.array_equal(a, c)


def test_sample_states_mean_converges_to_center(case3):
    states = grid.sample_states(case3, count=10000, spread=0.1, rng_seed=0)
    center = grid.operating_state(case3)
    assert np.abs(states.mean(axis=0) - center).max() < 0.01


def test_sample_states_empty_and_validation(case3):
    assert grid.sample_states(case3, count=0, spread=0.1, rng_seed=0).shape == (0, case3.n)
    with pytest.raises(ValueError):
        grid.sample_states(case3, count=3, spread=-0.1, rng_seed=0)


def test_operating_state_deterministic_and_scaled(case14):
    s1 = grid.operating_state(case14)
    s2 = grid.operating_state(case14)
    assert np.array_equal(s1, s2)
    flows = grid.build_h(case14) @ s1
    assert np.abs(flows).mean() == pytest.approx(1.0)
    assert np.array_equal(grid.flow_center(case14), flows)


def test_measure_noise_free_is_hx(h3):
    x = np.array([0.1, 0.2])
    z = grid.measure(h3, x, noise_sigma=0.0, rng_seed=1)
    assert np.allclose(z, [-0.2, -0.4, -1.0], atol=1e-15)


def test_measure_noise_statistics(h3):
    x = np.zeros(2)
    z = grid.measure_batch(h3, np.tile(x, (10000, 1)), noise_sigma=0.01, rng_seed=5)
    stds = z.std(axis=0)
    assert np.all(np.abs(stds - 0.01) < 0.001)


def test_measure_rejects_negative_sigma(h3):
    with pytest.raises(ValueError):
        grid.measure(h3, np.zeros(2), noise_sigma=-1.0, rng_seed=0)
