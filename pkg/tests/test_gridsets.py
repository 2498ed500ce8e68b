import numpy as np
import pytest

from hypctrl import gridsets as gs
from hypctrl import systems
from hypctrl.errors import DomainError, GridEmptyError
from hypctrl.systems import Box, ControlSequence

R = systems.henon_side_length()
SQUARE = Box([-R / 2, -R / 2], [R / 2, R / 2])
U0 = ControlSequence.constant([0.0, 0.0])


@pytest.fixture(scope="module")
def henon_lambda(henon):
    return gs.maximal_invariant(henon, [0.0, 0.0], SQUARE, 256, horizon=14)


def test_grid_basics():
    g = gs.GridSet.from_points(Box([0, 0], [1, 1]), 4, np.array([[0.1, 0.1], [0.9, 0.9]]))
    assert g.count == 2
    assert g.cell_volume == pytest.approx(1 / 16)
    assert g.contains(np.array([[0.1, 0.1], [0.5, 0.5]])).tolist() == [True, False]
    # distance: nearest occupied center minus half diagonal, clamped
    d = g.distance(np.array([[0.125, 0.125]]))
    assert d[0] == 0.0
    far = g.distance(np.array([[0.875, 0.125]]))
    assert far[0] == pytest.approx(0.75 - g.half_diagonal)
    with pytest.raises(DomainError):
        gs.GridSet.full(Box([0, 0], [1, 1]), 3)


def test_maximal_invariant_henon_nonempty(henon_lambda):
    assert not henon_lambda.is_empty
    centers = henon_lambda.centers()
    assert np.all(np.abs(centers) <= R / 2)
    # contains both fixed points
    fp, fm = systems.henon_fixed_points()
    assert henon_lambda.contains(fp[None, :])[0]
    assert henon_lambda.contains(fm[None, :])[0]


def test_maximal_invariant_monotone_in_horizon(henon):
    a = gs.maximal_invariant(henon, [0.0, 0.0], SQUARE, 128, horizon=1)
    b = gs.maximal_invariant(henon, [0.0, 0.0], SQUARE, 128, horizon=3)
    c = gs.maximal_invariant(henon, [0.0, 0.0], SQUARE, 128, horizon=10)
    assert c.issubset(b) and b.issubset(a)
    assert c.count < a.count


def test_maximal_invariant_monotone_in_resolution(henon):
    areas = []
    for res in (128, 256, 512):
        g = gs.maximal_invariant(henon, [0.0, 0.0], SQUARE, res, horizon=12)
        areas.append(g.volume)
    assert areas[0] > areas[1] > areas[2]


def test_maximal_invariant_linear_origin(toy):
    region = Box([-1, -1], [1, 1])
    g = gs.maximal_invariant(toy, [0.0, 0.0], region, 64, horizon=40)
    # shrinks to a small neighborhood of the unique bounded orbit at 0
    centers = g.centers()
    assert np.all(np.linalg.norm(centers, np.inf, axis=1) <= 3 * g.cell_widths.max())


def test_maximal_invariant_empty_region(henon):
    with pytest.raises(GridEmptyError):
        gs.maximal_invariant(henon, [0.0, 0.0], Box([10, 10], [11, 11]), 64, horizon=8)


def test_controlled_invariant_contains_lambda(henon, henon_lambda):
    q = gs.controlled_invariant(henon, SQUARE, 256, horizon=14)
    assert henon_lambda.issubset(q)
    assert q.count > henon_lambda.count


def test_controlled_invariant_monotone_in_eps():
    small = gs.controlled_invariant(systems.henon_planar(eps=0.04), SQUARE, 128, horizon=12)
    big = gs.controlled_invariant(systems.henon_planar(eps=0.08), SQUARE, 128, horizon=12)
    assert small.issubset(big)


def test_controlled_invariant_zero_eps_equals_maximal(henon):
    frozen = systems.henon_planar(eps=0.0)
    a = gs.controlled_invariant(frozen, SQUARE, 128, horizon=10)
    b = gs.maximal_invariant(frozen, [0.0, 0.0], SQUARE, 128, horizon=10)
    assert a.issubset(b) and b.issubset(a)


def test_fiber_tube_volume_single_step_matches_dilation(toy):
    region = Box([-1, -1], [1, 1])
    fiber = gs.GridSet.from_points(region, 64, np.zeros((1, 2)))
    eps = 0.5
    est = gs.fiber_tube_volume(toy, ControlSequence.constant([0.0, 0.0]), 1, eps, fiber, samples=200000, seed=1)
    # direct area of the dilated raster: disk of radius eps+halfdiag around the center, on a fine grid
    c = fiber.centers()[0]
    xs = np.linspace(c[0] - 1, c[0] + 1, 801)
    ys = np.linspace(c[1] - 1, c[1] + 1, 801)
    X, Y = np.meshgrid(xs, ys)
    inside = np.hypot(X - c[0], Y - c[1]) <= eps + fiber.half_diagonal
    direct = inside.mean() * 4.0
    assert abs(est.value - direct) <= 3 * est.stderr + 1e-3


def test_fiber_tube_volume_linear_slope(toy):
    region = Box([-1, -1], [1, 1])
    fiber = gs.GridSet.from_points(region, 256, np.zeros((1, 2)))
    vols = []
    taus = range(3, 9)  # the half-diagonal offset distorts the very first steps
    for tau in taus:
        est = gs.fiber_tube_volume(toy, ControlSequence.constant([0.0, 0.0]), tau, 1.0, fiber, samples=400000, seed=2)
        vols.append(est.value)
    lv = np.log2(vols)
    slopes = np.diff(lv)
    assert np.allclose(slopes, -1.0, atol=0.06)


def test_fiber_tube_volume_monotone(toy):
    region = Box([-1, -1], [1, 1])
    fiber = gs.GridSet.from_points(region, 64, np.zeros((1, 2)))
    u = ControlSequence.constant([0.0, 0.0])
    v_tau = [gs.fiber_tube_volume(toy, u, t, 0.8, fiber, samples=100000, seed=3).value for t in (1, 3, 5)]
    assert v_tau[0] >= v_tau[1] >= v_tau[2]
    v_eps = [gs.fiber_tube_volume(toy, u, 3, e, fiber, samples=100000, seed=3).value for e in (0.4, 0.8)]
    assert v_eps[0] <= v_eps[1]


def test_fiber_tube_zero_hits_flag(toy):
    region = Box([-1, -1], [1, 1])
    fiber = gs.GridSet.from_points(region, 64, np.zeros((1, 2)))
    est = gs.fiber_tube_volume(toy, ControlSequence.constant([0.0, 0.0]), 40, 0.05, fiber, samples=2000, seed=4)
    assert est.zero_hits and est.value == 0.0


def test_regularity_rank_planar_vs_scalar(henon, henon_scalar_sys):
    x = np.array([0.7, -0.2])
    assert gs.regularity_rank(henon, x, np.zeros((1, 2))) == 2
    assert gs.regularity_rank(henon_scalar_sys, x, np.zeros((1, 1))) == 1
    rng = np.random.default_rng(0)
    for _ in range(5):
        xx = rng.uniform(-2, 2, 2)
        assert gs.regularity_rank(henon_scalar_sys, xx, np.zeros((2, 1))) == 2


def test_regularity_rank_nondecreasing(henon_scalar_sys):
    x = np.array([1.1, 0.4])
    ranks = [gs.regularity_rank(henon_scalar_sys, x, np.zeros((t, 1))) for t in (1, 2, 3)]
    assert ranks == sorted(ranks)


def test_controlled_chain_trivial_and_exact(toy):
    region = Box([-1, -1], [1, 1])
    grid = gs.GridSet.full(region, 32)
    x = np.array([0.1, 0.0])
    chain = gs.controlled_chain(toy, grid, x, x, eps=0.1)
    assert len(chain) == 1 and chain[0].jump == 0.0
    # exact steering in one step: u = -A x lands on 0 with zero jump
    chain = gs.controlled_chain(toy, grid, x, np.zeros(2), eps=0.0)
    assert len(chain) == 2
    assert chain[0].jump <= 1e-12
    assert np.allclose(chain[0].control, [-0.2, 0.0], atol=1e-9)


def test_controlled_chain_on_henon_raster(henon, henon_lambda):
    rng = np.random.default_rng(7)
    centers = henon_lambda.centers()
    eps = 2.0 * (2.0 * henon_lambda.half_diagonal)
    a, b = centers[rng.integers(len(centers))], centers[rng.integers(len(centers))]
    chain = gs.controlled_chain(henon, henon_lambda, a, b, eps)
    # validate the chain invariant directly
    for s0, s1 in zip(chain[:-1], chain[1:]):
        assert s0.jump <= eps + 1e-9
        step = henon.forward(s0.point, s0.control)
        assert np.linalg.norm(step - s1.point) == pytest.approx(s0.jump, abs=1e-12)


def test_chain_not_connected(toy):
    region = Box([-1, -1], [1, 1])
    mask = np.zeros((32, 32), bool)
    mask[0, 0] = True
    mask[31, 31] = True
    grid = gs.GridSet(region, 32, mask)
    sys0 = systems.linear_toy(bound=1e-6)
    with pytest.raises(DomainError):
        gs.controlled_chain(sys0, grid, grid.centers()[0], grid.centers()[1], eps=1e-4)


def test_pgm_svg_export(tmp_path):
    g = gs.GridSet.from_points(Box([0, 0], [1, 1]), 2, np.array([[0.25, 0.75]]))
    pgm = tmp_path / "g.pgm"
    g.to_pgm(pgm)
    data = pgm.read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n")
    pixels = data.split(b"255\n", 1)[1]
    assert pixels.count(b"\x00") == 1 and len(pixels) == 4
    svg = tmp_path / "g.svg"
    g.to_svg(svg)
    text = svg.read_text()
    assert text.count("<rect") == 2  # background + one cell
    meta = g.metadata()
    assert meta["cells"] == 1 and meta["resolution"] == 2
