import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import quad

from saimc.geometry import dir_of, psi_of
from saimc.radiosity import (assemble_Q, build_sai_tables, deterministic_estimate, eval_importance, sai_pdf, sai_sample,
                             solve_phi, source_cells, surface_adjoint)
from saimc.scenarios import DETECTOR, preset

PI = math.pi


def flat_closed_form():
    """Analog P[D] of the flat scene: uniform light on |x| < 2.5, one Lambertian bounce to the wall detector."""
    def sin_to(x, y):
        return (PI - x) / math.hypot(PI - x, y - 2)
    a, b = DETECTOR
    return quad(lambda x: 0.5 * (sin_to(x, a) - sin_to(x, b)) / 5, -2.5, 2.5, epsabs=1e-14)[0]


@pytest.mark.parametrize("name", ["flat", "cos3", "circle"])
def test_direction_pdf_total_identity(name):
    fld = surface_adjoint(preset(name, 0.05))
    assert fld.identity_error() < 1e-12


def test_rows_only_where_albedo(cos3):
    Q, cells = assemble_Q(cos3)
    rows = np.flatnonzero(np.diff(Q.indptr) > 0)
    assert np.all(cos3.surf.seg_alpha[rows] > 0)
    for i in rows[::17]:
        sl = cells.row(i)
        assert cells.lo[sl][0] == -PI / 2 and cells.hi[sl][-1] == PI / 2
        assert np.all(np.diff(cells.lo[sl]) >= 0)


def test_circle_row_sums_equal_albedo(circle):
    fld = surface_adjoint(circle)
    wall = circle.surf.seg_alpha > 0
    sums = np.asarray(fld.Q.sum(axis=1)).ravel()[wall]
    assert np.allclose(sums, 0.5, atol=2e-3)


def test_circle_jacobians_coincide(circle):
    Qe, _ = assemble_Q(circle, "exact")
    Qp, _ = assemble_Q(circle, "observer")
    assert abs(Qe - Qp).max() < 1e-12


def test_jacobians_differ_on_cos3(cos3):
    Qe, _ = assemble_Q(cos3, "exact")
    Qp, _ = assemble_Q(cos3, "observer")
    assert abs(Qe - Qp).max() > 1e-3
    with pytest.raises(ValueError):
        assemble_Q(cos3, "bogus")


def test_neumann_partial_sums_monotone(cos3):
    fld = surface_adjoint(cos3)
    prev = np.zeros(cos3.mesh.n)
    assert np.array_equal(solve_phi(fld.Q, fld.rg, "neumann", k=1), fld.rg)
    for k in (1, 2, 4, 8, 16):
        cur = solve_phi(fld.Q, fld.rg, "neumann", k=k)
        assert np.all(cur >= prev - 1e-15)
        assert np.all(cur <= fld.phi + 1e-12)
        prev = cur
    full = solve_phi(fld.Q, fld.rg, "neumann")
    assert np.max(np.abs(full - fld.phi)) < 1e-12


def test_solve_phi_small_system():
    Q = sp.csr_matrix(np.array([[0.0, 0.5, 0.0], [0.25, 0.0, 0.25], [0.0, 0.0, 0.0]]))
    rg = np.array([0.0, 0.0, 1.0])
    phi = solve_phi(Q, rg)
    ref = np.linalg.solve(np.eye(3) - Q.toarray(), rg)
    assert np.allclose(phi, ref, rtol=1e-14)
    with pytest.raises(ValueError):
        solve_phi(-Q, rg)
    with pytest.raises(ValueError):
        solve_phi(Q, rg[:2])


def test_flat_deterministic_matches_closed_form(flat_tables):
    ref = flat_closed_form()
    assert deterministic_estimate(flat_tables) == pytest.approx(ref, rel=2e-3)


def test_source_cells_cover_source(cos3):
    cells = source_cells(cos3)
    total = sum(c[5] for c in cells)
    assert total == pytest.approx(sum(cos3.profile.pieces[k].arc_length() for k in cos3.source_pieces), rel=1e-12)


def test_sai_pdf_integrates_to_continuation(cos3_tables):
    T = cos3_tables.arrays
    G = cos3_tables.field.scene.mesh.arrays
    rows = np.flatnonzero(T.cont > 0)
    for i in rows[::23]:
        nx, ny = G.nrm[i]
        tot = sum(quad(lambda p: sai_pdf(G, T, i, nx, ny, *dir_of(nx, ny, p)), lo, hi)[0]
                  for lo, hi in zip(T.lo[T.row_ptr[i]:T.row_ptr[i + 1]], T.hi[T.row_ptr[i]:T.row_ptr[i + 1]]))
        assert tot == pytest.approx(T.cont[i], rel=1e-9)


def test_sai_sample_density_consistent(cos3_tables):
    T = cos3_tables.arrays
    fld = cos3_tables.field
    G = fld.scene.mesh.arrays
    rng = np.random.default_rng(0)
    for i in np.flatnonzero(T.cont > 0)[::11]:
        # tilt the normal slightly to exercise the admissible-interval truncation
        th = math.atan2(G.nrm[i, 1], G.nrm[i, 0]) + 0.05
        nx, ny = math.cos(th), math.sin(th)
        for _ in range(5):
            vx, vy, dens, _ = sai_sample(G, T, i, nx, ny, rng)
            if dens > 0:
                assert -(nx * vx + ny * vy) > -1e-12
                assert sai_pdf(G, T, i, nx, ny, vx, vy) == pytest.approx(dens, rel=1e-12)


def test_dead_rows_reported(cos3):
    fld = surface_adjoint(cos3)
    d = fld.diagnostics
    assert d["n_segments"] == cos3.mesh.n
    assert d["dead_rows"] == int(np.sum((cos3.surf.seg_alpha > 0) & (fld.phi <= 0)))
    assert d["dead_rows"] > 0  # the far slope of the mountain cannot reach the detector


def test_importance_lookup(flat):
    fld = surface_adjoint(flat)
    det = flat.mesh.segments_of("detector")[0]
    assert eval_importance(fld, *flat.mesh.mid[det]) == 1.0
    j = flat.mesh.segments_of("ground")[40]
    x, y = flat.mesh.mid[j]
    assert eval_importance(fld, x, y) == fld.phi[j]
    assert eval_importance(fld, 0.0, 3.0, 1.0, 0.0, which="outgoing") == 0.0  # hits the wall below the detector
    with pytest.raises(ValueError):
        eval_importance(fld, x, y, which="sideways")


def test_tables_validation(flat):
    fld = surface_adjoint(flat)
    with pytest.raises(ValueError):
        build_sai_tables(fld, "spin")
    tb = build_sai_tables(fld, "exact")
    assert tb.estimate == pytest.approx(build_sai_tables(fld).estimate)


def test_adjoint_csv(tmp_path, flat):
    fld = surface_adjoint(flat)
    p = tmp_path / "phi.csv"
    fld.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "j,x,y,phi"
    assert len(lines) == flat.mesh.n + 1
    assert float(lines[1 + 5].split(",")[3]) == fld.phi[5]
