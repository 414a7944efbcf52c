import numpy as np
import pytest

from dppwalk import corrector as cor
from dppwalk.env import LatticeWindow, ProcessSpec, full_lattice, sample
from dppwalk.heatkernel import site_index, transition_matrix
from dppwalk.walk import TransitionRule, run_ensemble_quenched


@pytest.fixture(scope="module")
def chain135():
    env = sample(ProcessSpec.explicit([(0,), (3,), (5,)]), LatticeWindow((8,)), seed=0)
    return site_index(env)


@pytest.fixture(scope="module")
def bern32():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((32, 32)), seed=5)
    return cor.assemble_corrector(env, tol=1e-10)


def test_drift_hand_values(chain135):
    V = cor.drift(chain135)
    by_coord = {int(chain135.coords[r][0]): V[r, 0] for r in range(3)}
    assert by_coord[0] == 0.0          # +3 and -3 cancel
    assert by_coord[3] == pytest.approx(-0.5)   # (2 - 3) / 2
    assert by_coord[-3] == pytest.approx(0.5)   # site 5 seen as -3


def test_drift_full_lattice_zero():
    si = site_index(full_lattice(LatticeWindow((8, 8))))
    assert not cor.drift(si).any()


def test_solve_zero_and_constant_fields(chain135):
    zero = np.zeros((3, 1))
    psi, res = cor.solve_psi(chain135, zero, 0.25)
    assert not psi.any() and res == 0.0
    const = np.full((3, 1), 2.0)
    psi, _ = cor.solve_psi(chain135, const, 0.25, tol=1e-12)
    assert np.allclose(psi, 2.0 / 0.25, atol=1e-10)  # kernel fixes constants


def test_solver_matches_hand_elimination(chain135):
    V = cor.drift(chain135)
    eps = 0.1
    T = transition_matrix(chain135).toarray()
    hand = np.linalg.solve((1 + eps) * np.eye(3) - T, V)
    psi, res = cor.solve_psi(chain135, V, eps, tol=1e-12)
    assert np.abs(psi - hand).max() < 1e-10
    assert res <= 1e-12


def test_solver_rejects_bad_epsilon(chain135):
    with pytest.raises(ValueError):
        cor.solve_psi(chain135, np.zeros((3, 1)), 0.0)


def test_kernel_symmetric_contraction(bern32):
    T = transition_matrix(bern32.si).toarray()
    assert np.allclose(T, T.T)
    rng = np.random.default_rng(1)
    for _ in range(5):
        f = rng.standard_normal(T.shape[0])
        assert np.linalg.norm(T @ f) <= np.linalg.norm(f) + 1e-12


def test_full_lattice_degeneracy():
    fld = cor.assemble_corrector(full_lattice(LatticeWindow((16, 16))),
                                 schedule=(0.25, 0.125), tol=1e-12)
    assert not fld.psi.any()
    assert not fld.chi.any()
    assert cor.harmonicity_residual(fld.si, fld.chi, fld.V) == 0.0


def test_schedule_must_decrease():
    env = full_lattice(LatticeWindow((8, 8)))
    with pytest.raises(ValueError):
        cor.assemble_corrector(env, schedule=(0.1, 0.2))


def test_eps_norm_series_decreasing(bern32):
    assert (np.diff(bern32.eps_norm_series) < 0).all()


def test_solver_residuals_within_tol(bern32):
    assert max(bern32.solver_residuals) <= 1e-10


def test_chi_normalized_at_origin(bern32):
    assert not bern32.chi[bern32.si.origin_row].any()


def test_harmonicity_equals_eps_psi(bern32):
    si = bern32.si
    means = cor.conditional_increment_means(si, bern32.chi, bern32.V)
    assert np.allclose(means, bern32.eps_final * bern32.psi, atol=1e-8)


def test_harmonicity_decreases_with_eps():
    env = sample(ProcessSpec.bernoulli(0.5), LatticeWindow((24, 24)), seed=2)
    si = site_index(env)
    V = cor.drift(si)
    res = []
    psi = None
    for eps in (2.0 ** -3, 2.0 ** -6, 2.0 ** -9, 2.0 ** -12):
        psi, _ = cor.solve_psi(si, V, eps, tol=1e-11, x0=psi)
        chi = psi - psi[si.origin_row]
        res.append(cor.harmonicity_residual(si, chi, V))
    assert all(b < a for a, b in zip(res, res[1:]))


def test_path_sums_telescope(bern32):
    si = bern32.si
    # closed loop: +x then back -x returns to the start with zero sum
    total, end = cor.path_chi(si, bern32.psi, si.origin_row, [0, 1])
    assert end == si.origin_row
    assert np.abs(total).max() < 1e-12
    # an open path reproduces the chi difference exactly
    total, end = cor.path_chi(si, bern32.psi, si.origin_row, [0, 2, 0])
    assert np.allclose(total, bern32.chi[end] - bern32.chi[si.origin_row],
                       atol=1e-12)


def test_path_independence_two_routes():
    # on the full lattice +x+y and +y+x reach the same vertex
    fld = cor.assemble_corrector(full_lattice(LatticeWindow((8, 8))),
                                 schedule=(0.25, 0.125), tol=1e-12)
    si = fld.si
    a, ra = cor.path_chi(si, fld.psi, si.origin_row, [0, 2])
    b, rb = cor.path_chi(si, fld.psi, si.origin_row, [2, 0])
    assert ra == rb
    assert np.abs(a - b).max() < 1e-8


def test_site_average_D_full_lattice():
    si = site_index(full_lattice(LatticeWindow((10, 10))))
    D = cor.site_average_D(si, np.zeros((100, 2)))
    assert np.allclose(D, 0.5 * np.eye(2), atol=1e-14)


def test_site_average_D_symmetric_psd(bern32):
    D = cor.site_average_D(bern32.si, bern32.chi)
    assert np.allclose(D, D.T)
    assert (np.linalg.eigvalsh(D) >= 0).all()


def test_martingale_full_lattice_is_raw_walk():
    env = full_lattice(LatticeWindow((32, 32)))
    fld = cor.assemble_corrector(env, schedule=(0.25, 0.125), tol=1e-12)
    ens = run_ensemble_quenched(env, TransitionRule(), 100, 20, 4)
    finals = cor.martingale_finals(fld.si, fld.chi, ens.final)
    assert np.array_equal(finals, ens.final)


def test_martingale_check_bundle(bern32):
    env = bern32.si.env
    ens = run_ensemble_quenched(env, TransitionRule(), 64, 200, 9)
    ms = cor.martingale_check(bern32, ens.final, 64)
    assert ms.max_conditional_mean <= cor.harmonicity_residual(
        bern32.si, bern32.chi, bern32.V) + 1e-15
    assert ms.D_traj.shape == (2, 2)
    assert ms.finals.shape == (200, 2)


def test_sublinearity_reports(bern32):
    ax = cor.sublinearity_axis(bern32.si, bern32.chi)
    assert (ax.chi_over_k >= 0).all()
    assert len(ax.k) > 0
    box = cor.sublinearity_box(bern32.si, bern32.chi, n=8)
    assert box.fractions.shape == box.eps_grid.shape
    assert ((0 <= box.fractions) & (box.fractions <= 1)).all()
    # thresholds grow with eps, so fractions are nonincreasing
    assert (np.diff(box.fractions) <= 0).all()


def test_sublinearity_full_lattice_zero():
    fld = cor.assemble_corrector(full_lattice(LatticeWindow((16, 16))),
                                 schedule=(0.25, 0.125), tol=1e-12)
    ax = cor.sublinearity_axis(fld.si, fld.chi)
    assert not ax.chi_over_k.any()
    box = cor.sublinearity_box(fld.si, fld.chi, n=4)
    assert not box.fractions.any()


def test_corrector_csv_and_diagnostics(bern32):
    lines = bern32.to_csv().strip().split("\n")
    assert lines[0] == "x0,x1,chi0,chi1,psi0,psi1"
    assert len(lines) == bern32.chi.shape[0] + 1
    diag = bern32.diagnostics()
    assert diag["eps_final"] == 2.0 ** -14
    assert len(diag["eps_norm_series"]) == len(diag["schedule"])
