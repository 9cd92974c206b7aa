import numpy as np
import pytest
from scipy.linalg import block_diag

from shsnet.compose import (CompositionWeights, assemble_X, check_composition, check_condition_13,
                            compose_ssf, composed_alpha, compute_Mhat)
from shsnet.model import PAPER_MHAT, cyclic_topology, fully_connected_topology, lift_matrix

# least-squares residual of the cyclic topology, computed before the build by an
# independent normal-equation solve of H^T H Mhat = H^T M2 H
LS_RESIDUAL_M2 = 3.411744421846396
FIXED_RESIDUAL_M2 = 29.597297173897484

H = lift_matrix([50, 50, 50])
I150 = np.eye(150)


def test_mhat_fully_connected_matches_closed_form():
    res = compute_Mhat(I150, fully_connected_topology(150), H, H)
    assert np.max(np.abs(res.Mhat - PAPER_MHAT[0])) <= 1e-9
    assert res.residual <= 1e-9


def test_mhat_cyclic_residual_pinned():
    res = compute_Mhat(I150, cyclic_topology(150), H, H)
    assert res.residual == pytest.approx(LS_RESIDUAL_M2, rel=1e-9)
    np.testing.assert_allclose(res.Mhat, PAPER_MHAT[1] / 50, atol=1e-12)


def test_fixed_cyclic_abstraction_residual():
    R = cyclic_topology(150) @ H - H @ PAPER_MHAT[1]
    assert np.linalg.norm(R) == pytest.approx(FIXED_RESIDUAL_M2, rel=1e-12)


def test_normal_equations_oracle():
    M2 = cyclic_topology(150)
    Mhat = np.linalg.solve(H.T @ H, H.T @ M2 @ H)
    assert np.linalg.norm(M2 @ H - H @ Mhat) == pytest.approx(np.sqrt(11.64), rel=1e-12)


def test_rank_deficient_What():
    with pytest.raises(ValueError, match="rank"):
        compute_Mhat(np.eye(4), np.eye(4), np.ones((4, 2)), np.ones((4, 2)))


@pytest.mark.parametrize("M, spectrum", [
    (fully_connected_topology(150), np.r_[np.full(149, -2.0), 0.0]),
    (cyclic_topology(150), 2 * (-2 + 2 * np.cos(2 * np.pi * np.arange(150) / 150))),
])
def test_condition_13_circulant_oracle(paper, M, spectrum):
    X = assemble_X(np.ones(3), paper.certificates)
    lam, ok = check_condition_13(I150, M, X)
    assert ok and lam <= 1e-9
    # with X = [[0, I], [I, 0]] the congruence product is M + M^T = 2M, a circulant
    L = np.vstack([M, I150])
    got = np.linalg.eigvalsh(L.T @ X @ L)
    np.testing.assert_allclose(np.sort(got), np.sort(spectrum), atol=1e-9)
    assert np.max(spectrum) == pytest.approx(0.0, abs=1e-12)


def test_condition_13_detects_positive():
    X = block_diag(np.eye(2), np.eye(2))
    lam, ok = check_condition_13(np.eye(2), np.eye(2), X)
    assert not ok and lam == pytest.approx(2.0)


def test_assemble_X_interleaves(paper):
    X = assemble_X([1.0, 2.0, 3.0], paper.certificates)
    assert X.shape == (300, 300)
    np.testing.assert_array_equal(X[:150, 150:], np.diag(np.repeat([1.0, 2.0, 3.0], 50)))
    assert not X[:150, :150].any()


def test_check_composition_report(paper, tmp_path):
    rep = check_composition(CompositionWeights(paper.weights), paper.certificates, paper.concrete.topology.matrices)
    assert rep.modes[0].passed and rep.modes[1].eig_pass and not rep.modes[1].residual_pass
    assert not rep.passed
    assert "mode 2" in str(rep)
    rep.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("mode,max_eigenvalue")


def test_compose_ssf(paper, rng):
    w = CompositionWeights(paper.weights)
    rep = check_composition(w, paper.certificates, paper.concrete.topology.matrices)
    with pytest.raises(ValueError):
        compose_ssf(w, paper.certificates, rep)
    with pytest.warns(UserWarning):
        cert = compose_ssf(w, paper.certificates, rep, allow_failed=True)
    x, xh = rng.normal(size=150), rng.normal(size=3)
    direct = sum(paper.certificates[i].value(x[50 * i:50 * i + 50], xh[i:i + 1]) for i in range(3))
    assert cert.value(x, xh, 2)[0] == pytest.approx(float(np.squeeze(direct)))
    assert cert.kappa == pytest.approx(1.301) and cert.alpha_coeff == 1.0


def test_composed_alpha_weights(paper):
    w = CompositionWeights(np.array([[1.0, 2.0], [0.5, 3.0], [4.0, 1.0]]))
    assert composed_alpha(w, paper.certificates) == 0.5


def test_weights_positive():
    with pytest.raises(ValueError):
        CompositionWeights(np.array([[1.0, 0.0]]))
