import numpy as np
import pytest
import yaml

from shsnet.config import ScenarioError, load_scenario, paper_scenario_path
from shsnet.model import build_paper_example


def _doc():
    return yaml.safe_load(paper_scenario_path().read_text())


def _write(tmp_path, doc, name="s.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def test_paper_file_matches_builder(paper):
    sc = load_scenario(paper_scenario_path())
    for a, b in ((sc.concrete, paper.concrete), (sc.abstract, paper.abstract)):
        for Ma, Mb in zip(a.topology.matrices, b.topology.matrices):
            np.testing.assert_array_equal(Ma, Mb)
        np.testing.assert_array_equal(a.chain.Q, b.chain.Q)
        for s, t in zip(a.subsystems, b.subsystems):
            np.testing.assert_array_equal(s.A, t.A)
            np.testing.assert_array_equal(s.C1, t.C1)
            np.testing.assert_array_equal(s.diffusion[0], t.diffusion[0])
            np.testing.assert_array_equal(s.resets[0], t.resets[0])
    for c, d in zip(sc.certificates, paper.certificates):
        np.testing.assert_array_equal(c.Qs, d.Qs)
        assert c.kappa == d.kappa
    np.testing.assert_array_equal(sc.simulation.a, paper.simulation.a)
    np.testing.assert_array_equal(sc.simulation.ahat, paper.simulation.ahat)
    assert sc.chi == paper.chi and sc.synthesis == paper.synthesis


def test_explicit_abstract_topology(tmp_path):
    doc = _doc()
    doc["topology"]["abstract"] = [[[-2, 1, 1], [1, -2, 1], [1, 1, -2]]] * 2
    sc = load_scenario(_write(tmp_path, doc))
    assert sc.explicit_abstract
    np.testing.assert_array_equal(sc.abstract.topology[2],
                                  build_paper_example(abstract_topology="paper").abstract.topology[2])


@pytest.mark.parametrize("section", ["topology", "chain", "certificates", "interface"])
def test_missing_section_named(tmp_path, section):
    doc = _doc()
    del doc[section]
    with pytest.raises(ScenarioError, match=f"section '{section}'"):
        load_scenario(_write(tmp_path, doc))


def test_independent_noise_rejected(tmp_path):
    doc = _doc()
    doc["interface"]["noise"] = "independent"
    with pytest.raises(ScenarioError, match="interface"):
        load_scenario(_write(tmp_path, doc))


def test_unshared_channels_rejected(tmp_path):
    doc = _doc()
    doc["subsystems"]["abstract"][0]["rates"] = [5.0]
    with pytest.raises(ScenarioError, match="share noise"):
        load_scenario(_write(tmp_path, doc))


def test_bad_weight_shape(tmp_path):
    doc = _doc()
    doc["certificates"]["weights"] = [[1, 1]]
    with pytest.raises(ScenarioError, match="weights"):
        load_scenario(_write(tmp_path, doc))


def test_unknown_generator(tmp_path):
    doc = _doc()
    doc["topology"]["concrete"][0] = {"ring": 150}
    with pytest.raises(ScenarioError, match="ring"):
        load_scenario(_write(tmp_path, doc))


def test_wrong_initial_size(tmp_path):
    doc = _doc()
    doc["simulation"]["ahat"] = [0.0, 1.0]
    with pytest.raises(ScenarioError, match="simulation"):
        load_scenario(_write(tmp_path, doc))


def test_csv_matrix_and_vector(tmp_path):
    np.savetxt(tmp_path / "q.csv", [[-0.5, 0.5], [0.5, -0.5]], delimiter=",")
    np.savetxt(tmp_path / "ah.csv", [[-1.89, 4.1, 1.1]], delimiter=",")
    doc = _doc()
    doc["chain"]["Q"] = {"csv": "q.csv"}
    doc["simulation"]["ahat"] = {"csv": "ah.csv"}
    sc = load_scenario(_write(tmp_path, doc))
    np.testing.assert_allclose(sc.concrete.chain.Q, [[-0.5, 0.5], [0.5, -0.5]])
    np.testing.assert_allclose(sc.simulation.ahat, [-1.89, 4.1, 1.1])


def test_scale_generator(tmp_path):
    doc = _doc()
    doc["subsystems"]["concrete"][0]["diffusion"] = [{"identity": 50, "scale": 0.5}]
    doc["subsystems"]["abstract"][0]["diffusion"] = [[[0.5]]]
    sc = load_scenario(_write(tmp_path, doc))
    np.testing.assert_array_equal(sc.concrete.subsystems[0].diffusion[0], 0.5 * np.eye(50))
