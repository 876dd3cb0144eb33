import numpy as np
import pytest

from geomfilter import examples
from geomfilter.errors import UnknownSystem, ValidationError
from geomfilter.examples import PROVENANCE, REGISTRY, Reference


def test_registry_lists_every_system():
    ids = {e["id"] for e in examples.list_systems()}
    assert ids == set(REGISTRY)
    assert {"heisenberg", "torus", "bessel", "sphere_gradient", "linear_filter_1d", "planar_flow_redundant",
            "symmetric_sphere"} <= ids


@pytest.mark.parametrize("system_id", sorted(REGISTRY))
def test_systems_construct_and_validate(system_id):
    s = examples.get(system_id, validate=True)
    assert s.id == system_id
    for name, ref in s.references.items():
        assert ref.provenance in PROVENANCE and ref.citation


def test_unknown_system_and_parameters():
    with pytest.raises(UnknownSystem):
        examples.get("klein_bottle")
    with pytest.raises(ValidationError):
        examples.get("torus", {"beta": 1.0})
    with pytest.raises(ValidationError):
        examples.get("torus", {"alpha": 1.0})
    with pytest.raises(ValidationError):
        examples.get("linear_filter_1d", {"q": 0.0})


def test_reference_needs_citation_and_tag():
    with pytest.raises(ValidationError):
        Reference(1.0, "guess", "somewhere")
    with pytest.raises(ValidationError):
        Reference(1.0, "analytic", "")


def test_torus_references_are_consistent():
    s = examples.get("torus", {"alpha": 0.4})
    t = np.tan(0.4)
    assert s.reference("BV_yy_coefficient") == pytest.approx(0.5 * (1 - t * t))
    assert s.reference("conditional_variance_rate") == pytest.approx(2 * s.reference("BV_yy_coefficient"))


def test_symmetric_sphere_reference():
    from geomfilter.weitzenboeck import ExteriorBasis, casimir, lambda_wedge
    s = examples.get("symmetric_sphere", {"n": 4, "k": 2})
    G = s.extras["group"]
    lw = lambda_wedge(s.reference("alpha"), s.reference("beta"), G.basis, ExteriorBasis(4, 2))
    assert np.allclose(np.linalg.eigvalsh(lw.matrix), s.reference("lambda"), atol=1e-12)
    assert casimir(4, 2) == pytest.approx(s.reference("casimir"), abs=1e-12)
