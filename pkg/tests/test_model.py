import numpy as np
import pytest
from numpy.testing import assert_allclose

from tensor_completion.errors import DiagramError, DimensionMismatchError
from tensor_completion.model import TuckerWrappedModel, orthonormality_defect
from tensor_completion.tensor_core import multi_mode_product
from tensor_completion.tn_graph import make_topology, node_set_from


def _orthonormal(rows, cols, rng):
    return np.linalg.qr(rng.standard_normal((rows, cols)))[0]


def test_dense_tensor_is_the_tucker_product_of_the_contracted_core():
    rng = np.random.default_rng(0)
    diagram = make_topology("tt", 3, (2, 2), (2, 3, 2))
    nodes = node_set_from(
        diagram, [rng.standard_normal((2, 2)), rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 2))]
    )
    factors = tuple(_orthonormal(size, r, rng) for size, r in zip((4, 5, 6), (2, 3, 2)))

    model = TuckerWrappedModel(factors, diagram, nodes)

    expected = multi_mode_product(np.einsum("ia,ajb,bk->ijk", *nodes.tensors), factors)
    assert model.dims == (4, 5, 6)
    assert model.ranks == (2, 3, 2)
    assert_allclose(model.to_dense(), expected, rtol=1e-12)
    assert model.max_orthonormality_defect() < 1e-12


def test_factor_ranks_must_match_outgoing_weights():
    rng = np.random.default_rng(1)
    diagram = make_topology("single", 2, (), (2, 2))
    nodes = node_set_from(diagram, [np.zeros((2, 2))])

    with pytest.raises(DimensionMismatchError):
        TuckerWrappedModel((_orthonormal(4, 3, rng), _orthonormal(4, 2, rng)), diagram, nodes)


def test_node_set_from_validates_shapes():
    diagram = make_topology("single", 2, (), (2, 2))

    with pytest.raises(DiagramError):
        node_set_from(diagram, [np.zeros((2, 3))])


def test_with_factor_keeps_the_cached_core():
    rng = np.random.default_rng(2)
    diagram = make_topology("single", 2, (), (2, 2))
    model = TuckerWrappedModel(
        (_orthonormal(3, 2, rng), _orthonormal(3, 2, rng)), diagram, node_set_from(diagram, [np.eye(2)])
    ).recomputed()
    replacement = _orthonormal(3, 2, rng)

    updated = model.with_factor(0, replacement)

    assert updated.core is model.core
    assert_allclose(updated.to_dense(), replacement @ model.factors[1].T)


def test_orthonormality_defect_measures_distance_from_identity_gram():
    assert orthonormality_defect(np.eye(3)[:, :2]) == pytest.approx(0.0)
    assert orthonormality_defect(2.0 * np.eye(3)[:, :2]) == pytest.approx(3.0)
