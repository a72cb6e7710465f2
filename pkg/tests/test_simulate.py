import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dense_inla.errors import InvalidSize
from dense_inla.gmrf import InteractionType
from dense_inla.model import assemble_model
from dense_inla.oracle import sample_constrained_igmrf
from dense_inla.simulate import SimulationSpec, generate_lattice_graph, simulate_dataset


class TestLattice:
    def test_two_by_two(self):
        g = generate_lattice_graph(4)
        assert [len(nb) for nb in g.adjacency] == [2, 2, 2, 2]

    def test_single_edge(self):
        assert generate_lattice_graph(2).edges == [(0, 1)]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 150))
    def test_connected(self, m):
        g = generate_lattice_graph(m)
        assert g.n_nodes == m and g.n_components == 1

    def test_remainder_chained(self):
        # 7 = 2 x 3 grid plus one chained node
        g = generate_lattice_graph(7)
        assert g.adjacency[6] == (5,)

    def test_too_small(self):
        with pytest.raises(InvalidSize):
            generate_lattice_graph(1)


class TestSimulate:
    def test_thousand_cell_dimensions(self):
        sim = SimulationSpec(10, 100)
        data, truth = simulate_dataset(sim)
        assert data.y.size == 1000
        assert truth.size == 1221 == assemble_model(sim.model_spec()).s

    def test_same_seed_identical(self):
        a, ta = simulate_dataset(SimulationSpec(5, 6, seed=11))
        b, tb = simulate_dataset(SimulationSpec(5, 6, seed=11))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(ta, tb)
        _, tc = simulate_dataset(SimulationSpec(5, 6, seed=12))
        assert not np.array_equal(ta, tc)

    @pytest.mark.parametrize("kind", [1, 2, 3, 4])
    def test_constraints_hold(self, kind):
        sim = SimulationSpec(6, 5, InteractionType(kind, 2), seed=kind)
        _, truth = simulate_dataset(sim)
        C = assemble_model(sim.model_spec()).constraints
        assert np.abs(C @ truth).max() <= 1e-8

    def test_degenerate_precisions(self):
        sim = SimulationSpec(4, 4, precisions=(1e12,) * 5, intercept=1.5, seed=3)
        data, truth = simulate_dataset(sim)
        np.testing.assert_allclose(truth[1:], 0.0, atol=1e-5)
        assert truth[0] == 1.5
        # counts are Poisson(e^1.5): mean 4.48
        assert abs(data.y.mean() - np.exp(1.5)) < 4 * np.sqrt(np.exp(1.5) / data.y.size)

    def test_expected_counts_override(self):
        data, _ = simulate_dataset(SimulationSpec(3, 4, E=5.0))
        np.testing.assert_array_equal(data.E, 5.0)

    def test_time_major_layout(self):
        data, _ = simulate_dataset(SimulationSpec(3, 4))
        np.testing.assert_array_equal(data.time, np.repeat([1, 2, 3], 4))
        np.testing.assert_array_equal(data.space, np.tile([1, 2, 3, 4], 3))

    @pytest.mark.parametrize("bad", [dict(precisions=(1.0, 1.0, 1.0, 1.0)), dict(precisions=(1.0, 0.0, 1.0, 1.0, 1.0)), dict(E=0.0)])
    def test_invalid_spec(self, bad):
        with pytest.raises(ValueError):
            SimulationSpec(3, 4, **bad)


class TestVarianceScaling:
    def test_block_draws_scale_inversely(self):
        # 10k replicates of one element per precision, drawn as the simulator draws each block
        model = assemble_model(SimulationSpec(6, 4).model_spec())
        for block in model.blocks[1:]:
            v = {
                tau: sample_constrained_igmrf(block.structure, tau, 10_000, seed=21, jitter=1e-10)[:, 0].var()
                for tau in (1.0, 4.0, 16.0)
            }
            assert v[1.0] / v[4.0] == pytest.approx(4.0, rel=0.25)
            assert v[4.0] / v[16.0] == pytest.approx(4.0, rel=0.25)

    def test_simulated_interaction_scales(self):
        def eps_var(tau):
            sim = lambda s: SimulationSpec(3, 3, InteractionType(1, 1), precisions=(1, 1, 1, 1, tau), seed=s)
            return np.var([simulate_dataset(sim(s))[1][-9] for s in range(1500)])

        assert eps_var(1.0) / eps_var(16.0) == pytest.approx(16.0, rel=0.25)
