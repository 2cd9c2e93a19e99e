import math

import numpy as np
import pytest

import contrast_oracle as oracle
from scopegraph import tensor as T
from scopegraph.contrast import ContrastInput, asi_components, asi_loss, cross_graph_loss, cross_scope_loss
from scopegraph.gradcheck import check
from scopegraph.scope import Scope


def random_instance(rng, S=6, D=4, n_targets=2):
    syn = rng.normal(size=(S, D))
    sem = rng.normal(size=(S, D))
    scopes = []
    for a in rng.choice(np.arange(1, S + 1), size=n_targets, replace=False):
        a = int(a)
        start = int(rng.integers(1, a + 1))
        end = int(rng.integers(a, S + 1))
        scopes.append(Scope((a, a), start, end))
    return syn, sem, scopes


def triples(scopes):
    return [(sc.target[0], sc.start, sc.end) for sc in scopes]


class TestCrossScope:
    def test_uniform_similarity_closed_form(self):
        S, k = 7, 3
        nodes = T.Value(np.ones((S, 4)))
        sc = Scope((2, 2), 1, 4)  # 4 in scope, anchor excluded -> k = 3 positives
        loss = cross_scope_loss(nodes, [sc], tau=0.1)
        assert loss.item() == pytest.approx(k * math.log(S), abs=1e-9)

    def test_zero_targets(self):
        assert cross_scope_loss(T.Value(np.ones((3, 2))), [], 0.1).item() == 0.0

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            cross_scope_loss(T.Value(np.ones((3, 2))), [], 0.0)

    def test_matches_oracle_and_gradients(self, rng):
        syn, _, scopes = random_instance(rng)
        val = cross_scope_loss(T.Value(syn), scopes, 0.1).item()
        assert val == pytest.approx(oracle.cross_scope(syn.tolist(), triples(scopes), 0.1), abs=1e-10)
        x = T.parameter(syn)
        assert check(lambda: cross_scope_loss(x, scopes, 0.1), [x]) < 1e-4

    def test_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            syn, _, scopes = random_instance(rng, S=int(rng.integers(2, 9)), D=3, n_targets=1)
            assert cross_scope_loss(T.Value(syn), scopes, float(rng.uniform(0.05, 2))).item() >= 0.0


class TestCrossGraph:
    def test_zero_targets(self):
        x = T.Value(np.ones((3, 2)))
        assert cross_graph_loss(x, x, [], 0.1).item() == 0.0

    def test_total_symmetry_closed_form(self):
        S = 6
        x = T.Value(np.tile([[0.3, -1.2, 2.0]], (S, 1)))
        sc = Scope((3, 3), 2, 5)  # k = 3 positives
        loss = cross_graph_loss(x, x, [sc], tau=0.1)
        assert loss.item() == pytest.approx(3 * (math.log(S) - math.log(2)), abs=1e-9)

    def test_matches_oracle_and_gradients(self, rng):
        syn, sem, scopes = random_instance(rng)
        val = cross_graph_loss(T.Value(syn), T.Value(sem), scopes, 0.1).item()
        assert val == pytest.approx(oracle.cross_graph(syn.tolist(), sem.tolist(), triples(scopes), 0.1), abs=1e-10)
        a, b = T.parameter(syn), T.parameter(sem)
        assert check(lambda: cross_graph_loss(a, b, scopes, 0.1), [a, b]) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            cross_graph_loss(T.Value(np.ones((3, 2))), T.Value(np.ones((4, 2))), [], 0.1)


class TestAsi:
    def test_zero_targets(self):
        x = T.Value(np.ones((3, 2)))
        assert asi_loss(ContrastInput(x, x, [])).item() == 0.0

    def test_additivity(self, rng):
        syn, sem, scopes = random_instance(rng)
        inp = ContrastInput(T.Value(syn), T.Value(sem), scopes, 0.1)
        parts = asi_components(inp)
        manual = (parts["scope_syn"].item() + parts["scope_sem"].item()) + (parts["graph_syn"].item() + parts["graph_sem"].item())
        assert asi_loss(inp).item() == manual

    def test_oracle_200_instances(self):
        rng = np.random.default_rng(77)
        for _ in range(200):
            S = int(rng.integers(2, 9))
            syn, sem, scopes = random_instance(rng, S=S, D=int(rng.integers(1, 7)), n_targets=int(rng.integers(0, min(S, 3) + 1)))
            tau = float(rng.uniform(0.05, 1.0))
            got = asi_loss(ContrastInput(T.Value(syn), T.Value(sem), scopes, tau)).item()
            assert got == pytest.approx(oracle.asi(syn.tolist(), sem.tolist(), triples(scopes), tau), abs=1e-10)

    def test_rescaling_invariance(self, rng):
        syn, sem, scopes = random_instance(rng)
        base = asi_loss(ContrastInput(T.Value(syn), T.Value(sem), scopes)).item()
        syn2 = syn.copy()
        syn2[2] *= 7
        sem2 = sem.copy()
        sem2[0] *= 7
        assert asi_loss(ContrastInput(T.Value(syn2), T.Value(sem2), scopes)).item() == pytest.approx(base, abs=1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            S = int(rng.integers(2, 9))
            syn, sem, scopes = random_instance(rng, S=S, D=int(rng.integers(1, 7)), n_targets=min(2, S))
            a, b = T.parameter(syn), T.parameter(sem)
            assert check(lambda: asi_loss(ContrastInput(a, b, scopes, 0.2)), [a, b]) < 1e-4

    def test_explicit_anchor(self):
        nodes = T.Value(np.ones((5, 2)))
        sc = Scope((2, 3), 1, 5)
        # anchor 3 excluded, so 4 positives
        assert cross_scope_loss(nodes, [sc], 0.1, anchors=[3]).item() == pytest.approx(4 * math.log(5))
