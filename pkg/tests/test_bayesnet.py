import itertools
import math

import numpy as np
import pytest

from stayup import bayesnet as bn

CFG = bn.BdeuConfig()


def random_table(rng, n_rows, names=("A", "B", "C")):
    var = bn.VariableSet.binary(names)
    return bn.DatasetTable(var, rng.integers(0, 2, size=(n_rows, len(names))))


def sequential_bdeu_oracle(data, child, parents, ess):
    """Chain-rule Dirichlet-multinomial marginal likelihood, row by row."""
    var = data.variables
    ci = var.index(child)
    ps = [var.index(p) for p in parents]
    r = var.arities[ci]
    q = 1
    for p in ps:
        q *= var.arities[p]
    a_jk = ess / (q * r)
    a_j = ess / q
    n_jk: dict = {}
    n_j: dict = {}
    total = 0.0
    for row in data.values:
        j = tuple(int(row[p]) for p in ps)
        k = int(row[ci])
        total += math.log((a_jk + n_jk.get((j, k), 0)) / (a_j + n_j.get(j, 0)))
        n_jk[(j, k)] = n_jk.get((j, k), 0) + 1
        n_j[j] = n_j.get(j, 0) + 1
    return total


def all_dags(names):
    """Every labeled DAG over the given variables."""
    var = bn.VariableSet.binary(names)
    pairs = [(u, v) for u in names for v in names if u != v]
    out = []
    for bits in itertools.product([0, 1], repeat=len(pairs)):
        edges = [p for p, b in zip(pairs, bits) if b]
        if any((v, u) in edges for u, v in edges):
            continue
        try:
            out.append(bn.Dag(var, edges))
        except ValueError:
            continue
    return out


class TestDag:
    def test_cycle_rejected(self):
        var = bn.VariableSet.binary(["A", "B", "C"])
        dag = bn.Dag(var, [("A", "B"), ("B", "C")])
        with pytest.raises(ValueError, match="cycle"):
            dag.add_edge("C", "A")

    def test_self_loop_rejected(self):
        var = bn.VariableSet.binary(["A", "B"])
        with pytest.raises(ValueError):
            bn.Dag(var, [("A", "A")])

    def test_json_round_trip(self):
        var = bn.VariableSet.binary(["A", "B", "C"])
        dag = bn.Dag(var, [("A", "C"), ("B", "C")])
        again = bn.Dag.from_json(dag.to_json())
        assert again == dag

    def test_three_node_dag_count_is_25(self):
        assert len(all_dags(["A", "B", "C"])) == 25


class TestBdeuFamilyScore:
    def test_empty_dataset_scores_zero(self):
        var = bn.VariableSet.binary(["A", "B"])
        data = bn.DatasetTable(var, np.zeros((0, 2)))
        assert bn.bdeu_family_score(data, "A", [], CFG) == 0.0
        assert bn.bdeu_family_score(data, "A", ["B"], CFG) == 0.0

    def test_single_observation_parentless(self):
        var = bn.VariableSet.binary(["A"])
        data = bn.DatasetTable(var, [[1]])
        score = bn.bdeu_family_score(data, "A", [], CFG)
        assert score == pytest.approx(math.log(0.5), abs=1e-12)

    def test_matches_sequential_oracle(self):
        rng = np.random.default_rng(5)
        names = ("A", "B", "C", "D")
        for _ in range(60):
            data = random_table(rng, int(rng.integers(0, 200)), names)
            child = str(rng.choice(names))
            others = [n for n in names if n != child]
            parents = list(rng.choice(others, size=int(rng.integers(0, 4)), replace=False))
            ess = float(rng.choice([0.5, 1.0, 2.0, 10.0]))
            got = bn.bdeu_family_score(data, child, parents, bn.BdeuConfig(ess))
            want = sequential_bdeu_oracle(data, child, parents, ess)
            assert got == pytest.approx(want, abs=1e-9)

    def test_child_in_parents_rejected(self):
        rng = np.random.default_rng(0)
        data = random_table(rng, 10)
        with pytest.raises(ValueError):
            bn.bdeu_family_score(data, "A", ["A"], CFG)


class TestBdeuScore:
    def test_empty_graph_decomposes(self):
        rng = np.random.default_rng(7)
        data = random_table(rng, 80)
        dag = bn.Dag(data.variables)
        total = sum(bn.bdeu_family_score(data, n, [], CFG) for n in data.variables.names)
        assert bn.bdeu_score(dag, data, CFG) == pytest.approx(total, rel=1e-12)

    def test_markov_equivalent_pair_scores_equal(self):
        rng = np.random.default_rng(8)
        data = random_table(rng, 150, ("A", "B"))
        a = bn.bdeu_score(bn.Dag(data.variables, [("A", "B")]), data, CFG)
        b = bn.bdeu_score(bn.Dag(data.variables, [("B", "A")]), data, CFG)
        assert a == pytest.approx(b, abs=1e-9)

    def test_equivalence_classes_share_scores(self):
        # group all 25 three-node DAGs by (skeleton, immoralities)
        rng = np.random.default_rng(9)
        data = random_table(rng, 200)
        classes: dict = {}
        for dag in all_dags(data.variables.names):
            skeleton = frozenset(frozenset(e) for e in dag.edges())
            immoral = set()
            for v in data.variables.names:
                for p1, p2 in itertools.combinations(sorted(dag.parents(v)), 2):
                    if not dag.has_edge(p1, p2) and not dag.has_edge(p2, p1):
                        immoral.add((p1, p2, v))
            classes.setdefault((skeleton, frozenset(immoral)), []).append(
                bn.bdeu_score(dag, data, CFG)
            )
        for scores in classes.values():
            assert max(scores) - min(scores) <= 1e-9

    def test_disconnected_variable_adds_its_family_score(self):
        rng = np.random.default_rng(10)
        values = rng.integers(0, 2, size=(120, 3))
        data3 = bn.DatasetTable(bn.VariableSet.binary(["A", "B", "C"]), values)
        data2 = bn.DatasetTable(bn.VariableSet.binary(["A", "B"]), values[:, :2])
        dag3 = bn.Dag(data3.variables, [("A", "B")])
        dag2 = bn.Dag(data2.variables, [("A", "B")])
        extra = bn.bdeu_score(dag3, data3, CFG) - bn.bdeu_score(dag2, data2, CFG)
        assert extra == pytest.approx(bn.bdeu_family_score(data3, "C", [], CFG), rel=1e-12)

    def test_decomposability_delta(self):
        rng = np.random.default_rng(11)
        names = ("A", "B", "C", "D")
        for _ in range(40):
            data = random_table(rng, 100, names)
            constraints = bn.LayerConstraints.unconstrained(data.variables)
            dag = bn.random_start(constraints, 0.4, seed=int(rng.integers(2**31)))
            adds = [m for m in bn.legal_moves(dag, constraints) if m[0] == "add"]
            if not adds:
                continue
            _, u, v = adds[int(rng.integers(len(adds)))]
            bigger = dag.copy()
            bigger.add_edge(u, v)
            full_delta = bn.bdeu_score(bigger, data, CFG) - bn.bdeu_score(dag, data, CFG)
            family_delta = bn.bdeu_family_score(
                data, v, bigger.parents(v), CFG
            ) - bn.bdeu_family_score(data, v, dag.parents(v), CFG)
            assert full_delta == pytest.approx(family_delta, abs=1e-9)
            # untouched families are literally the same numbers
            for name in names:
                if name != v:
                    assert bn.bdeu_family_score(data, name, dag.parents(name), CFG) == \
                        bn.bdeu_family_score(data, name, bigger.parents(name), CFG)


class TestLayerConstraints:
    def test_default_blacklist(self):
        constraints = bn.default_layer_constraints()
        assert not constraints.allows_edge("R", "G")   # nothing points at G
        assert not constraints.allows_edge("Ac", "S")  # nothing leaves Ac
        assert constraints.allows_edge("G", "S")
        assert constraints.allows_edge("A", "T")
        assert constraints.allows_edge("S", "Ac")

    def test_no_move_violates_blacklist(self):
        constraints = bn.default_layer_constraints()
        dag = bn.Dag(constraints.variables)
        for kind, u, v in bn.legal_moves(dag, constraints):
            assert v != "G" and u != "Ac"

    def test_forbidden_edges_derived(self):
        constraints = bn.default_layer_constraints()
        forbidden = constraints.forbidden_edges()
        assert ("S", "G") in forbidden and ("Ac", "F") in forbidden
        assert ("G", "S") not in forbidden


class TestLegalMoves:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(12)
        var = bn.VariableSet.binary(["A", "B", "C", "D"])
        constraints = bn.LayerConstraints(var, (1, 2, 2, 3))
        for trial in range(25):
            dag = bn.random_start(constraints, 0.4, seed=trial)
            got = set(bn.legal_moves(dag, constraints))
            want = set()
            edges = dag.edges()
            for u, v in itertools.permutations(var.names, 2):
                if dag.has_edge(u, v):
                    want.add(("delete", u, v))
                    rev = [e for e in edges if e != (u, v)] + [(v, u)]
                    if constraints.allows_edge(v, u):
                        try:
                            bn.Dag(var, rev)
                            want.add(("reverse", u, v))
                        except ValueError:
                            pass
                elif constraints.allows_edge(u, v):
                    try:
                        bn.Dag(var, edges + [(u, v)])
                        want.add(("add", u, v))
                    except ValueError:
                        pass
            assert got == want

    def test_delete_and_reverse_present_for_existing_edge(self):
        var = bn.VariableSet.binary(["R", "S"])
        constraints = bn.LayerConstraints.unconstrained(var)
        dag = bn.Dag(var, [("R", "S")])
        moves = set(bn.legal_moves(dag, constraints))
        assert ("delete", "R", "S") in moves
        assert ("reverse", "R", "S") in moves

    def test_cycle_blocking_add_absent(self):
        var = bn.VariableSet.binary(["A", "B", "C"])
        constraints = bn.LayerConstraints.unconstrained(var)
        dag = bn.Dag(var, [("A", "B"), ("B", "C")])
        assert ("add", "C", "A") not in bn.legal_moves(dag, constraints)


class TestRandomStart:
    def test_zero_probability_empty(self):
        constraints = bn.default_layer_constraints()
        assert bn.random_start(constraints, 0.0, seed=4).edges() == []

    def test_unit_probability_maximal_for_order(self):
        constraints = bn.default_layer_constraints()
        dag = bn.random_start(constraints, 1.0, seed=4)
        # every layer-legal edge pointing forward in the sampled order is present
        order = np.random.default_rng(4).permutation(constraints.variables.n)
        names = constraints.variables.names
        for a in range(len(order)):
            for b in range(a + 1, len(order)):
                u, v = int(order[a]), int(order[b])
                if constraints.allows(u, v):
                    assert dag.has_edge(names[u], names[v])

    def test_deterministic(self):
        constraints = bn.default_layer_constraints()
        a = bn.random_start(constraints, 0.3, seed=99)
        b = bn.random_start(constraints, 0.3, seed=99)
        assert a == b

    def test_always_legal(self):
        constraints = bn.default_layer_constraints()
        for seed in range(40):
            dag = bn.random_start(constraints, 0.5, seed=seed)
            assert constraints.satisfied_by(dag)


def _sample_from_dag(rng, dag, cpts, n):
    var = dag.variables
    values = np.zeros((n, var.n), dtype=np.uint8)
    for i in dag.topological_order():
        cpt = cpts.cpts[i]
        j = np.zeros(n, dtype=np.int64)
        for p in cpt.parents:
            j = j * var.arities[p] + values[:, p]
        values[:, i] = rng.random(n) < cpt.table[j, 1]
    return bn.DatasetTable(var, values)


class TestHillClimb:
    def test_independent_data_yields_empty_graph(self):
        rng = np.random.default_rng(13)
        data = random_table(rng, 4000, ("A", "B", "C", "D"))
        constraints = bn.LayerConstraints.unconstrained(data.variables)
        dag, _ = bn.hill_climb(data, constraints, CFG, bn.Dag(data.variables), seed=0)
        assert dag.edges() == []
        start = bn.random_start(constraints, 0.5, seed=3)
        dag2, _ = bn.hill_climb(data, constraints, CFG, start, seed=0)
        assert dag2.edges() == []

    def test_local_optimum_is_fixed_point(self):
        rng = np.random.default_rng(14)
        data = random_table(rng, 300)
        constraints = bn.LayerConstraints.unconstrained(data.variables)
        dag, score = bn.hill_climb(data, constraints, CFG, bn.Dag(data.variables), seed=1)
        again, score2 = bn.hill_climb(data, constraints, CFG, dag, seed=2)
        assert again == dag
        assert score2 == score

    def test_never_decreases_start_score(self):
        rng = np.random.default_rng(15)
        for trial in range(10):
            data = random_table(rng, 120, ("A", "B", "C", "D"))
            constraints = bn.LayerConstraints.unconstrained(data.variables)
            start = bn.random_start(constraints, 0.5, seed=trial)
            _, score = bn.hill_climb(data, constraints, CFG, start, seed=trial)
            assert score >= bn.bdeu_score(start, data, CFG) - 1e-12

    def test_finds_exhaustive_optimum_with_restarts(self):
        rng = np.random.default_rng(16)
        hits = 0
        trials = 20
        for trial in range(trials):
            truth = all_dags(["A", "B", "C"])[int(rng.integers(25))]
            cpts = bn.fit_mle(truth, random_table(rng, 50))  # arbitrary CPTs
            data = _sample_from_dag(rng, truth, cpts, 500)
            constraints = bn.LayerConstraints.unconstrained(data.variables)
            best = -np.inf
            cache = bn.FamilyScoreCache(data, CFG)
            for r in range(20):
                start = bn.random_start(constraints, 0.3, seed=[trial, r])
                _, score = bn.hill_climb(data, constraints, CFG, start,
                                         seed=[trial, r, 1], cache=cache)
                best = max(best, score)
            optimum = max(bn.bdeu_score(d, data, CFG, cache=cache) for d in all_dags(["A", "B", "C"]))
            if abs(best - optimum) <= 1e-9:
                hits += 1
        assert hits >= 0.95 * trials

    def test_incremental_deltas_match_full_rescoring(self):
        rng = np.random.default_rng(17)
        data = random_table(rng, 150, ("A", "B", "C", "D"))
        constraints = bn.LayerConstraints.unconstrained(data.variables)
        dag = bn.Dag(data.variables)
        cache = bn.FamilyScoreCache(data, CFG)
        for _ in range(30):
            moves = bn.legal_moves(dag, constraints)
            move = moves[int(rng.integers(len(moves)))]
            nxt = bn.apply_move(dag, move)
            full = bn.bdeu_score(nxt, data, CFG, cache=cache) - bn.bdeu_score(dag, data, CFG, cache=cache)
            kind, u, v = move
            if kind == "reverse":
                inc = (
                    bn.bdeu_family_score(data, v, nxt.parents(v), CFG)
                    - bn.bdeu_family_score(data, v, dag.parents(v), CFG)
                    + bn.bdeu_family_score(data, u, nxt.parents(u), CFG)
                    - bn.bdeu_family_score(data, u, dag.parents(u), CFG)
                )
            else:
                inc = bn.bdeu_family_score(data, v, nxt.parents(v), CFG) - \
                    bn.bdeu_family_score(data, v, dag.parents(v), CFG)
            assert full == pytest.approx(inc, abs=1e-9)
            dag = nxt

    def test_respects_layers(self):
        constraints = bn.default_layer_constraints()
        var = constraints.variables
        data = bn.DatasetTable(var, np.random.default_rng(3).integers(0, 2, (400, 9)))
        for seed in range(5):
            start = bn.random_start(constraints, 0.2, seed=seed)
            dag, _ = bn.hill_climb(data, constraints, CFG, start, seed=seed)
            assert constraints.satisfied_by(dag)


class TestFitMle:
    def test_ratio_rows(self):
        var = bn.VariableSet.binary(["A", "B"])
        data = bn.DatasetTable(var, [[0, 0], [0, 0], [0, 0], [0, 1]])
        cpts = bn.fit_mle(bn.Dag(var, [("A", "B")]), data)
        np.testing.assert_allclose(cpts["B"].table[0], [0.75, 0.25])

    def test_unobserved_rows_uniform(self):
        var = bn.VariableSet.binary(["A", "B"])
        data = bn.DatasetTable(var, [[0, 0], [0, 1]])
        cpts = bn.fit_mle(bn.Dag(var, [("A", "B")]), data)
        np.testing.assert_allclose(cpts["B"].table[1], [0.5, 0.5])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(19)
        data = random_table(rng, 100, ("A", "B", "C", "D"))
        constraints = bn.LayerConstraints.unconstrained(data.variables)
        dag = bn.random_start(constraints, 0.5, seed=0)
        cpts = bn.fit_mle(dag, data)
        for cpt in cpts.cpts:
            np.testing.assert_allclose(cpt.table.sum(axis=1), 1.0, atol=1e-12)

    def test_recovers_generator_probability(self):
        rng = np.random.default_rng(20)
        var = bn.VariableSet.binary(["A", "S"])
        dag = bn.Dag(var, [("A", "S")])
        n = 20000
        a = rng.random(n) < 0.5
        s = np.where(a, rng.random(n) < 0.75, rng.random(n) < 0.5)
        data = bn.DatasetTable(var, np.column_stack([a, s]).astype(np.uint8))
        cpts = bn.fit_mle(dag, data)
        assert cpts["S"].table[1, 1] == pytest.approx(0.75, abs=0.02)

    def test_json_round_trip(self):
        rng = np.random.default_rng(21)
        data = random_table(rng, 60, ("A", "B", "C"))
        dag = bn.Dag(data.variables, [("A", "C"), ("B", "C")])
        cpts = bn.fit_mle(dag, data)
        again = bn.CptSet.from_json(cpts.to_json(), data.variables)
        for a, b in zip(cpts.cpts, again.cpts):
            assert a.parents == b.parents
            np.testing.assert_allclose(a.table, b.table)


class TestPosteriorQuery:
    def _chain(self):
        var = bn.VariableSet.binary(["A", "B"])
        dag = bn.Dag(var, [("A", "B")])
        cpts = bn.CptSet(var, (
            bn.Cpt((), np.array([[0.5, 0.5]])),
            bn.Cpt((0,), np.array([[0.8, 0.2], [0.2, 0.8]])),
        ))
        return dag, cpts

    def test_parentless_marginal(self):
        dag, cpts = self._chain()
        np.testing.assert_allclose(bn.posterior_query(dag, cpts, {}, "A"), [0.5, 0.5])

    def test_bayes_reversal(self):
        dag, cpts = self._chain()
        post = bn.posterior_query(dag, cpts, {"B": 1}, "A")
        assert post[1] == pytest.approx(0.8, abs=1e-12)

    def test_full_evidence_matches_joint(self):
        rng = np.random.default_rng(22)
        data = random_table(rng, 200, ("A", "B", "C"))
        dag = bn.Dag(data.variables, [("A", "B"), ("B", "C")])
        cpts = bn.fit_mle(dag, data)
        grids, probs = bn.joint_table(dag, cpts)
        post = bn.posterior_query(dag, cpts, {"A": 1, "B": 0}, "C")
        direct = np.array([
            probs[(grids[:, 0] == 1) & (grids[:, 1] == 0) & (grids[:, 2] == k)].sum()
            for k in range(2)
        ])
        np.testing.assert_allclose(post, direct / direct.sum(), atol=1e-12)

    def test_impossible_evidence(self):
        var = bn.VariableSet.binary(["A", "B"])
        dag = bn.Dag(var, [("A", "B")])
        cpts = bn.CptSet(var, (
            bn.Cpt((), np.array([[1.0, 0.0]])),
            bn.Cpt((0,), np.array([[1.0, 0.0], [0.0, 1.0]])),
        ))
        with pytest.raises(ValueError, match="impossible evidence"):
            bn.posterior_query(dag, cpts, {"A": 1}, "B")

    def test_query_in_evidence_rejected(self):
        dag, cpts = self._chain()
        with pytest.raises(ValueError):
            bn.posterior_query(dag, cpts, {"A": 1}, "A")

    def test_outputs_sum_to_one(self):
        rng = np.random.default_rng(23)
        data = random_table(rng, 100, ("A", "B", "C", "D"))
        constraints = bn.LayerConstraints.unconstrained(data.variables)
        for seed in range(5):
            dag = bn.random_start(constraints, 0.4, seed=seed)
            cpts = bn.fit_mle(dag, data)
            post = bn.posterior_query(dag, cpts, {"A": 0}, "C")
            assert post.sum() == pytest.approx(1.0, abs=1e-12)


class TestMarkovBlanket:
    def test_isolated_node(self):
        var = bn.VariableSet.binary(["A", "B"])
        assert bn.markov_blanket(bn.Dag(var), "A") == set()

    def test_parents_children_coparents(self):
        var = bn.VariableSet.binary(["A", "B", "S", "C", "D"])
        dag = bn.Dag(var, [("A", "S"), ("B", "S"), ("S", "C"), ("D", "C")])
        assert bn.markov_blanket(dag, "S") == {"A", "B", "C", "D"}

    def test_profile_network_blanket(self):
        # app preference and surfing as parents, breakfast and grades as
        # children: all four sit in the sleep-status blanket
        dag = bn.Dag(bn.profile_variables(),
                     [("A", "S"), ("T", "S"), ("S", "Br"), ("S", "Ac")])
        assert bn.markov_blanket(dag, "S") == {"A", "T", "Br", "Ac"}
        assert set(dag.parents("S")) == {"A", "T"}
        assert set(dag.children("S")) == {"Br", "Ac"}

    def test_blanket_shields_variable(self):
        # conditional on the blanket, the rest of the network is irrelevant
        rng = np.random.default_rng(24)
        var = bn.VariableSet.binary(["A", "B", "C", "D", "E"])
        constraints = bn.LayerConstraints.unconstrained(var)
        for seed in range(8):
            dag = bn.random_start(constraints, 0.4, seed=seed)
            data = bn.DatasetTable(var, rng.integers(0, 2, (150, 5)))
            cpts = bn.fit_mle(dag, data)
            grids, probs = bn.joint_table(dag, cpts)
            deviation = _max_blanket_deviation(dag, grids, probs)
            assert deviation < 1e-12


def _max_blanket_deviation(dag, grids, probs):
    var = dag.variables
    worst = 0.0
    for name in var.names:
        xi = var.index(name)
        mb = sorted(var.index(m) for m in bn.markov_blanket(dag, name))
        rest = [j for j in range(var.n) if j != xi]
        key_rest = np.zeros(len(grids), dtype=np.int64)
        for j in rest:
            key_rest = key_rest * var.arities[j] + grids[:, j]
        key_mb = np.zeros(len(grids), dtype=np.int64)
        for j in mb:
            key_mb = key_mb * var.arities[j] + grids[:, j]
        mb_num: dict = {}
        mb_den: dict = {}
        for s in range(len(grids)):
            mb_den[key_mb[s]] = mb_den.get(key_mb[s], 0.0) + probs[s]
            if grids[s, xi] == 1:
                mb_num[key_mb[s]] = mb_num.get(key_mb[s], 0.0) + probs[s]
        rest_num: dict = {}
        rest_den: dict = {}
        for s in range(len(grids)):
            rest_den[key_rest[s]] = rest_den.get(key_rest[s], 0.0) + probs[s]
            if grids[s, xi] == 1:
                rest_num[key_rest[s]] = rest_num.get(key_rest[s], 0.0) + probs[s]
        for s in range(len(grids)):
            den_r = rest_den.get(key_rest[s], 0.0)
            den_m = mb_den.get(key_mb[s], 0.0)
            if den_r <= 0.0 or den_m <= 0.0:
                continue
            p_rest = rest_num.get(key_rest[s], 0.0) / den_r
            p_mb = mb_num.get(key_mb[s], 0.0) / den_m
            worst = max(worst, abs(p_rest - p_mb))
    return worst


class TestStructuralHammingDistance:
    def test_identical_zero(self):
        var = bn.VariableSet.binary(["A", "B", "C"])
        dag = bn.Dag(var, [("A", "B")])
        assert bn.structural_hamming_distance(dag, dag.copy()) == 0

    def test_reversal_counts_once(self):
        var = bn.VariableSet.binary(["A", "B"])
        a = bn.Dag(var, [("A", "B")])
        b = bn.Dag(var, [("B", "A")])
        assert bn.structural_hamming_distance(a, b) == 1

    def test_insertion_and_deletion(self):
        var = bn.VariableSet.binary(["A", "B", "C"])
        a = bn.Dag(var, [("A", "B"), ("B", "C")])
        b = bn.Dag(var, [("A", "B")])
        assert bn.structural_hamming_distance(a, b) == 1
        assert bn.structural_hamming_distance(b, a) == 1
