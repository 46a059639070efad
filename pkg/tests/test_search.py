import math

import numpy as np
import pytest

from qmla.bayes import BayesFactorResult, TrainedModel
from qmla.pauli import parse_model
from qmla.search import (
    GrowthRule,
    ModelNode,
    SearchState,
    break_cycles,
    classify_result,
    consolidate,
    parental_consolidation,
    reduced_model_check,
    run_instance,
    spawn,
    to_dot,
)
from qmla.system import Datum, Experiment, NoiseConfig, SimulatedSystem


def make_experiments(truth_name, params, times, rng, probe_policy="random"):
    """Noiseless data from a known model, as training-style experiments."""
    truth = parse_model(truth_name)
    system = SimulatedSystem(
        truth, params, noise=NoiseConfig(probe_offset_sigma=0.0, shot_count=1),
        probe_policy=probe_policy,
    )
    experiments = []
    for t in times:
        design = system.new_design(t, rng)
        p = system.truth_probability(design)
        experiments.append(
            Experiment(design=design, datum=Datum(value=p, shots=10**6))
        )
    return experiments


def trained_on(name, params, experiments, sds=None):
    expr = parse_model(name)
    params = np.asarray(params, dtype=float)
    sds = np.full(expr.num_terms, 0.05) if sds is None else np.asarray(sds)
    return TrainedModel(
        expression=expr, params=params, param_sds=sds, experiments=tuple(experiments)
    )


class TestSpawn:
    def test_stage_one_children(self):
        children = spawn(parse_model("Sz"), GrowthRule())
        assert sorted(c.name for c in children) == ["Sxz", "Syz"]

    def test_stage_advance(self):
        children = spawn(parse_model("Sxyz"), GrowthRule())
        assert sorted(c.name for c in children) == ["SxyzAx", "SxyzAy", "SxyzAz"]
        assert all(c.num_qubits == 2 for c in children)

    def test_exhaustion(self):
        assert spawn(parse_model("SxyzAxyzTxyxzyz"), GrowthRule()) == []

    def test_children_strictly_contain_parent(self):
        rule = GrowthRule()
        champion = parse_model("SxyzAz")
        for child in spawn(champion, rule):
            assert set(champion.term_labels) < set(child.term_labels)

    def test_default_rule_enumerates_18_models(self):
        rule = GrowthRule()
        total_layers, total_models = 0, 0
        frontier = rule.root_models()
        champion = None
        while frontier:
            total_layers += 1
            total_models += len(frontier)
            champion = frontier[0]  # any champion gives the same counts
            frontier = spawn(champion, rule)
        assert total_layers == 9
        assert total_models == 18
        assert champion.name == "SxyzAxyzTxyxzyz"

    def test_rule_validation(self):
        with pytest.raises(ValueError, match="more than one stage"):
            GrowthRule(stages=(("Sx",), ("Sx",)))
        with pytest.raises(ValueError):
            GrowthRule(stages=(("Qx",),))


class TestConsolidate:
    def test_singleton(self):
        rng = np.random.default_rng(0)
        data = make_experiments("Sz", [2.0], np.linspace(0.1, 5, 30), rng)
        model = trained_on("Sz", [2.0], data)
        champion, scores, comparisons = consolidate([model], 10.0)
        assert champion.name == "Sz"
        assert scores == {"Sz": 0}
        assert comparisons == []

    def test_scoring_rule(self):
        rng = np.random.default_rng(1)
        data = make_experiments("Sz", [3.0], np.linspace(0.1, 6, 60), rng)
        winner = trained_on("Sz", [3.0], data)
        loser_b = trained_on("Sx", [3.0], data)
        loser_c = trained_on("Sy", [1.0], data)
        champion, scores, _ = consolidate([winner, loser_b, loser_c], 10.0)
        assert champion.name == "Sz"
        assert scores["Sz"] == 2

    def test_end_to_end_layer_championship(self):
        # data from sigma-z dynamics; the z-rotation model must win the layer
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(np.random.SeedSequence([7, seed]))
            data = make_experiments(
                "Sz", [3.0], rng.uniform(0.2, 6.0, 80), rng
            )
            models = [
                trained_on("Sz", [3.0], data),
                trained_on("Sx", [2.0], data),
                trained_on("Sy", [4.0], data),
            ]
            champion, _, _ = consolidate(models, 10.0)
            wins += champion.name == "Sz"
        assert wins >= 18


class TestParentalConsolidation:
    def build_state(self, names):
        state = SearchState()
        for layer, name in enumerate(names):
            expr = parse_model(name)
            node = ModelNode(expression=expr, layer=layer)
            node.trained = trained_on(name, np.ones(expr.num_terms), ())
            state.nodes[name] = node
            state.layers.append([name])
            state.champion_set.append(name)
        return state

    def test_child_decisively_beats_parent(self):
        state = self.build_state(["Sz", "Syz"])

        def compare(parent, child, evidence_threshold):
            return BayesFactorResult(parent.name, child.name, -math.log(200.0), 1, "j")

        survivors = parental_consolidation(state, 10.0, compare=compare)
        assert survivors == ["Syz"]
        assert state.nodes["Sz"].status == "pruned"

    def test_inconclusive_keeps_both(self):
        state = self.build_state(["Sz", "Syz"])

        def compare(parent, child, evidence_threshold):
            return BayesFactorResult(parent.name, child.name, 0.5, 1, "inconclusive")

        survivors = parental_consolidation(state, 10.0, compare=compare)
        assert survivors == ["Sz", "Syz"]

    def test_chain_collapses_to_deepest(self):
        # synthetic comparison table: every child beats its parent
        names = [
            "Sx", "Sxy", "Sxyz",
            "SxyzAx", "SxyzAxy", "SxyzAxyz",
            "SxyzAxyzTxy", "SxyzAxyzTxyxz", "SxyzAxyzTxyxzyz",
        ]
        state = self.build_state(names)

        def compare(parent, child, evidence_threshold):
            return BayesFactorResult(parent.name, child.name, -math.log(1e6), 1, "j")

        survivors = parental_consolidation(state, 10.0, compare=compare)
        assert survivors == [names[-1]]


class TestReducedModelCheck:
    def test_all_parameters_significant(self):
        rng = np.random.default_rng(2)
        data = make_experiments("Sz", [3.0], np.linspace(0.1, 5, 40), rng)
        champion = trained_on("Sz", [3.0], data, sds=[0.01])
        model, result = reduced_model_check(champion)
        assert model is champion
        assert result is None

    def test_negligible_term_dropped_when_decisive(self):
        rng = np.random.default_rng(3)
        truth_params = [2.0, 3.0, 4.0, 1.5]
        data = make_experiments(
            "SxyzAz", truth_params, np.linspace(0.1, 8, 120), rng,
            probe_policy="plus",
        )
        # champion carries a spurious Ax term indistinguishable from zero
        champion = trained_on(
            "SxyzAxAz",
            [2.0, 3.0, 4.0, 0.8, 1.5],
            data,
            sds=[0.05, 0.05, 0.05, 1.0, 0.05],
        )
        model, result = reduced_model_check(champion)
        assert model.name == "SxyzAz"
        np.testing.assert_array_equal(model.params, [2.0, 3.0, 4.0, 1.5])
        assert result.log_bayes_factor > math.log(100.0)

    def test_threshold_blocks_marginal_reduction(self):
        rng = np.random.default_rng(4)
        truth_params = [2.0, 3.0, 4.0, 1.5]
        data = make_experiments(
            "SxyzAz", truth_params, np.linspace(0.1, 8, 40), rng,
            probe_policy="plus",
        )
        champion = trained_on(
            "SxyzAxAz",
            [2.0, 3.0, 4.0, 0.004, 1.5],
            data,
            sds=[0.05, 0.05, 0.05, 0.5, 0.05],
        )
        model, result = reduced_model_check(champion)
        assert model is champion
        assert 0.0 < abs(result.log_bayes_factor) < math.log(100.0)

    def test_never_empties_model(self):
        champion = trained_on("Sz", [0.001], (), sds=[1.0])
        model, result = reduced_model_check(champion)
        assert model is champion
        assert result is None


class TestCycleBreaking:
    def test_three_cycle_loses_weakest_edge(self):
        results = [
            BayesFactorResult("A", "B", math.log(1000.0), 10, "i"),
            BayesFactorResult("B", "C", math.log(500.0), 10, "i"),
            BayesFactorResult("C", "A", math.log(50.0), 10, "i"),  # weakest
        ]
        kept = break_cycles(results)
        assert len(kept) == 2
        assert all((c.model_i, c.model_j) != ("C", "A") for c in kept)

    def test_acyclic_untouched(self):
        results = [
            BayesFactorResult("A", "B", math.log(1000.0), 10, "i"),
            BayesFactorResult("A", "C", math.log(500.0), 10, "i"),
            BayesFactorResult("B", "C", 0.1, 10, "inconclusive"),
        ]
        assert break_cycles(results) == results


class TestClassify:
    def test_correct(self):
        assert classify_result(parse_model("SxyzAz"), parse_model("SxyzAz")) == "Correct"

    def test_over(self):
        assert (
            classify_result(parse_model("SxyzAyz"), parse_model("SxyzAz"))
            == "Over-parameterised"
        )

    def test_under(self):
        assert (
            classify_result(parse_model("Sxy"), parse_model("SxyzAz"))
            == "Under-parameterised"
        )

    def test_mis(self):
        assert (
            classify_result(parse_model("SxyzAy"), parse_model("SxyzAz"))
            == "Mis-parameterised"
        )


class TestRunInstance:
    def test_stage_restricted_instance_finds_truth(self):
        rule = GrowthRule(stages=(("Sx", "Sy", "Sz"),))
        wins = 0
        for seed in range(20):
            system = SimulatedSystem(
                parse_model("Sz"),
                [3.0],
                probe_policy="random",
                noise=NoiseConfig(probe_offset_sigma=0.0),
            )
            result, state = run_instance(
                system,
                rule,
                (0.0, 10.0),
                150,
                400,
                np.random.SeedSequence([11, seed]),
                truth=parse_model("Sz"),
            )
            wins += result.champion_name == "Sz"
            assert len(state.layers) == 3
            assert sum(len(l) for l in state.layers) == 6
        assert wins >= 16

    def test_instance_result_structure(self):
        rule = GrowthRule(stages=(("Sx", "Sz"),))
        system = SimulatedSystem(
            parse_model("Sz"), [2.0], probe_policy="random",
            noise=NoiseConfig(probe_offset_sigma=0.0),
        )
        result, state = run_instance(
            system,
            rule,
            (0.0, 10.0),
            60,
            200,
            np.random.SeedSequence(5),
            truth=parse_model("Sz"),
        )
        payload = result.to_dict()
        for key in ("champion", "classification", "r_squared", "layers", "comparisons"):
            assert key in payload
        assert payload["champion"]["name"] in {"Sz", "Sxz", "Sx"}
        assert payload["classification"] in {
            "Correct", "Over-parameterised", "Under-parameterised", "Mis-parameterised",
        }
        dot = to_dot(state.comparisons, state.nodes)
        assert "digraph" in dot and "->" in dot

    def test_no_model_trained_twice(self):
        rule = GrowthRule(stages=(("Sx", "Sy", "Sz"),))
        system = SimulatedSystem(
            parse_model("Sz"), [2.0], probe_policy="random",
            noise=NoiseConfig(probe_offset_sigma=0.0),
        )
        _, state = run_instance(
            system, rule, (0.0, 10.0), 40, 150, np.random.SeedSequence(9)
        )
        names = [n for layer in state.layers for n in layer]
        assert len(names) == len(set(names))

    def test_decisive_graph_is_acyclic(self):
        import networkx as nx

        rule = GrowthRule(stages=(("Sx", "Sy", "Sz"),))
        system = SimulatedSystem(
            parse_model("Sz"), [2.5], probe_policy="random",
            noise=NoiseConfig(probe_offset_sigma=0.0),
        )
        _, state = run_instance(
            system, rule, (0.0, 10.0), 60, 200, np.random.SeedSequence(21)
        )
        graph = nx.DiGraph()
        for c in state.comparisons:
            if c.decisive:
                graph.add_edge(c.loser, c.winner)
        assert nx.is_directed_acyclic_graph(graph)
