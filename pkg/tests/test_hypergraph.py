import json
import random

import numpy as np
import pytest

import hypergraph
from auction import BUY, SELL
from conftest import make_result


def test_upx_cardinalities(upx_month_results):
    h = hypergraph.build(upx_month_results, 'UPX')
    assert sorted(e.cardinality for e in h.edges) == [2, 2, 2, 2, 3, 6]
    assert hypergraph.cardinality_histogram(h) == {2: 4, 3: 1, 6: 1}
    # day 7 cleared nothing
    assert [e.day for e in h.edges] == [1, 2, 3, 4, 5, 6]
    assert hypergraph.degree(h, 's01') == 4


def test_system_account_is_top_spx_node(spx_month_results):
    h = hypergraph.build(spx_month_results, 'SPX')
    assert hypergraph.degree(h, 'admin') == 6
    assert hypergraph.ranking(h)[0] == {'node': 'admin', 'degree': 6}
    assert hypergraph.to_document(h)['system_node'] == 'admin'


def test_export_names_renamed_system_account_admin():
    results = [make_result(1, 'SPX', [('s01', BUY, 2), ('bank', SELL, 2)])]
    h = hypergraph.build(results, 'SPX')
    doc = hypergraph.to_document(h, system_account='bank')
    assert doc['system_node'] == 'admin'
    assert doc['nodes'] == ['admin', 's01']
    assert doc['edges'][0]['members'] == ['admin', 's01']


def test_isolated_participant_has_degree_zero(upx_month_results):
    h = hypergraph.build(upx_month_results, 'UPX', participants=['s40'])
    assert 's40' in h.nodes
    assert hypergraph.degree(h, 's40') == 0
    assert hypergraph.ranking(h)[-1] == {'node': 's40', 'degree': 0}


def test_unknown_node(upx_month_results):
    h = hypergraph.build(upx_month_results, 'UPX')
    with pytest.raises(hypergraph.UnknownNode):
        hypergraph.degree(h, 'nobody')


def test_mixed_tokens(upx_month_results, spx_month_results):
    with pytest.raises(hypergraph.MixedTokens):
        hypergraph.build(upx_month_results + spx_month_results[:1], 'UPX')


def test_empty_month():
    h = hypergraph.build([], 'UPX', participants=['s01'])
    assert h.edges == []
    assert hypergraph.cardinality_histogram(h) == {}
    assert hypergraph.incidence_matrix(h).shape == (1, 0)
    assert hypergraph.summary(h)['ranking'] == [{'node': 's01', 'degree': 0}]


def test_contracted_order_count():
    result = make_result(3, 'UPX', [('s01', BUY, 2), ('s01', BUY, 1), ('s02', SELL, 3)])
    edge = hypergraph.daily_hyperedge(result)
    assert edge.members == frozenset({'s01', 's02'})
    assert edge.contracted_order_count == 3


def test_incidence_rows_are_degrees(upx_month_results):
    h = hypergraph.build(upx_month_results, 'UPX')
    matrix = hypergraph.incidence_matrix(h)
    assert matrix.shape == (len(h.nodes), len(h.edges))
    assert list(matrix.sum(axis=1)) == [hypergraph.degree(h, n) for n in h.node_list]
    assert list(matrix.sum(axis=0)) == [e.cardinality for e in h.edges]


def _random_results(rng, token='UPX'):
    accounts = [f"s{i:02d}" for i in range(rng.randint(2, 12))]
    results = []
    for day in range(1, rng.randint(1, 31) + 1):
        if rng.random() < 0.3:
            results.append(make_result(day, token, []))
            continue
        members = rng.sample(accounts, rng.randint(2, len(accounts)))
        buyers, sellers = members[:1], members[1:]
        fills = [(b, BUY, len(sellers)) for b in buyers] + [(s, SELL, 1) for s in sellers]
        results.append(make_result(day, token, fills))
    return results


def test_degree_sum_equals_cardinality_sum_on_1000_graphs():
    rng = random.Random(42)
    for _ in range(1000):
        h = hypergraph.build(_random_results(rng), 'UPX')
        assert sum(hypergraph.degree(h, n) for n in h.nodes) == sum(e.cardinality for e in h.edges)


def test_statistics_ignore_result_order():
    rng = random.Random(9)
    for _ in range(50):
        results = _random_results(rng)
        shuffled = results[:]
        rng.shuffle(shuffled)
        a = hypergraph.build(results, 'UPX')
        b = hypergraph.build(shuffled, 'UPX')
        assert hypergraph.summary(a) == hypergraph.summary(b)
        assert np.array_equal(hypergraph.incidence_matrix(a), hypergraph.incidence_matrix(b))


def test_export_json(tmp_path, upx_month_results):
    h = hypergraph.build(upx_month_results, 'UPX', run_id='abc123')
    path = tmp_path / 'hypergraph_UPX.json'
    hypergraph.export_json(h, str(path))
    doc = json.loads(path.read_text(encoding='utf-8'))
    assert doc['run_id'] == 'abc123'
    assert doc['system_node'] is None
    assert doc['edges'][5]['members'] == ['s01', 's02', 's03', 's04', 's05', 's06']
