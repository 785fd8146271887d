# -*- coding: utf-8 -*-
"""
Transaction hypergraph module
One hyperedge per trading day joining every account whose order was filled
that day; degree, cardinality and incidence summaries for one token
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional

import numpy as np

from auction import ClearingResult
from config import SYSTEM_ACCOUNT
from errors import DomainValidationError, InputError
from ledger import token_value

logger = logging.getLogger(__name__)

EXPORT_SYSTEM_NODE = 'admin'


class MixedTokens(InputError):
    pass


class UnknownNode(DomainValidationError):
    pass


@dataclass(frozen=True)
class Hyperedge:
    day: int
    members: FrozenSet[str]
    contracted_order_count: int
    token: str = ''

    @property
    def cardinality(self) -> int:
        return len(self.members)

    def to_dict(self) -> Dict:
        return {
            'day': self.day,
            'members': sorted(self.members),
            'contracted_order_count': self.contracted_order_count,
        }


@dataclass
class Hypergraph:
    token: str
    nodes: FrozenSet[str] = frozenset()
    edges: List[Hyperedge] = field(default_factory=list)
    run_id: str = ''

    @property
    def node_list(self) -> List[str]:
        return sorted(self.nodes)


def daily_hyperedge(result: ClearingResult) -> Optional[Hyperedge]:
    """None when nothing traded; otherwise the filled accounts of the day"""
    if result.volume == 0:
        return None
    filled = [f for f in result.fills if f.qty > 0]
    return Hyperedge(
        day=result.day,
        members=frozenset(f.account for f in filled),
        contracted_order_count=len({f.order_id for f in filled}),
        token=result.token,
    )


def build(results: Iterable[ClearingResult], token, participants: Iterable[str] = (), run_id: str = '') -> Hypergraph:
    """
    Hypergraph of one token over a month of clearing results.
    participants adds accounts that never traded as isolated nodes.
    """
    token = token_value(token)
    edges = []
    for result in results:
        if result.token != token:
            raise MixedTokens(f"Day {result.day} result is {result.token}, expected {token}")
        edge = daily_hyperedge(result)
        if edge is not None:
            edges.append(edge)
    edges.sort(key=lambda e: e.day)
    days = [e.day for e in edges]
    if len(set(days)) != len(days):
        raise InputError(f"More than one {token} result for a day: {days}")
    nodes = set(participants)
    for edge in edges:
        nodes |= edge.members
    logger.info(f"{token} hypergraph: {len(nodes)} nodes, {len(edges)} edges")
    return Hypergraph(token=token, nodes=frozenset(nodes), edges=edges, run_id=run_id)


def degree(h: Hypergraph, node: str) -> int:
    if node not in h.nodes:
        raise UnknownNode(f"{node} is not a node of the {h.token} hypergraph")
    return sum(1 for e in h.edges if node in e.members)


def cardinality_histogram(h: Hypergraph) -> Dict[int, int]:
    return dict(sorted(Counter(e.cardinality for e in h.edges).items()))


def incidence_matrix(h: Hypergraph) -> np.ndarray:
    """0/1 matrix, rows follow node_list, columns follow edges in day order"""
    nodes = h.node_list
    index = {n: i for i, n in enumerate(nodes)}
    matrix = np.zeros((len(nodes), len(h.edges)), dtype=np.int64)
    for j, edge in enumerate(h.edges):
        for member in edge.members:
            matrix[index[member], j] = 1
    return matrix


def ranking(h: Hypergraph) -> List[Dict]:
    """Nodes by degree, highest first, ties by id"""
    degrees = incidence_matrix(h).sum(axis=1) if h.edges else np.zeros(len(h.nodes), dtype=np.int64)
    rows = [{'node': n, 'degree': int(d)} for n, d in zip(h.node_list, degrees)]
    return sorted(rows, key=lambda r: (-r['degree'], r['node']))


def summary(h: Hypergraph) -> Dict:
    return {
        'token': h.token,
        'nodes': len(h.nodes),
        'edges': len(h.edges),
        'cardinality_histogram': {str(k): v for k, v in cardinality_histogram(h).items()},
        'ranking': ranking(h),
    }


def to_document(h: Hypergraph, system_account: str = SYSTEM_ACCOUNT) -> Dict:
    """Exports always name the system node EXPORT_SYSTEM_NODE, whatever the ledger calls it"""
    def rename(nodes):
        return sorted(EXPORT_SYSTEM_NODE if n == system_account else n for n in nodes)

    edges = []
    for e in h.edges:
        doc = e.to_dict()
        doc['members'] = rename(e.members)
        edges.append(doc)
    return {
        'run_id': h.run_id,
        'token': h.token,
        'system_node': EXPORT_SYSTEM_NODE if system_account in h.nodes else None,
        'nodes': rename(h.nodes),
        'edges': edges,
    }


def export_json(h: Hypergraph, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(to_document(h), sort_keys=True, indent=2) + '\n')
