# -*- coding: utf-8 -*-
"""
Persistent homology of daily user point clouds
Each active student is a point (tokens traded that day, change in usage from
the previous day). Cech filtration up to triangles, column reduction over
GF(2), H0/H1 persistence pairs and robust cavities.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import MAX_CLOUD_POINTS
from errors import DomainValidationError, InputError

logger = logging.getLogger(__name__)

STANDARD = 'standard'
IDENTITY = 'identity'

DIAGRAM_COLUMNS = ['day', 'dim', 'birth', 'death', 'robustness']
CLOUD_COLUMNS = ['day', 'user', 'x_raw', 'y_raw', 'x_scaled', 'y_scaled']


class DayOutOfRange(InputError):
    pass


class TooManyPoints(DomainValidationError):
    pass


class NonMonotoneFiltration(InputError):
    pass


@dataclass
class PointCloud:
    day: int
    users: List[str]
    raw: np.ndarray
    points: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


class FilteredSimplex(NamedTuple):
    vertices: Tuple[int, ...]
    value: float

    @property
    def dim(self) -> int:
        return len(self.vertices) - 1

    def sort_key(self):
        return self.value, self.dim, self.vertices


@dataclass(frozen=True)
class PersistencePair:
    dim: int
    birth: float
    death: float

    @property
    def robustness(self) -> float:
        return self.death - self.birth

    @property
    def zero_persistence(self) -> bool:
        return self.death == self.birth

    @property
    def essential(self) -> bool:
        return math.isinf(self.death)


# ----------------------------------------------------------------------
# Point clouds
# ----------------------------------------------------------------------

def _active_users(record, day: int) -> List[str]:
    """Students who traded or consumed that day"""
    usage = record.usage_kwh.get(day, {})
    return [s for s in record.students if usage.get(s, 0.0) > 0 or record.traded_volume(day, s) > 0]


def raw_points(record, day: int) -> Tuple[List[str], np.ndarray]:
    if day < 2 or day not in record.usage_kwh or (day - 1) not in record.usage_kwh:
        raise DayOutOfRange(f"Day {day} needs usage for itself and the previous day")
    users = _active_users(record, day)
    today = record.usage_kwh[day]
    yesterday = record.usage_kwh[day - 1]
    coords = [
        (float(record.traded_volume(day, u)), round(today.get(u, 0.0) - yesterday.get(u, 0.0), 3))
        for u in users
    ]
    return users, np.array(coords, dtype=float).reshape(-1, 2)


def month_scaling(record) -> Tuple[np.ndarray, np.ndarray]:
    """Per-axis mean and standard deviation over every point of the month"""
    chunks = [raw_points(record, d)[1] for d in sorted(record.usage_kwh) if d >= 2 and (d - 1) in record.usage_kwh]
    stacked = np.vstack(chunks) if chunks else np.zeros((0, 2))
    if len(stacked) == 0:
        return np.zeros(2), np.ones(2)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def build_point_cloud(record, day: int, scaling: str = STANDARD,
                      stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> PointCloud:
    users, raw = raw_points(record, day)
    if scaling == IDENTITY:
        points = raw.copy()
    elif scaling == STANDARD:
        mean, std = stats if stats is not None else month_scaling(record)
        points = (raw - mean) / std
    else:
        raise InputError(f"Unknown scaling {scaling!r}")
    return PointCloud(day=day, users=users, raw=raw, points=points)


# ----------------------------------------------------------------------
# Filtration
# ----------------------------------------------------------------------

def _enclosing_radius(edge_values: Sequence[float], sides: Sequence[float]) -> float:
    """Minimal enclosing circle radius of a triangle from its side lengths"""
    a, b, c = sorted(sides)
    if a * a + b * b <= c * c:
        # Right, obtuse or degenerate: the circle rests on the longest side
        return max(edge_values)
    area = math.sqrt(max((a + b + c) * (-a + b + c) * (a - b + c) * (a + b - c), 0.0)) / 4.0
    return max(a * b * c / (4.0 * area), max(edge_values))


def cech_filtration(cloud) -> List[FilteredSimplex]:
    """Vertices, edges and triangles with their Cech values, in filtration order"""
    points = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=float).reshape(-1, 2)
    n = len(points)
    if n > MAX_CLOUD_POINTS:
        raise TooManyPoints(f"{n} points, at most {MAX_CLOUD_POINTS} supported")
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    simplices = [FilteredSimplex((i,), 0.0) for i in range(n)]
    edge_value = {}
    for i, j in combinations(range(n), 2):
        edge_value[(i, j)] = float(dist[i, j]) / 2.0
        simplices.append(FilteredSimplex((i, j), edge_value[(i, j)]))
    for i, j, k in combinations(range(n), 3):
        values = (edge_value[(i, j)], edge_value[(i, k)], edge_value[(j, k)])
        sides = (float(dist[i, j]), float(dist[i, k]), float(dist[j, k]))
        simplices.append(FilteredSimplex((i, j, k), _enclosing_radius(values, sides)))
    simplices.sort(key=FilteredSimplex.sort_key)
    return simplices


def _faces(vertices: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    if len(vertices) == 1:
        return []
    return [tuple(v for v in vertices if v != drop) for drop in vertices]


def _index_and_check(filtration: List[FilteredSimplex]) -> Dict[Tuple[int, ...], int]:
    index = {}
    previous = None
    for pos, simplex in enumerate(filtration):
        key = simplex.sort_key()
        if previous is not None and key < previous:
            raise NonMonotoneFiltration(f"Simplex {simplex.vertices} out of order at position {pos}")
        previous = key
        for face in _faces(simplex.vertices):
            if face not in index:
                raise NonMonotoneFiltration(f"Face {face} of {simplex.vertices} missing or later")
            if filtration[index[face]].value > simplex.value:
                raise NonMonotoneFiltration(f"Face {face} has a larger value than {simplex.vertices}")
        index[simplex.vertices] = pos
    return index


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

def compute_persistence(filtration: List[FilteredSimplex]) -> List[PersistencePair]:
    """
    Column reduction of the boundary matrix over GF(2), triangles first so
    that killed edge columns can be cleared without reducing them.
    Returns H0 and H1 pairs sorted by (dim, birth, death); the single
    essential H0 class has death = inf.
    """
    index = _index_and_check(filtration)
    boundary = [{index[f] for f in _faces(s.vertices)} for s in filtration]

    pivot_of: Dict[int, int] = {}
    reduced: Dict[int, set] = {}
    cleared = set()
    for dim in (2, 1):
        for j, simplex in enumerate(filtration):
            if simplex.dim != dim or j in cleared:
                continue
            column = set(boundary[j])
            while column:
                low = max(column)
                if low not in pivot_of:
                    break
                column ^= reduced[pivot_of[low]]
            if column:
                low = max(column)
                pivot_of[low] = j
                reduced[j] = column
                cleared.add(low)

    pairs = []
    for low, j in pivot_of.items():
        born = filtration[low]
        if born.dim <= 1:
            pairs.append(PersistencePair(born.dim, born.value, filtration[j].value))
    for pos, simplex in enumerate(filtration):
        if simplex.dim == 0 and pos not in pivot_of:
            pairs.append(PersistencePair(0, simplex.value, math.inf))
    pairs.sort(key=lambda p: (p.dim, p.birth, p.death))
    return pairs


def robust_cavities(pairs: List[PersistencePair], theta: float) -> List[PersistencePair]:
    """H1 pairs with robustness at least theta, most robust first"""
    robust = [p for p in pairs if p.dim == 1 and p.robustness > 0 and p.robustness >= theta]
    return sorted(robust, key=lambda p: (-p.robustness, p.birth))


def _gf2_rank(matrix: np.ndarray) -> int:
    m = matrix.copy().astype(np.uint8) % 2
    rank = 0
    rows, cols = m.shape
    for col in range(cols):
        hits = np.nonzero(m[rank:, col])[0]
        if len(hits) == 0:
            continue
        pivot = rank + hits[0]
        if pivot != rank:
            m[[rank, pivot]] = m[[pivot, rank]]
        below = np.nonzero(m[:, col])[0]
        for r in below:
            if r != rank:
                m[r] ^= m[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def _boundary_matrix(rows: List[Tuple[int, ...]], cols: List[Tuple[int, ...]]) -> np.ndarray:
    row_index = {s: i for i, s in enumerate(rows)}
    matrix = np.zeros((len(rows), len(cols)), dtype=np.uint8)
    for j, simplex in enumerate(cols):
        for face in _faces(simplex):
            matrix[row_index[face], j] = 1
    return matrix


def betti_at(filtration: List[FilteredSimplex], r: float) -> Tuple[int, int, int]:
    """Betti numbers (b0, b1, b2) of the complex of simplices with value <= r"""
    by_dim = {0: [], 1: [], 2: []}
    for simplex in filtration:
        if simplex.value <= r:
            by_dim[simplex.dim].append(simplex.vertices)
    rank1 = _gf2_rank(_boundary_matrix(by_dim[0], by_dim[1])) if by_dim[1] else 0
    rank2 = _gf2_rank(_boundary_matrix(by_dim[1], by_dim[2])) if by_dim[2] else 0
    b0 = len(by_dim[0]) - rank1
    b1 = len(by_dim[1]) - rank1 - rank2
    b2 = len(by_dim[2]) - rank2
    return b0, b1, b2


def euler_check(filtration: List[FilteredSimplex]) -> bool:
    """V - E + T equals b0 - b1 + b2 at every critical radius"""
    for r in sorted({s.value for s in filtration}):
        counts = [0, 0, 0]
        for simplex in filtration:
            if simplex.value <= r:
                counts[simplex.dim] += 1
        b0, b1, b2 = betti_at(filtration, r)
        if counts[0] - counts[1] + counts[2] != b0 - b1 + b2:
            logger.warning(f"Euler check failed at r={r}")
            return False
    return True


# ----------------------------------------------------------------------
# Month batch
# ----------------------------------------------------------------------

def diagram_for_points(points: np.ndarray) -> List[PersistencePair]:
    return compute_persistence(cech_filtration(points))


@dataclass
class MonthDiagrams:
    run_id: str
    scaling: str
    clouds: Dict[int, PointCloud] = field(default_factory=dict)
    pairs: Dict[int, List[PersistencePair]] = field(default_factory=dict)

    @property
    def days(self) -> List[int]:
        return sorted(self.pairs)


def compute_month_diagrams(record, scaling: str = STANDARD, jobs: int = 1) -> MonthDiagrams:
    """Persistence for every day from 2 on; per-day work runs in parallel when jobs > 1"""
    stats = month_scaling(record) if scaling == STANDARD else None
    days = [d for d in sorted(record.usage_kwh) if d >= 2 and (d - 1) in record.usage_kwh]
    clouds = {d: build_point_cloud(record, d, scaling, stats) for d in days}
    if jobs > 1 and len(days) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(diagram_for_points, [clouds[d].points for d in days]))
    else:
        results = [diagram_for_points(clouds[d].points) for d in days]
    logger.info(f"Persistence computed for {len(days)} days (jobs={jobs})")
    return MonthDiagrams(run_id=record.run_id, scaling=scaling, clouds=clouds, pairs=dict(zip(days, results)))


# ----------------------------------------------------------------------
# CSV codecs
# ----------------------------------------------------------------------

def export_diagram(pairs: List[PersistencePair], day: int) -> pd.DataFrame:
    """Diagram and barcode rows for one day"""
    rows = [{'day': day, 'dim': p.dim, 'birth': p.birth, 'death': p.death, 'robustness': p.robustness}
            for p in pairs]
    return pd.DataFrame(rows, columns=DIAGRAM_COLUMNS)


def write_diagrams(diagrams: Dict[int, List[PersistencePair]], path: str) -> None:
    frames = [export_diagram(diagrams[d], d) for d in sorted(diagrams)]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=DIAGRAM_COLUMNS)
    df.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')


def read_diagrams(path: str) -> Dict[int, List[PersistencePair]]:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"Cannot read persistence diagram {path}: {e}")
    if list(df.columns) != DIAGRAM_COLUMNS:
        raise InputError(f"{path}: header must be {','.join(DIAGRAM_COLUMNS)}")
    diagrams: Dict[int, List[PersistencePair]] = {}
    for row in df.itertuples(index=False):
        diagrams.setdefault(int(row.day), []).append(
            PersistencePair(int(row.dim), float(row.birth), float(row.death))
        )
    return diagrams


def write_point_clouds(clouds: Dict[int, PointCloud], path: str) -> None:
    rows = []
    for day in sorted(clouds):
        cloud = clouds[day]
        for user, raw, scaled in zip(cloud.users, cloud.raw, cloud.points):
            rows.append({'day': day, 'user': user, 'x_raw': raw[0], 'y_raw': raw[1],
                         'x_scaled': scaled[0], 'y_scaled': scaled[1]})
    pd.DataFrame(rows, columns=CLOUD_COLUMNS).to_csv(path, index=False, float_format='%.6f', lineterminator='\n')
