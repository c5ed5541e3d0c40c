"""Division detection: children pairs, parent estimation, and frame reduction.

Candidate children pairs are target-frame cell pairs with nearby centers.
Each carries five penalties (lineage, gap, alignment deviation, length ratio,
length rank); a binary Boltzmann machine selects the subset of pairs matching
the known division count while penalizing pairs that share a cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from . import annealer
from .annealer import BmProblem, Clique, Schedule
from .errors import InfeasibleError, ValidationError
from .geometry import Cell, Frame, cross2, line_angle

PENALTY_NAMES = ("lin", "gap", "dev", "ratio", "rank")


@dataclass(frozen=True)
class DistortionWeights:
    """Weights of the parent-children geometric distortion terms."""

    cen: float = 0.255
    siz: float = 0.05
    ang: float = 0.05


@dataclass(frozen=True)
class DivisionWeights:
    """Weights combining the pair penalties into the selection energy."""

    distortion: DistortionWeights = field(default_factory=DistortionWeights)
    lin: float = 1.0
    gap: float = 0.01
    dev: float = 1.0
    ratio: float = 0.0001
    rank: float = 0.05
    q: float | None = None  # None: 10x the largest combined penalty

    @classmethod
    def from_dict(cls, data: dict) -> "DivisionWeights":
        data = dict(data)
        dist = DistortionWeights(**data.pop("distortion", {}))
        try:
            return cls(distortion=dist, **data)
        except TypeError as exc:
            raise ValidationError(f"bad division weights: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "distortion": {
                "cen": self.distortion.cen,
                "siz": self.distortion.siz,
                "ang": self.distortion.ang,
            },
            "lin": self.lin,
            "gap": self.gap,
            "dev": self.dev,
            "ratio": self.ratio,
            "rank": self.rank,
            "q": self.q,
        }


@dataclass(frozen=True)
class PairCandidate:
    """A plausible children pair with its penalty vector and estimated parent."""

    pair: tuple[str, str]
    lin: float
    gap: float
    dev: float
    ratio: float
    rank: float
    parent: str | None

    def penalties(self) -> tuple[float, float, float, float, float]:
        return (self.lin, self.gap, self.dev, self.ratio, self.rank)

    def penalty(self, name: str) -> float:
        return getattr(self, "ratio" if name == "rat" else name)

    def combined(self, weights: DivisionWeights) -> float:
        return (
            weights.lin * self.lin
            + weights.gap * self.gap
            + weights.dev * self.dev
            + weights.ratio * self.ratio
            + weights.rank * self.rank
        )


@dataclass(frozen=True)
class ShortLineage:
    parent: str
    children: tuple[str, str]
    distortion: float


def distortion(
    parent: Cell, c1: Cell, c2: Cell, weights: DistortionWeights = DistortionWeights()
) -> float:
    """Geometric distortion of dividing ``parent`` into children ``c1``, ``c2``.

    Combines the offset of the children midpoint from the parent center, the
    length mismatch, and three line angles (children axes against the parent
    axis, and the children separation direction against the parent axis).
    Angles of coincident children centers count as zero.
    """
    cen = float(np.hypot(*(parent.center - (c1.center + c2.center) / 2.0)))
    siz = abs(parent.length - (c1.length + c2.length))
    sep = c2.center - c1.center
    ang = (
        line_angle(parent.axis_dir, c1.axis_dir)
        + line_angle(parent.axis_dir, c2.axis_dir)
        + line_angle(parent.axis_dir, sep)
    )
    return weights.cen * cen + weights.siz * siz + weights.ang * ang


def shlin_admits(parent: Cell, c1: Cell, c2: Cell, w: float) -> bool:
    """Short-lineage feasibility: both children centers within w + L/4 of the
    parent center, L the parent length."""
    reach = w + parent.length / 4.0
    return (
        float(np.hypot(*(c1.center - parent.center))) <= reach
        and float(np.hypot(*(c2.center - parent.center))) <= reach
    )


def estimate_parent(
    b1: Cell,
    b2: Cell,
    frame: Frame,
    w: float,
    weights: DistortionWeights = DistortionWeights(),
    exclude: set[str] | None = None,
) -> tuple[str, float] | None:
    """Most likely parent: brute-force distortion minimum over the feasible
    cells of ``frame``. Ties break toward the lowest parent id. Returns None
    when no cell is feasible."""
    best: tuple[float, str] | None = None
    for cell in frame.cells:
        if exclude and cell.id in exclude:
            continue
        if not shlin_admits(cell, b1, b2, w):
            continue
        value = distortion(cell, b1, b2, weights)
        key = (value, cell.id)
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return best[1], best[0]


def pair_penalties(b1: Cell, b2: Cell, l_min: float) -> tuple[float, float, float, float]:
    """(gap, dev, ratio, rank) for a candidate children pair.

    ``l_min`` is the minimum cell length over the whole target frame. The
    deviation penalty uses the two closest endpoints against the line through
    the centers; coincident centers yield an infinite deviation sentinel.
    """
    tips1, tips2 = b1.tips, b2.tips
    best = None
    for x in tips1:
        for y in tips2:
            d = float(np.hypot(*(x - y)))
            if best is None or d < best[0]:
                best = (d, x, y)
    gap, x1, x2 = best
    sep = b2.center - b1.center
    norm = float(np.hypot(*sep))
    if norm == 0.0:
        dev = math.inf
    else:
        d1 = abs(float(cross2(sep, x1 - b1.center))) / norm
        d2 = abs(float(cross2(sep, x2 - b1.center))) / norm
        dev = (d1 + d2) / norm
    ratio = abs(b1.length / b2.length + b2.length / b1.length - 2.0)
    rank = abs(b1.length / l_min - 1.0) + abs(b2.length / l_min - 1.0)
    return gap, dev, ratio, rank


def build_pch(
    frame: Frame,
    next_frame: Frame,
    tau: float = 45.0,
    w: float = 45.0,
    weights: DistortionWeights = DistortionWeights(),
) -> list[PairCandidate]:
    """Plausible children pairs: unordered target pairs with center distance
    strictly below ``tau``, each with its five penalties.

    Pairs with no feasible parent or with coincident centers cannot be true
    children pairs and are dropped, keeping all penalty vectors finite.
    """
    if len(next_frame) == 0:
        raise ValidationError("next frame is empty")
    l_min = min(c.length for c in next_frame.cells)
    centers = next_frame.centers()
    out: list[PairCandidate] = []
    cells = next_frame.cells
    n = len(cells)
    for i in range(n):
        dists = np.hypot(*(centers[i + 1 :] - centers[i]).T) if i + 1 < n else []
        for off, d in enumerate(dists):
            if d >= tau:
                continue
            b1, b2 = cells[i], cells[i + 1 + off]
            gap, dev, ratio, rank = pair_penalties(b1, b2, l_min)
            if not math.isfinite(dev):
                continue
            parent = estimate_parent(b1, b2, frame, w, weights)
            if parent is None:
                continue
            out.append(
                PairCandidate(
                    pair=(b1.id, b2.id),
                    lin=parent[1],
                    gap=gap,
                    dev=dev,
                    ratio=ratio,
                    rank=rank,
                    parent=parent[0],
                )
            )
    return out


# touching siblings have endpoint distance ~ width (the rounded caps), so the
# gap bound must clear the rod diameter
DEFAULT_TRIM_THRESHOLDS = {"gap": 12.0, "dev": 0.6, "rank": 1.2}


def trim_candidates(
    candidates: Sequence[PairCandidate],
    thresholds: dict[str, float] | None = None,
    reject_if_any: bool = False,
) -> list[PairCandidate]:
    """Trim implausible pairs by empirical penalty thresholds.

    Default rule: a candidate is rejected only when ALL thresholded penalties
    exceed their bounds. ``reject_if_any`` switches to the stricter rule that
    rejects as soon as one penalty exceeds its bound.
    """
    if thresholds is None:
        thresholds = DEFAULT_TRIM_THRESHOLDS
    unknown = set(thresholds) - set(PENALTY_NAMES) - {"rat"}
    if unknown:
        raise ValidationError(f"unknown trim penalty names: {sorted(unknown)}")
    if not thresholds:
        return list(candidates)
    kept = []
    for cand in candidates:
        exceeds = [cand.penalty(name) > bound for name, bound in thresholds.items()]
        reject = any(exceeds) if reject_if_any else all(exceeds)
        if not reject:
            kept.append(cand)
    return kept


def scatter_rows(
    candidates: Sequence[PairCandidate], true_pairs: set[frozenset] | None = None
) -> list[list]:
    """Rows for the penalty-tandem scatter CSV:
    candidate_id,is_true_pair,lin,gap,dev,ratio,rank."""
    rows = []
    for cand in candidates:
        flag = ""
        if true_pairs is not None:
            flag = int(frozenset(cand.pair) in true_pairs)
        rows.append(
            [
                "+".join(cand.pair),
                flag,
                cand.lin,
                cand.gap,
                cand.dev,
                cand.ratio,
                cand.rank,
            ]
        )
    return rows


@dataclass
class ChildrenBmProblem:
    """Binary BM over candidate pairs: E(z) = <V, z> + lambda_Q <z, Qz>."""

    candidates: list[PairCandidate]
    v: np.ndarray
    q: np.ndarray
    div_count: int
    lambda_q: float
    infeasible: bool

    @property
    def m(self) -> int:
        return len(self.candidates)

    def energy(self, z: Sequence[int]) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(self.v @ z + self.lambda_q * (z @ self.q @ z))

    def to_bm(self) -> BmProblem:
        cliques = [
            Clique((j,), np.array([0.0, self.v[j]])) for j in range(self.m)
        ]
        pair_table = np.array([[0.0, 0.0], [0.0, 2.0 * self.lambda_q]])
        for j in range(self.m):
            for k in range(j + 1, self.m):
                if self.q[j, k]:
                    cliques.append(Clique((j, k), pair_table))
        return BmProblem([[0, 1]] * self.m, cliques)


def max_disjoint_candidates(candidates: Sequence[PairCandidate]) -> int:
    """Largest number of pairwise-disjoint candidates: a maximum matching in
    the graph whose vertices are target cells and edges are candidates."""
    graph = nx.Graph()
    graph.add_edges_from(cand.pair for cand in candidates)
    return len(nx.max_weight_matching(graph, maxcardinality=True))


def build_children_bm(
    candidates: Sequence[PairCandidate],
    div_count: int,
    weights: DivisionWeights = DivisionWeights(),
) -> ChildrenBmProblem:
    """Assemble the children-selection BM.

    The conflict matrix marks candidate pairs sharing exactly one cell. The
    problem is flagged infeasible when no disjoint subset of the requested
    cardinality exists.
    """
    if div_count < 1:
        raise ValidationError("division count must be at least 1")
    if not candidates:
        raise ValidationError("no candidate children pairs")
    m = len(candidates)
    v = np.array([cand.combined(weights) for cand in candidates])
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValidationError("candidate penalties must be finite and non-negative")
    q = np.zeros((m, m), dtype=np.uint8)
    for j in range(m):
        sj = set(candidates[j].pair)
        for k in range(j + 1, m):
            if len(sj & set(candidates[k].pair)) == 1:
                q[j, k] = q[k, j] = 1
    lambda_q = weights.q if weights.q is not None else 10.0 * max(float(v.max()), 1.0)
    infeasible = max_disjoint_candidates(candidates) < div_count
    return ChildrenBmProblem(list(candidates), v, q, div_count, lambda_q, infeasible)


def _greedy_initial(problem: ChildrenBmProblem, card: int) -> np.ndarray:
    """Deterministic start: lowest-penalty candidates, preferring disjoint ones."""
    order = np.lexsort((np.arange(problem.m), problem.v))
    z = np.zeros(problem.m, dtype=np.int64)
    used: set[str] = set()
    chosen = 0
    for j in order:
        if chosen == card:
            break
        if not used & set(problem.candidates[j].pair):
            z[j] = 1
            used.update(problem.candidates[j].pair)
            chosen += 1
    if chosen < card:
        for j in order:
            if chosen == card:
                break
            if not z[j]:
                z[j] = 1
                chosen += 1
    return z


def solve_children_bm(
    problem: ChildrenBmProblem,
    schedule: Schedule | None = None,
    rng_seed: int = 0,
    relax_cardinality: bool = False,
) -> list[int]:
    """Select the candidate subset by cardinality-constrained swap annealing.

    Returns indices of the selected candidates. With ``relax_cardinality`` an
    infeasible exact count falls back to one fewer division; anything beyond
    that margin raises InfeasibleError.
    """
    card = problem.div_count
    if problem.infeasible:
        if relax_cardinality and max_disjoint_candidates(problem.candidates) >= card - 1:
            card = card - 1
        else:
            raise InfeasibleError(
                f"only {max_disjoint_candidates(problem.candidates)} disjoint "
                f"children pairs available for {problem.div_count} divisions"
            )
    if card == 0:
        return []
    if card > problem.m:
        raise InfeasibleError("fewer candidates than requested divisions")
    if schedule is None:
        schedule = Schedule.children_default()
    result = annealer.anneal(
        problem.to_bm(),
        dynamics="swap",
        schedule=schedule,
        rng_seed=rng_seed,
        initial_states=_greedy_initial(problem, card),
    )
    return [int(j) for j in np.flatnonzero(result.best_states)]


def select_short_lineages(
    frame: Frame,
    next_frame: Frame,
    candidates: Sequence[PairCandidate],
    selected: Iterable[int],
    w: float,
    weights: DistortionWeights = DistortionWeights(),
) -> tuple[list[ShortLineage], list[tuple[str, str]]]:
    """Turn selected candidates into short lineages with distinct parents.

    Selections are consumed in increasing lineage-penalty order; when one
    claims an already-taken parent, the distortion argmin is re-run over the
    remaining feasible parents. Pairs left without any parent are dropped and
    reported in the second return value.
    """
    chosen = sorted(selected, key=lambda j: (candidates[j].lin, j))
    taken: set[str] = set()
    lineages: list[ShortLineage] = []
    dropped: list[tuple[str, str]] = []
    for j in chosen:
        cand = candidates[j]
        parent, value = cand.parent, cand.lin
        if parent in taken:
            alt = estimate_parent(
                next_frame.cell(cand.pair[0]),
                next_frame.cell(cand.pair[1]),
                frame,
                w,
                weights,
                exclude=taken,
            )
            if alt is None:
                dropped.append(cand.pair)
                continue
            parent, value = alt
        lineages.append(ShortLineage(parent, cand.pair, value))
        taken.add(parent)
    return lineages, dropped


def reduce_frames(
    frame: Frame, next_frame: Frame, lineages: Sequence[ShortLineage]
) -> tuple[Frame, Frame, dict[str, tuple[str, str]]]:
    """Remove each lineage's parent from the source frame and its children
    from the target frame, leaving a division-free registration instance.

    Raises on lineages sharing a parent or a child.
    """
    parents = [sl.parent for sl in lineages]
    children = [cid for sl in lineages for cid in sl.children]
    if len(set(parents)) != len(parents) or len(set(children)) != len(children):
        raise ValidationError("non-disjoint lineages")
    red_b = frame.without(parents)
    red_b_plus = next_frame.without(children)
    div_map = {sl.parent: sl.children for sl in lineages}
    return red_b, red_b_plus, div_map
