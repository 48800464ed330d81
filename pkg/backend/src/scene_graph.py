"""
Semantic Topology Graph Matching

Builds K-nearest-neighbor scene graphs over map objects, proposes
local-to-global vertex pairs from their sorted and normalized neighbor
distance layouts, and verifies the proposals by label, size, position,
color and embedding consistency.

Author: LunaLynx12
"""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
from geometry import Pose, translation_distance
from scipy.spatial.distance import cdist
from association import Landmark, MapState
from dataclasses import dataclass, field
from features import normalize_embedding
from models import GraphConfig
from errors import DimMismatch
import networkx as nx
import numpy as np
import logging
import math


log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Vertex:
    """
    Scene graph vertex: one object and its semantic properties.
    """
    id: int
    label: str
    pose: Pose
    dims: np.ndarray
    hist: np.ndarray
    emb: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return self.pose.t


def vertex_from_landmark(lm: Landmark) -> Vertex:
    """
    Summarizes a landmark's histories as one histogram and one unit embedding.
    """
    hist = np.mean(np.asarray(lm.hists), axis=0)
    return Vertex(id=lm.id, label=lm.label, pose=lm.pose, dims=np.asarray(lm.dims, dtype=float),
                  hist=hist / hist.sum(), emb=normalize_embedding(np.mean(np.asarray(lm.embs), axis=0)))


class SceneGraph:
    """
    Undirected K-NN graph. Edge weights are center distances.

    Attributes:
        graph (nx.Graph): Vertex ids with a `length` attribute on every edge
        vertices (Dict[int, Vertex]): Vertex data by id
        knn (int): Neighbors requested per vertex
    """
    def __init__(self, vertices: Sequence[Vertex], knn: int):
        if knn < 1:
            raise ValueError("knn must be at least 1")
        self.knn = knn
        self.vertices: Dict[int, Vertex] = {v.id: v for v in sorted(vertices, key=lambda v: v.id)}
        self.ids = list(self.vertices)
        self.positions = np.array([self.vertices[i].position for i in self.ids]).reshape(-1, 3)
        self.distances = cdist(self.positions, self.positions) if self.ids else np.zeros((0, 0))
        self.graph = nx.Graph()
        self.graph.add_nodes_from(self.ids)

    def neighbors(self, vid: int) -> List[Tuple[float, int]]:
        """
        The knn nearest other vertices as (distance, id), ties broken by id.
        """
        row = self.ids.index(vid)
        order = sorted((float(self.distances[row, j]), self.ids[j]) for j in range(len(self.ids)) if j != row)
        return order[:self.knn]

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0) if len(self.ids) else np.zeros(3)

    def export(self) -> dict:
        return {
            "vertices": [
                {"id": v.id, "label": v.label, "position": [float(x) for x in v.position],
                 "dims": [float(x) for x in v.dims]}
                for v in self.vertices.values()
            ],
            "edges": [[int(a), int(b), float(d["length"])] for a, b, d in sorted(self.graph.edges(data=True))],
        }


def _as_vertex(item: Union[Vertex, Landmark]) -> Vertex:
    return item if isinstance(item, Vertex) else vertex_from_landmark(item)


def build_graph(objects: Iterable[Union[Vertex, Landmark]], knn: int) -> SceneGraph:
    """
    Connects every object to its knn nearest neighbors by center distance.

    param objects: Landmarks or prepared vertices
    type objects: Iterable[Union[Vertex, Landmark]]
    param knn: Neighbors per vertex
    type knn: int
    return: Graph whose edge set is the union of every vertex's neighbor edges
    rtype: SceneGraph
    """
    g = SceneGraph([_as_vertex(o) for o in objects], knn)
    for vid in g.ids:
        for _, other in g.neighbors(vid):
            length = translation_distance(g.vertices[vid].pose, g.vertices[other].pose)
            g.graph.add_edge(vid, other, length=length)
    return g


def layout_descriptor(g: SceneGraph, vid: int, knn: Optional[int] = None) -> np.ndarray:
    """
    Sorted, normalized knn neighbor distances of a vertex.

    param g: Scene graph
    type g: SceneGraph
    param vid: Vertex id
    type vid: int
    param knn: Descriptor length, the graph's knn by default
    type knn: Optional[int]
    return: Ascending weights summing to one, all zeros for an isolated vertex
    rtype: np.ndarray
    """
    knn = knn or g.knn
    row = g.ids.index(vid)
    dists = np.sort(np.delete(g.distances[row], row))[:knn]
    desc = np.zeros(knn)
    desc[knn - len(dists):] = dists
    total = desc.sum()
    return desc / total if total > 0 else desc


def layout_difference(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimMismatch(f"descriptor lengths {a.shape} and {b.shape} differ")
    return float(np.linalg.norm(a - b))


@dataclass
class MatchCandidate:
    local: int
    glob: int
    d_f: float
    s_l: float = 0.0


@dataclass
class MatchSet:
    """
    One-to-one verified local/global vertex pairs.
    """
    pairs: List[MatchCandidate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def mean_similarity(self) -> float:
        return float(np.mean([p.s_l for p in self.pairs])) if self.pairs else 0.0

    @property
    def score(self) -> float:
        """
        Loop detection score: match count plus half the mean semantic similarity.
        """
        return len(self.pairs) + self.mean_similarity / 2.0

    def key(self) -> frozenset:
        return frozenset((p.local, p.glob) for p in self.pairs)


def candidate_matches(g_l: SceneGraph, g_g: SceneGraph, cfg: GraphConfig) -> List[MatchCandidate]:
    """
    All local/global vertex pairs whose layout difference is below delta.
    Pairs involving an isolated vertex are skipped.
    """
    if not g_l.ids or not g_g.ids:
        return []
    DL = np.array([layout_descriptor(g_l, v, cfg.knn) for v in g_l.ids])
    DG = np.array([layout_descriptor(g_g, v, cfg.knn) for v in g_g.ids])
    D = cdist(DL, DG)
    informative_l = DL.sum(axis=1) > 0
    informative_g = DG.sum(axis=1) > 0

    out = []
    for i, j in zip(*np.nonzero(D < cfg.delta)):
        if informative_l[i] and informative_g[j]:
            out.append(MatchCandidate(g_l.ids[i], g_g.ids[j], float(D[i, j])))
    return out


def semantic_similarity(v: Vertex, w: Vertex, mu: float, literal: bool = False,
                        origin_v: Optional[np.ndarray] = None, origin_w: Optional[np.ndarray] = None) -> float:
    """
    Semantic consistency of two vertices.

    Zero when labels differ. Otherwise mu * (d_s + d_p) + (1 - mu) * (d_c + d_e)
    where d_s, d_p, d_c and d_e are exp(-norm of difference) of dims, positions,
    histograms and embeddings. Positions are taken relative to the given origins.
    With `literal`, color and embedding terms use exp(-|dot product|) instead.

    param v: Local vertex
    type v: Vertex
    param w: Global vertex
    type w: Vertex
    param mu: Geometry weight in [0, 1]
    type mu: float
    param literal: Use the dot-product form for color and embedding
    type literal: bool
    param origin_v: Reference point subtracted from v's position
    type origin_v: Optional[np.ndarray]
    param origin_w: Reference point subtracted from w's position
    type origin_w: Optional[np.ndarray]
    return: Similarity in {0} or (0, 2]
    rtype: float
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu {mu} outside [0, 1]")
    if v.label != w.label:
        return 0.0
    pv = v.position - (0.0 if origin_v is None else origin_v)
    pw = w.position - (0.0 if origin_w is None else origin_w)
    d_s = math.exp(-np.linalg.norm(v.dims - w.dims))
    d_p = math.exp(-np.linalg.norm(pv - pw))
    if literal:
        d_c = math.exp(-abs(float(v.hist @ w.hist)))
        d_e = math.exp(-abs(float(v.emb @ w.emb)))
    else:
        d_c = math.exp(-np.linalg.norm(v.hist - w.hist))
        d_e = math.exp(-np.linalg.norm(v.emb - w.emb))
    return mu * (d_s + d_p) + (1.0 - mu) * (d_c + d_e)


def verify_matches(candidates: List[MatchCandidate], g_l: SceneGraph, g_g: SceneGraph, cfg: GraphConfig) -> MatchSet:
    """
    Scores candidates semantically, drops those below tau and resolves conflicts
    one-to-one by higher similarity, then lower layout difference, then lower id pair.

    param candidates: Layout candidates from candidate_matches
    type candidates: List[MatchCandidate]
    param g_l: Local graph
    type g_l: SceneGraph
    param g_g: Global graph
    type g_g: SceneGraph
    param cfg: Graph settings
    type cfg: GraphConfig
    return: Verified one-to-one matches
    rtype: MatchSet
    """
    origin_l = g_l.centroid if cfg.centroid_relative else None
    origin_g = g_g.centroid if cfg.centroid_relative else None
    scored = []
    for c in candidates:
        s = semantic_similarity(g_l.vertices[c.local], g_g.vertices[c.glob], cfg.mu,
                                cfg.literal_appearance, origin_l, origin_g)
        if s >= cfg.tau:
            scored.append(MatchCandidate(c.local, c.glob, c.d_f, s))

    scored.sort(key=lambda c: (-c.s_l, c.d_f, c.local, c.glob))
    used_l, used_g, kept = set(), set(), []
    for c in scored:
        if c.local in used_l or c.glob in used_g:
            continue
        used_l.add(c.local)
        used_g.add(c.glob)
        kept.append(c)
    return MatchSet(sorted(kept, key=lambda c: (c.local, c.glob)))


def match_graphs(local: Iterable[Union[Vertex, Landmark]], glob: Iterable[Union[Vertex, Landmark]],
                 cfg: GraphConfig) -> MatchSet:
    """
    Two-stage matching without the min_matches gate.
    """
    local, glob = list(local), list(glob)
    if not local or not glob:
        return MatchSet()
    g_l = build_graph(local, cfg.knn)
    g_g = build_graph(glob, cfg.knn)
    return verify_matches(candidate_matches(g_l, g_g, cfg), g_l, g_g, cfg)


def detect_loop(local: Iterable[Union[Vertex, Landmark]], glob: Iterable[Union[Vertex, Landmark]],
                cfg: GraphConfig) -> Optional[MatchSet]:
    """
    Matches the local map slice against the global map.

    return: The verified MatchSet when it holds at least min_matches pairs, else None
    rtype: Optional[MatchSet]
    """
    matches = match_graphs(local, glob, cfg)
    return matches if len(matches) >= cfg.min_matches else None


def split_local_global(state: MapState, frame: int, loop_window: int) -> Tuple[List[Landmark], List[Landmark]]:
    """
    Local slice: landmarks first observed within `loop_window` keyframes of `frame`.
    Global map: landmarks neither first nor last observed within that span.
    """
    start = frame - loop_window
    local, glob = [], []
    for lm in sorted(state.landmarks.values(), key=lambda o: o.id):
        if lm.first_frame > start:
            local.append(lm)
        elif lm.last_frame <= start:
            glob.append(lm)
    return local, glob
