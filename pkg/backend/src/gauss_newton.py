"""
Manifold Gauss-Newton Solver

Nonlinear least squares over SE(3) pose blocks. Every residual block is the
twist log(F_1 * F_2 * ... * F_m) of a product of factors, each factor being a
constant pose, a variable or the inverse of a variable. Jacobians are central
finite differences on the right-multiplied tangent space, evaluated for all
blocks at once; updates are T <- T * exp(delta) with step halving.

Author: LunaLynx12
"""

from errors import SingularNormalEquations
from typing import List, Optional, Sequence, Tuple, Union
from geometry import Pose, exp_batch, log_batch
from dataclasses import dataclass, field
from models import SolverConfig
from pathlib import Path
import scipy.linalg
import numpy as np
import itertools
import formats
import logging


log = logging.getLogger(__name__)

TRACE_COLUMNS = ["iteration", "cost", "step_norm"]
_solve_ids = itertools.count()


@dataclass(frozen=True)
class VarTerm:
    """
    Reference to a variable block, optionally inverted.
    """
    index: int
    inverse: bool = False


Term = Union[VarTerm, Pose]


def var(index: int) -> VarTerm:
    return VarTerm(index)


def inv(index: int) -> VarTerm:
    return VarTerm(index, inverse=True)


@dataclass
class ResidualBlock:
    terms: Tuple[Term, ...]
    info: np.ndarray
    tag: Optional[str] = None

    def variables(self) -> List[int]:
        return sorted({t.index for t in self.terms if isinstance(t, VarTerm)})


@dataclass
class GNReport:
    """
    Outcome of one solve.

    Attributes:
        iterations (int): Accepted updates
        initial_cost (float): Cost before the first update
        final_cost (float): Cost after the last accepted update
        converged (bool): False when the iteration cap was hit or progress stalled
        history (List[Tuple[int, float, float]]): (iteration, cost, step norm) per accepted update
    """
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = True
    history: List[Tuple[int, float, float]] = field(default_factory=list)

    def trace_rows(self) -> List[dict]:
        """
        Iteration 0 carries the initial cost, then one row per accepted update.
        """
        rows = [(0, self.initial_cost, 0.0)] + list(self.history)
        return [dict(zip(TRACE_COLUMNS, r)) for r in rows]


class NLLSProblem:
    """
    Pose blocks (each fixed or free) plus residual blocks with 6x6 information matrices.
    """
    def __init__(self, name: str = "solve"):
        self.name = name
        self.poses: List[Pose] = []
        self.fixed: List[bool] = []
        self.blocks: List[ResidualBlock] = []

    def add_variable(self, pose: Pose, fixed: bool = False) -> int:
        self.poses.append(pose)
        self.fixed.append(fixed)
        return len(self.poses) - 1

    def add_residual(self, terms: Sequence[Term], info: Optional[np.ndarray] = None, tag: Optional[str] = None) -> int:
        """
        Adds the residual log(prod(terms)) weighted by `info`.

        param terms: Constant poses and variable references, multiplied left to right
        type terms: Sequence[Term]
        param info: 6x6 symmetric positive definite information, identity by default
        type info: Optional[np.ndarray]
        param tag: Free-form label carried into diagnostics
        type tag: Optional[str]
        return: Index of the new residual block
        rtype: int
        raises ValueError: If a term references a missing variable or info is not 6x6 SPD
        """
        for t in terms:
            if isinstance(t, VarTerm) and not 0 <= t.index < len(self.poses):
                raise ValueError(f"residual references unknown variable {t.index}")
        info = np.eye(6) if info is None else np.asarray(info, dtype=float)
        if info.shape != (6, 6) or not np.allclose(info, info.T):
            raise ValueError("information matrix must be symmetric 6x6")
        if np.linalg.eigvalsh(info).min() <= 0:
            raise ValueError("information matrix must be positive definite")
        self.blocks.append(ResidualBlock(tuple(terms), info, tag))
        return len(self.blocks) - 1

    @property
    def free(self) -> List[int]:
        return [i for i, f in enumerate(self.fixed) if not f]

    def _layout(self):
        width = max(len(b.terms) for b in self.blocks)
        kind = np.zeros((len(self.blocks), width), dtype=int)
        index = np.zeros((len(self.blocks), width), dtype=int)
        const = np.tile(np.eye(4), (len(self.blocks), width, 1, 1))
        for b, block in enumerate(self.blocks):
            for f, t in enumerate(block.terms):
                if isinstance(t, VarTerm):
                    kind[b, f] = 2 if t.inverse else 1
                    index[b, f] = t.index
                else:
                    const[b, f] = t.matrix()
        return kind, index, const

    def residuals(self, X: np.ndarray) -> np.ndarray:
        """
        Residual twists (B, 6) for stacked variables X (n, 4, 4).
        """
        kind, index, const = self._layout()
        return _evaluate(X, kind, index, const)

    def cost(self, X: Optional[np.ndarray] = None) -> float:
        X = self.stacked() if X is None else X
        r = self.residuals(X)
        info = np.array([b.info for b in self.blocks])
        return float(np.einsum("bi,bij,bj->", r, info, r))

    def stacked(self) -> np.ndarray:
        return np.array([p.matrix() for p in self.poses]).reshape(-1, 4, 4)


def _invert(X: np.ndarray) -> np.ndarray:
    out = np.zeros_like(X)
    Rt = np.swapaxes(X[..., :3, :3], -1, -2)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, X[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def _factor(X: np.ndarray, Xinv: np.ndarray, kind: np.ndarray, index: np.ndarray, const: np.ndarray) -> np.ndarray:
    M = const.copy()
    direct, inverse = kind == 1, kind == 2
    M[direct] = X[index[direct]]
    M[inverse] = Xinv[index[inverse]]
    return M


def _evaluate(X: np.ndarray, kind: np.ndarray, index: np.ndarray, const: np.ndarray) -> np.ndarray:
    Xinv = _invert(X)
    prod = _factor(X, Xinv, kind[:, 0], index[:, 0], const[:, 0])
    for f in range(1, kind.shape[1]):
        prod = prod @ _factor(X, Xinv, kind[:, f], index[:, f], const[:, f])
    return log_batch(prod)


def _jacobians(X: np.ndarray, pairs: np.ndarray, kind: np.ndarray, index: np.ndarray,
               const: np.ndarray, step: float) -> np.ndarray:
    """
    Central-difference Jacobians (P, 6, 6) of block pairs[p, 0] with respect to variable pairs[p, 1].
    """
    Xinv = _invert(X)
    E = exp_batch(np.vstack([np.eye(6) * step, -np.eye(6) * step]))
    Einv = _invert(E)
    blocks, wrt = pairs[:, 0], pairs[:, 1]

    prod = None
    for f in range(kind.shape[1]):
        k, idx = kind[blocks, f], index[blocks, f]
        base = _factor(X, Xinv, k, idx, const[blocks, f])
        M = np.repeat(base[:, None], 12, axis=1)
        hit = idx == wrt
        direct, inverse = hit & (k == 1), hit & (k == 2)
        M[direct] = X[wrt[direct]][:, None] @ E[None]
        M[inverse] = Einv[None] @ Xinv[wrt[inverse]][:, None]
        prod = M if prod is None else prod @ M

    r = log_batch(prod.reshape(-1, 4, 4)).reshape(len(pairs), 12, 6)
    return np.swapaxes((r[:, :6] - r[:, 6:]) / (2.0 * step), 1, 2)


def _retract(X: np.ndarray, free: List[int], delta: np.ndarray) -> np.ndarray:
    out = X.copy()
    out[free] = X[free] @ exp_batch(delta.reshape(-1, 6))
    return out


def write_trace(report: GNReport, directory: str, name: str) -> Path:
    """
    Writes a solve's (iteration, cost, step_norm) rows as a numbered CSV in `directory`.
    """
    path = Path(directory) / f"{next(_solve_ids):06d}_{name}.csv"
    formats.write_csv(str(path), report.trace_rows(), TRACE_COLUMNS)
    return path


def solve_gauss_newton(problem: NLLSProblem, cfg: Optional[SolverConfig] = None) -> Tuple[List[Pose], GNReport]:
    """
    Minimizes sum r_b^T Omega_b r_b over the free pose blocks.

    When cfg.trace_dir is set, the iteration history is written there as CSV.

    param problem: Problem to solve; it is not modified
    type problem: NLLSProblem
    param cfg: Solver settings
    type cfg: Optional[SolverConfig]
    return: Optimized poses (fixed blocks returned as given) and the solve report
    rtype: Tuple[List[Pose], GNReport]
    raises SingularNormalEquations: If the normal equations are rank deficient or ill-conditioned
    """
    cfg = cfg or SolverConfig()
    poses, report = _solve(problem, cfg)
    if cfg.trace_dir:
        write_trace(report, cfg.trace_dir, problem.name)
    return poses, report


def _solve(problem: NLLSProblem, cfg: SolverConfig) -> Tuple[List[Pose], GNReport]:
    X = problem.stacked()
    free = problem.free
    if not problem.blocks:
        return list(problem.poses), GNReport()

    kind, index, const = problem._layout()
    info = np.array([b.info for b in problem.blocks])
    slot = {v: s for s, v in enumerate(free)}
    pairs = np.array([(b, v) for b, block in enumerate(problem.blocks) for v in block.variables() if v in slot],
                     dtype=int).reshape(-1, 2)

    def cost_of(Y: np.ndarray) -> Tuple[float, np.ndarray]:
        r = _evaluate(Y, kind, index, const)
        return float(np.einsum("bi,bij,bj->", r, info, r)), r

    cost, r = cost_of(X)
    report = GNReport(initial_cost=cost, final_cost=cost)
    if not free or len(pairs) == 0 or cost == 0.0:
        return list(problem.poses), report

    n = 6 * len(free)
    report.converged = False
    for it in range(cfg.max_iter):
        J = _jacobians(X, pairs, kind, index, const, cfg.fd_step)
        H = np.zeros((n, n))
        g = np.zeros(n)
        weighted = np.einsum("pji,pjk->pik", J, info[pairs[:, 0]])
        for p, (b, v) in enumerate(pairs):
            sv = slice(6 * slot[v], 6 * slot[v] + 6)
            g[sv] += weighted[p] @ r[b]
            for q in np.flatnonzero(pairs[:, 0] == b):
                sw = slice(6 * slot[pairs[q, 1]], 6 * slot[pairs[q, 1]] + 6)
                H[sv, sw] += weighted[p] @ J[q]

        if np.linalg.cond(H) > cfg.max_condition:
            raise SingularNormalEquations(f"normal equations are singular (cond {np.linalg.cond(H):.3e})")
        try:
            delta = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
        except np.linalg.LinAlgError as e:
            raise SingularNormalEquations(f"normal equations are not positive definite: {e}") from e

        step_norm = float(np.abs(delta).max())
        if step_norm < cfg.tol:
            report.converged = True
            break

        alpha, accepted = 1.0, False
        for _ in range(cfg.max_halvings + 1):
            trial = _retract(X, free, alpha * delta)
            trial_cost, trial_r = cost_of(trial)
            if trial_cost < cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no decrease along the GN direction: converged when the predicted gain is negligible
            report.converged = -0.5 * float(g @ delta) <= 1e-12 * (1.0 + cost)
            break

        X, cost, r = trial, trial_cost, trial_r
        report.iterations = it + 1
        report.history.append((it + 1, cost, alpha * step_norm))
        if cost == 0.0 or alpha * step_norm < cfg.tol:
            report.converged = True
            break

    report.final_cost = cost
    if not report.converged:
        log.debug(f"[Solver] stopped after {report.iterations} iterations, cost {report.initial_cost:.6g} -> {cost:.6g}")
    poses = [p if problem.fixed[i] else Pose.from_matrix(X[i]) for i, p in enumerate(problem.poses)]
    return poses, report
