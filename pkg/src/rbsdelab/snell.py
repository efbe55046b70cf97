"""Snell envelope of a regulated reward with terminal constraint.

The envelope is computed by one backward sweep.  Because noise is revealed
only at grid instants, the left-approach reflection compares the barrier's
interval value with the conditional expectation of the next point values,
taken before the next increment is revealed; the resulting left-jump charge
is the same on both siblings.  The right-jump reflection happens at the grid
point itself.  The increasing process is returned split into its interval
part, left jumps, and right jumps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree_space import (
    AdaptedRegulatedProcess,
    TreeSpace,
    rule_value_fields,
)

__all__ = [
    "KIncrements",
    "MertensDecomposition",
    "snell_envelope",
    "verify_minimality",
    "brute_force_snell",
]


def _zero_levels(tree: TreeSpace, first: int, last: int) -> list[np.ndarray]:
    return [np.zeros(tree.n_nodes(i)) for i in range(first, last + 1)]


@dataclass
class KIncrements:
    """Increment storage for an increasing regulated process K with K(0) = 0.

    ``interval[i]`` is the charge accrued on (t_i, t_{i+1}), known at the
    level-i node; ``left[i]`` (for i >= 1) is the left jump at t_i, stored at
    level i and equal across siblings because it is decided one instant
    before the noise; ``right[i]`` is the right jump at t_i.  ``left[0]`` is
    identically zero and kept only to align indices.
    """

    tree: TreeSpace
    interval: list[np.ndarray]
    left: list[np.ndarray]
    right: list[np.ndarray]

    @classmethod
    def zeros(cls, tree: TreeSpace) -> "KIncrements":
        return cls(
            tree=tree,
            interval=_zero_levels(tree, 0, tree.depth - 1),
            left=_zero_levels(tree, 0, tree.depth),
            right=_zero_levels(tree, 0, tree.depth - 1),
        )

    def max_component(self) -> float:
        parts = [np.max(np.abs(a)) for group in (self.interval, self.left, self.right) for a in group]
        return float(max(parts))

    def min_component(self) -> float:
        parts = [np.min(a) for group in (self.interval, self.left, self.right) for a in group]
        return float(min(parts))

    def cumulative(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Running K at points and right limits: K(t_i) and K(t_i+) per node.

        K(t_i) includes the left jump at t_i but not the right jump there;
        K(t_i+) adds the right jump.
        """
        n = self.tree.depth
        at_point: list[np.ndarray] = [np.zeros(1)]
        at_right: list[np.ndarray] = []
        for i in range(n):
            at_right.append(at_point[i] + self.right[i])
            nxt = np.repeat(at_right[i] + self.interval[i], 2) + self.left[i + 1]
            at_point.append(nxt)
        return at_point, at_right

    def total_mass_expectation(self) -> float:
        """E[K(T)], the mean accumulated charge."""
        at_point, _ = self.cumulative()
        return float(np.mean(at_point[-1]))

    def dominates(self, other: "KIncrements", tol: float = 0.0) -> bool:
        """Componentwise measure ordering dK >= d(other) at every node."""
        for mine, theirs in (
            (self.interval, other.interval),
            (self.left, other.left),
            (self.right, other.right),
        ):
            for a, b in zip(mine, theirs):
                if not np.all(a - b >= -tol):
                    return False
        return True


@dataclass
class MertensDecomposition:
    """Envelope Y with its martingale part and increasing part.

    ``martingale[i]`` holds M(t_i) per node with M(0) = 0; M has no right
    jumps and its left jump at t_{i+1} is Z(t_i) times the revealed noise
    increment.  Pathwise, Y(t) = Y(0) + M(t) - K(t) at points and right
    limits.
    """

    envelope: AdaptedRegulatedProcess
    martingale: list[np.ndarray]
    integrand: list[np.ndarray]
    increasing: KIncrements


def snell_envelope(barrier: AdaptedRegulatedProcess, terminal: np.ndarray) -> MertensDecomposition:
    """Smallest strong supermartingale dominating ``barrier`` with value
    ``terminal`` at the horizon.

    Parameters
    ----------
    barrier : AdaptedRegulatedProcess
        Reward process L, with point and right values per node.
    terminal : array over leaves
        Terminal payoff, required to dominate the terminal barrier values.

    Returns
    -------
    MertensDecomposition
        Envelope, martingale part, representation integrand, and the
        increasing process split into interval, left-jump, and right-jump
        charges.
    """
    tree = barrier.tree
    n = tree.depth
    xi = np.asarray(terminal, dtype=float)
    if xi.shape[0] != tree.n_nodes(n):
        raise ValueError("terminal payoff has the wrong number of leaves")
    gap = float(np.min(xi - barrier.point[n]))
    if gap < 0.0:
        raise ValueError(f"terminal payoff fails to dominate the barrier by {-gap:.3e}")

    point: list[np.ndarray | None] = [None] * (n + 1)
    right: list[np.ndarray | None] = [None] * n
    integrand: list[np.ndarray | None] = [None] * n
    k = KIncrements.zeros(tree)
    point[n] = xi.copy()
    for i in range(n - 1, -1, -1):
        child = point[i + 1]
        cond = child.reshape(-1, 2).mean(axis=1)
        integrand[i] = (child[1::2] - child[0::2]) / (2.0 * tree.sqrt_dt)
        ell = barrier.right[i]
        left_charge = np.maximum(ell - cond, 0.0)
        k.left[i + 1] = np.repeat(left_charge, 2)
        right[i] = np.maximum(cond, ell)
        k.right[i] = np.maximum(barrier.point[i] - right[i], 0.0)
        point[i] = np.maximum(right[i], barrier.point[i])

    martingale = [np.zeros(1)]
    for i in range(n):
        step = np.repeat(integrand[i], 2) * tree.sqrt_dt * tree.edge_signs(i + 1)
        martingale.append(np.repeat(martingale[i], 2) + step)

    envelope = AdaptedRegulatedProcess(tree, point, right)
    return MertensDecomposition(
        envelope=envelope,
        martingale=martingale,
        integrand=integrand,
        increasing=k,
    )


def minimality_residuals(
    envelope: AdaptedRegulatedProcess,
    barrier: AdaptedRegulatedProcess,
    increasing: KIncrements,
) -> tuple[float, float]:
    """Expected flat-off charges of K against Y - L.

    The first component pairs the interval charge and the left jump at the
    next point with the gap on the open interval, where the pre-jump value of
    Y lives; the second pairs right jumps with the gap at the point.  Both
    are expectations of per-path sums and vanish when K acts only where Y
    touches the barrier.
    """
    tree = envelope.tree
    cont = 0.0
    jump = 0.0
    for i in range(tree.depth):
        weight = tree.node_probability(i)
        interval_gap = envelope.right[i] - barrier.right[i]
        left_as_parent = increasing.left[i + 1][0::2]
        cont += weight * float(np.sum(interval_gap * (increasing.interval[i] + left_as_parent)))
        point_gap = envelope.point[i] - barrier.point[i]
        jump += weight * float(np.sum(point_gap * increasing.right[i]))
    return cont, jump


def verify_minimality(
    decomposition: MertensDecomposition, barrier: AdaptedRegulatedProcess
) -> tuple[float, float]:
    """Minimality residual pair for an envelope decomposition."""
    return minimality_residuals(decomposition.envelope, barrier, decomposition.increasing)


def brute_force_snell(
    barrier: AdaptedRegulatedProcess, terminal: np.ndarray
) -> AdaptedRegulatedProcess:
    """Optimal-stopping value at every node by exhaustive rule evaluation.

    Independent of the backward envelope sweep: every adapted absorbing rule
    is evaluated and the node value is the maximum expected stopped reward.
    Capped at small depths because the rule count explodes.
    """
    tree = barrier.tree
    point_sup, right_sup = rule_value_fields(tree, barrier, np.asarray(terminal, dtype=float))
    return AdaptedRegulatedProcess(tree, point_sup, right_sup)
