"""Stealthy false data injection against the residual detector.

An injected vector a leaves the WLS residual unchanged exactly when it lies
in the column space of H, i.e. B a = 0 with B = P - I and P = H(H'H)^{-1}H'.
An attacker controlling the index set C (|C| = k) must additionally keep a
zero outside C, which is feasible iff k > m - n; the surviving directions
are the nullspace of B' = B[:, C]. Row reduction of B' splits C into
dependent coordinates D (pivot columns) and independent coordinates I (free
columns), with a dependency matrix mapping free values onto the pivots so
any assembled vector satisfies B' a_C = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleScenarioError(ValueError):
    """The compromised index set cannot support a nonzero stealthy vector."""


class NumericalError(RuntimeError):
    """Row reduction or assembly failed beyond the configured tolerance."""


@dataclass(frozen=True)
class AttackScenario:
    """A compromised measurement index set on an m-measurement case."""

    m: int
    compromised: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.compromised))
        if len(idx) != len(set(idx)):
            raise ValueError("compromised indices must be distinct")
        if idx and (idx[0] < 0 or idx[-1] >= self.m):
            raise ValueError(f"compromised indices must lie in [0, {self.m})")
        object.__setattr__(self, "compromised", idx)

    @property
    def k(self) -> int:
        return len(self.compromised)

    @property
    def uncompromised(self) -> tuple[int, ...]:
        comp = set(self.compromised)
        return tuple(i for i in range(self.m) if i not in comp)


def draw_scenario(m: int, k: int, rng_seed: int) -> AttackScenario:
    """Draw k distinct compromised indices uniformly without replacement."""
    if not 0 < k <= m:
        raise ValueError(f"k must lie in [1, {m}]")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(m, size=k, replace=False)
    return AttackScenario(m=m, compromised=tuple(int(i) for i in idx))


def residual_projector(h: np.ndarray) -> np.ndarray:
    """B = P - I with P = H(H'H)^{-1}H', computed through a reduced QR of H.

    B z is the (negated) residual component of z orthogonal to the column
    space of H; B a = 0 characterizes stealthy injections.
    """
    h = np.asarray(h, dtype=float)
    q, r = np.linalg.qr(h)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise NumericalError("h is rank deficient; case must be connected")
    b = q @ q.T
    b[np.diag_indices_from(b)] -= 1.0
    return b


@dataclass
class ConstraintSystem:
    """Stealth constraints restricted to one attack scenario.

    dependent / independent are positions into scenario.compromised (local
    coordinates of the k-subvector); dependency maps the independent values
    onto the dependent ones: a_C[dependent] = dependency @ a_C[independent].
    """

    scenario: AttackScenario
    b: np.ndarray             # (m, m) stealth constraint matrix, shared per case
    dependent: np.ndarray     # local pivot coordinates, ascending
    independent: np.ndarray   # local free coordinates, ascending
    dependency: np.ndarray    # (|dependent|, |independent|)
    n: int                    # state dimension of the underlying case

    @property
    def b_restricted(self) -> np.ndarray:
        """Columns of b at the compromised indices, shape (m, k).

        Recomputed on demand: systems are held in bulk (one per training
        row), and the restricted matrix is only needed at factorization
        time and in verification, never in the iteration hot path.
        """
        return self.b[:, np.array(self.scenario.compromised, dtype=int)]

    @property
    def m(self) -> int:
        return self.scenario.m

    @property
    def k(self) -> int:
        return self.scenario.k

    @property
    def nullspace_dim(self) -> int:
        return len(self.independent)


def _row_reduce(matrix: np.ndarray, pivot_tol: float) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form with partial pivoting.

    Columns are swept left to right, so ties resolve to the smallest index;
    entries within pivot_tol (relative to the largest input entry) of zero
    are treated as zero. Returns the nonzero rows and the pivot columns.
    """
    a = np.array(matrix, dtype=float, copy=True)
    m, k = a.shape
    scale = np.abs(a).max()
    tol = pivot_tol * (scale if scale > 0 else 1.0)
    pivot_cols: list[int] = []
    row = 0
    for col in range(k):
        if row == m:
            break
        pivot = row + int(np.argmax(np.abs(a[row:, col])))
        if np.abs(a[pivot, col]) <= tol:
            continue
        if pivot != row:
            a[[row, pivot]] = a[[pivot, row]]
        a[row] = a[row] / a[row, col]
        factors = a[:, col].copy()
        factors[row] = 0.0
        a -= np.outer(factors, a[row])
        pivot_cols.append(col)
        row += 1
    return a[: len(pivot_cols)], pivot_cols


def build_constraints(
    h: np.ndarray,
    scenario: AttackScenario,
    pivot_tol: float = 1e-10,
    b: np.ndarray | None = None,
) -> ConstraintSystem:
    """Factor the restricted stealth constraints B' = B[:, C].

    A precomputed ``b`` (from residual_projector) may be passed to share the
    constraint matrix across scenarios on the same case.
    """
    h = np.asarray(h, dtype=float)
    m, n = h.shape
    if scenario.m != m:
        raise ValueError(f"scenario indexes {scenario.m} measurements, case has {m}")
    if scenario.k <= m - n:
        raise InfeasibleScenarioError(
            f"k = {scenario.k} compromised measurements cannot evade the residual "
            f"check; need k > m - n = {m - n}"
        )
    if b is None:
        b = residual_projector(h)
    cols = np.array(scenario.compromised, dtype=int)
    b_restricted = b[:, cols]
    rref, pivot_cols = _row_reduce(b_restricted, pivot_tol)
    dependent = np.array(pivot_cols, dtype=int)
    independent = np.array(
        [j for j in range(scenario.k) if j not in set(pivot_cols)], dtype=int
    )
    if len(independent) < scenario.k - (m - n):
        raise NumericalError(
            f"nullspace dimension {len(independent)} fell below the guaranteed "
            f"k - (m - n) = {scenario.k - (m - n)}; row reduction lost rank"
        )
    dependency = -rref[:, independent] if len(dependent) else np.zeros((0, len(independent)))
    return ConstraintSystem(
        scenario=scenario,
        b=b,
        dependent=dependent,
        independent=independent,
        dependency=dependency,
        n=n,
    )


def assemble(cs: ConstraintSystem, free_values: np.ndarray) -> np.ndarray:
    """Lift free coordinates to a full m-vector satisfying the constraints.

    The result is zero off C, carries free_values at the independent
    coordinates, and the dependency-implied values at the dependent ones.
    """
    free_values = np.asarray(free_values, dtype=float)
    if free_values.shape != (cs.nullspace_dim,):
        raise ValueError(f"expected {cs.nullspace_dim} free values")
    out = np.zeros(cs.m)
    cols = np.array(cs.scenario.compromised, dtype=int)
    out[cols[cs.independent]] = free_values
    if len(cs.dependent):
        out[cols[cs.dependent]] = cs.dependency @ free_values
    return out


def project_to_nullspace(cs: ConstraintSystem, g: np.ndarray) -> np.ndarray:
    """Project an m-vector onto the feasible attack directions.

    Entries off C are zeroed; the independent coordinates keep their values
    and the dependent coordinates are overwritten through the dependency
    matrix, so the result satisfies B' restricted constraints exactly.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (cs.m,):
        raise ValueError(f"expected an m-vector of length {cs.m}")
    cols = np.array(cs.scenario.compromised, dtype=int)
    return assemble(cs, g[cols[cs.independent]])


def nullspace_basis(cs: ConstraintSystem) -> np.ndarray:
    """Basis of null(B') in the local k coordinates, one column per free coordinate."""
    basis = np.zeros((cs.k, cs.nullspace_dim))
    basis[cs.independent, np.arange(cs.nullspace_dim)] = 1.0
    if len(cs.dependent):
        basis[cs.dependent] = cs.dependency
    return basis


def stealth_gap(cs: ConstraintSystem, a: np.ndarray) -> float:
    """max |B a|: zero (to tolerance) for a stealthy injection."""
    return float(np.abs(cs.b @ np.asarray(a, dtype=float)).max())


@dataclass(frozen=True)
class FalseDataVector:
    """A stealthy injected vector with its generating scenario."""

    values: np.ndarray
    scenario: AttackScenario
    target_l1: float


def generate_false_data(cs: ConstraintSystem, target_l1: float, rng_seed: int) -> FalseDataVector:
    """Draw a random stealthy vector with ||a||_1 rescaled to target_l1."""
    if not target_l1 > 0:
        raise ValueError("target_l1 must be positive")
    rng = np.random.default_rng(rng_seed)
    for _ in range(16):
        free = rng.standard_normal(cs.nullspace_dim)
        a = assemble(cs, free)
        l1 = np.abs(a).sum()
        if l1 > 1e-300:
            return FalseDataVector(values=a * (target_l1 / l1), scenario=cs.scenario,
                                   target_l1=float(target_l1))
    raise NumericalError("could not draw a nonzero stealthy vector")


def sample_target_l1(mean_l1: float, rng_seed: int) -> float:
    """Injection magnitude: Gaussian(0.05 mean_l1, 0.01 mean_l1), redrawn if nonpositive."""
    if not mean_l1 > 0:
        raise ValueError("mean_l1 must be positive")
    rng = np.random.default_rng(rng_seed)
    for _ in range(64):
        draw = rng.normal(0.05 * mean_l1, 0.01 * mean_l1)
        if draw > 0:
            return float(draw)
    # falls back to the mean after persistently nonpositive draws (~Phi(-5) each)
    return 0.05 * mean_l1
