"""QUBO assembly over triplets, energy evaluation and the text file format.

The objective is ``sum_i a_i x_i + sum_{i<j} b_ij x_i x_j`` over binary
``x``. Biases are a constant ``alpha`` (optionally raised for triplets with
a large transverse impact parameter). Couplings are ``-S`` between triplets
forming a quadruplet, ``zeta`` between conflicting triplets, and absent
otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

#: hardware coefficient range of the annealers the formulation targets
COEFFICIENT_LIMIT = 2.0


class QuboRangeError(ValueError):
    pass


class QuboFormatError(ValueError):
    pass


@dataclass(frozen=True)
class StrengthParams:
    """Constants of the quadruplet strength. Defaults give the simplified form."""

    z1: float = 1.0
    z2: float = 0.5
    z3: float = 1.0
    z4: float = 1.0
    z5: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.z2 <= 1.0:
            raise ValueError(f"z2 must be in [0, 1], got {self.z2}")


@dataclass(frozen=True)
class QuboParams:
    alpha: float = 0.0
    zeta: float = 1.0
    impact_bias_lambda: float = 0.0
    d0_scale: float = 3.0

    def __post_init__(self):
        if abs(self.zeta) > COEFFICIENT_LIMIT:
            raise QuboRangeError(f"|zeta| = {abs(self.zeta)} exceeds the coefficient range +-{COEFFICIENT_LIMIT}")
        if self.impact_bias_lambda < 0:
            raise ValueError("impact_bias_lambda must be >= 0")
        if self.d0_scale <= 0:
            raise ValueError("d0_scale must be positive")


def strength_values(dq, dtheta_max, holes, p: StrengthParams | None = None):
    """Vectorized strength from |delta q/pT|, max delta-theta and summed holes."""
    p = p or StrengthParams()
    dq = np.abs(dq)
    num = p.z2 * (1.0 - dq) ** p.z3 + (1.0 - p.z2) * (1.0 - np.asarray(dtheta_max)) ** p.z4
    return p.z1 * num / (1.0 + np.asarray(holes)) ** p.z5


def strength(t_i, t_j, p: StrengthParams | None = None) -> float:
    """Quadruplet quality of two triplets.

    ``z1 * [z2 (1-|dq|)^z3 + (1-z2) (1-max dtheta)^z4] / (1+H_i+H_j)^z5`` with
    ``dq`` the difference of signed q/pT.
    """
    return float(
        strength_values(
            t_i.q_over_pt - t_j.q_over_pt,
            max(t_i.delta_theta, t_j.delta_theta),
            t_i.holes + t_j.holes,
            p,
        )
    )


def coupling(relation, p: StrengthParams | None = None, q: QuboParams | None = None, triplets=None) -> float:
    """Coupling of one relation: ``-S`` for a quadruplet, ``zeta`` for a conflict.

    The relation's stored strength is used; pass ``triplets`` to recompute it
    from the features under ``p`` instead.
    """
    q = q or QuboParams()
    if relation.kind == "quadruplet":
        if triplets is not None:
            return -strength(triplets[relation.i], triplets[relation.j], p)
        return -float(relation.strength)
    if relation.kind == "conflict":
        return float(q.zeta)
    raise ValueError(f"relation kind {relation.kind!r} carries no coupling")


def apply_impact_bias(triplet, q: QuboParams | None = None) -> float:
    """Bias of a triplet: ``alpha + lambda * min(|d0| / d0_scale, 1)``."""
    q = q or QuboParams()
    if q.impact_bias_lambda == 0.0:
        return q.alpha
    return q.alpha + q.impact_bias_lambda * min(abs(triplet.d0_estimate) / q.d0_scale, 1.0)


@dataclass(frozen=True, eq=False)
class Qubo:
    """Sparse QUBO instance.

    ``rows``/``cols``/``values`` hold the strictly upper-triangular couplings
    (``rows < cols``), sorted and without zeros.
    """

    linear: np.ndarray
    rows: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    cols: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    values: np.ndarray = field(default_factory=lambda: np.empty(0, np.float64))
    variable_meta: tuple = ()

    def __post_init__(self):
        linear = np.asarray(self.linear, dtype=np.float64).copy()
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("rows, cols and values must have equal length")
        n = len(linear)
        if len(rows):
            if (rows >= cols).any():
                raise ValueError("couplings must be strictly upper triangular (i < j)")
            if rows.min() < 0 or cols.max() >= n:
                raise ValueError("coupling index out of range")
            keep = values != 0.0
            rows, cols, values = rows[keep], cols[keep], values[keep]
            order = np.lexsort((cols, rows))
            rows, cols, values = rows[order], cols[order], values[order]
            if len(rows) > 1:
                dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
                if dup.any():
                    raise ValueError("duplicate coupling")
        for arr in (linear, rows, cols, values):
            arr.setflags(write=False)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        meta = tuple(self.variable_meta) if len(self.variable_meta) else tuple(range(n))
        object.__setattr__(self, "variable_meta", meta)

    @classmethod
    def from_dicts(cls, linear: Sequence[float], quadratic: dict[tuple[int, int], float], variable_meta=()) -> "Qubo":
        keys = list(quadratic)
        rows = np.array([min(k) for k in keys], dtype=np.int64)
        cols = np.array([max(k) for k in keys], dtype=np.int64)
        if any(i == j for i, j in keys):
            raise ValueError("diagonal entries belong in the linear terms")
        vals = np.array([quadratic[k] for k in keys], dtype=np.float64)
        return cls(np.asarray(linear, dtype=np.float64), rows, cols, vals, variable_meta)

    @property
    def n(self) -> int:
        return len(self.linear)

    @property
    def n_couplers(self) -> int:
        return len(self.values)

    @cached_property
    def quadratic(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(v) for i, j, v in zip(self.rows, self.cols, self.values)}

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric coupling matrix (zero diagonal) in CSR form."""
        m = sp.coo_matrix(
            (np.concatenate([self.values, self.values]), (np.concatenate([self.rows, self.cols]), np.concatenate([self.cols, self.rows]))),
            shape=(self.n, self.n),
        ).tocsr()
        m.sort_indices()
        return m

    def dense(self) -> np.ndarray:
        """Upper-triangular matrix with the linear terms on the diagonal."""
        q = np.diag(self.linear)
        q[self.rows, self.cols] = self.values
        return q

    def structurally_equal(self, other: "Qubo", atol: float = 0.0) -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.allclose(self.linear, other.linear, rtol=0, atol=atol)
            and np.allclose(self.values, other.values, rtol=0, atol=atol)
        )

    def check_range(self, limit: float = COEFFICIENT_LIMIT) -> None:
        worst = max(
            np.abs(self.linear).max(initial=0.0),
            np.abs(self.values).max(initial=0.0),
        )
        if worst > limit:
            raise QuboRangeError(f"coefficient magnitude {worst:g} exceeds the annealer range +-{limit:g}")


def _relation_arrays(relations):
    if hasattr(relations, "kinds"):
        return relations.i, relations.j, relations.kinds
    rel = list(relations)
    return (
        np.fromiter((r.i for r in rel), dtype=np.int64, count=len(rel)),
        np.fromiter((r.j for r in rel), dtype=np.int64, count=len(rel)),
        np.array([r.kind for r in rel], dtype=object),
    )


def build_qubo(triplets, relations, p: StrengthParams | None = None, q: QuboParams | None = None) -> Qubo:
    """One variable per triplet; couplings from quadruplet and conflict relations.

    Relations of kind ``none`` are skipped. Quadruplet strengths are
    recomputed from the triplet features under ``p``.
    """
    p = p or StrengthParams()
    q = q or QuboParams()
    n = len(triplets)
    linear = np.array([apply_impact_bias(t, q) for t in triplets], dtype=np.float64)

    rel_i, rel_j, kinds = _relation_arrays(relations)
    quad = kinds == "quadruplet"
    conf = kinds == "conflict"

    values = np.zeros(len(rel_i))
    if quad.any():
        qpt = np.fromiter((t.q_over_pt for t in triplets), dtype=np.float64, count=n)
        dth = np.fromiter((t.delta_theta for t in triplets), dtype=np.float64, count=n)
        holes = np.fromiter((t.holes for t in triplets), dtype=np.int64, count=n)
        i, j = rel_i[quad], rel_j[quad]
        values[quad] = -strength_values(qpt[i] - qpt[j], np.maximum(dth[i], dth[j]), holes[i] + holes[j], p)
    values[conf] = q.zeta
    used = quad | conf
    i, j = rel_i[used], rel_j[used]
    qubo = Qubo(linear, np.minimum(i, j), np.maximum(i, j), values[used], tuple(t.id for t in triplets))
    qubo.check_range()
    return qubo


def energy(qubo: Qubo, x) -> float:
    """Objective value of a binary assignment."""
    x = np.asarray(x)
    if x.shape != (qubo.n,):
        raise ValueError(f"assignment length {x.shape} does not match qubo size {qubo.n}")
    xf = x.astype(np.float64)
    return float(qubo.linear @ xf + np.sum(qubo.values * xf[qubo.rows] * xf[qubo.cols]))


# ---------------------------------------------------------------------------
# Text format: "c" comments, "p qubo 0 maxNodes nNodes nCouplers",
# then node lines "i i a_i" and coupler lines "i j b_ij" (i < j).


def write_qubo_file(qubo: Qubo, path: str | Path, comment: str | None = None) -> None:
    nodes = range(qubo.n)
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"c {line}\n")
        fh.write(f"p qubo 0 {qubo.n} {qubo.n} {qubo.n_couplers}\n")
        for i, a in zip(nodes, qubo.linear.tolist()):
            fh.write(f"{i} {i} {a!r}\n")
        for i, j, v in zip(qubo.rows.tolist(), qubo.cols.tolist(), qubo.values.tolist()):
            fh.write(f"{i} {j} {v!r}\n")


def parse_qubo_file(path: str | Path) -> Qubo:
    """Read a QUBO text file; errors carry the offending line number."""
    header = None
    nodes: dict[int, float] = {}
    couplers: dict[tuple[int, int], float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("c"):
                continue
            parts = line.split()
            if header is None:
                if len(parts) != 6 or parts[0] != "p" or parts[1] != "qubo":
                    raise QuboFormatError(f"line {lineno}: malformed header {line!r}")
                try:
                    max_nodes, n_nodes, n_couplers = (int(v) for v in parts[3:])
                except ValueError:
                    raise QuboFormatError(f"line {lineno}: malformed header {line!r}") from None
                header = (max_nodes, n_nodes, n_couplers)
                continue
            if len(parts) != 3:
                raise QuboFormatError(f"line {lineno}: expected 'i j value', got {line!r}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise QuboFormatError(f"line {lineno}: cannot parse {line!r}") from None
            max_nodes = header[0]
            if not (0 <= i < max_nodes and 0 <= j < max_nodes):
                raise QuboFormatError(f"line {lineno}: index out of range [0, {max_nodes})")
            if len(nodes) < header[1]:
                if i != j:
                    raise QuboFormatError(f"line {lineno}: expected node line 'i i value'")
                if i in nodes:
                    raise QuboFormatError(f"line {lineno}: duplicate node {i}")
                nodes[i] = v
            else:
                if i == j:
                    raise QuboFormatError(f"line {lineno}: diagonal entry in coupler section")
                if i > j:
                    raise QuboFormatError(f"line {lineno}: coupler must have i < j")
                if (i, j) in couplers:
                    raise QuboFormatError(f"line {lineno}: duplicate coupler ({i}, {j})")
                if len(couplers) >= header[2]:
                    raise QuboFormatError(f"line {lineno}: more couplers than declared ({header[2]})")
                couplers[(i, j)] = v
    if header is None:
        raise QuboFormatError("missing 'p qubo' header")
    if len(nodes) != header[1] or len(couplers) != header[2]:
        raise QuboFormatError(
            f"declared {header[1]} nodes / {header[2]} couplers, found {len(nodes)} / {len(couplers)}"
        )
    linear = np.zeros(header[0])
    for i, v in nodes.items():
        linear[i] = v
    if not couplers:
        return Qubo(linear)
    return Qubo.from_dicts(linear, couplers)
