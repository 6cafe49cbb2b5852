"""QUBO minimizers.

* :func:`brute_force` -- exact enumeration, the oracle for small instances;
* :func:`simulated_anneal` -- single-flip Metropolis annealing with a
  geometric inverse-temperature schedule;
* :func:`tabu_search` -- steepest-descent single flips with a recency tabu
  list and aspiration;
* :func:`decompose_solve` -- split into clamped sub-QUBOs, solve each, merge,
  polish with tabu search, repeat.

Hot loops are compiled with numba. All solvers are deterministic for a
given instance, seed and configuration, and ties are broken towards the
lexicographically smallest bit vector where a choice is made.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .qubo import Qubo, energy

BRUTE_FORCE_LIMIT = 25
_TIE = 1e-9


class SolverSizeError(ValueError):
    pass


@dataclass(frozen=True)
class AnnealSchedule:
    sweeps: int = 1000
    beta_start: float = 0.1
    beta_end: float = 10.0
    reads: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.sweeps < 1 or self.reads < 1:
            raise ValueError("sweeps and reads must be >= 1")
        if not 0 < self.beta_start < self.beta_end:
            raise ValueError("need 0 < beta_start < beta_end")

    def betas(self) -> np.ndarray:
        return np.geomspace(self.beta_start, self.beta_end, self.sweeps)


@dataclass(frozen=True)
class DecompositionConfig:
    """Settings of the decomposing solver.

    ``sub_schedule`` drives the annealer on each sub-QUBO; its seed is
    ignored in favour of per-block seeds derived from ``seed``. A
    ``tabu_tenure`` of None picks :func:`auto_tenure`.
    """

    sub_qubo_size: int = 47
    max_iterations: int = 10
    tabu_tenure: int | None = None
    tabu_max_steps: int = 2000
    seed: int = 0
    sub_schedule: AnnealSchedule = field(default_factory=lambda: AnnealSchedule(sweeps=200))

    def __post_init__(self):
        if self.sub_qubo_size < 1 or self.max_iterations < 1:
            raise ValueError("sub_qubo_size and max_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class SolveResult:
    best: np.ndarray
    best_energy: float
    energy_trace: tuple[float, ...]
    sub_qubo_count: int = 0
    solver_id: str = ""

    def to_dict(self) -> dict:
        return {
            "solver": self.solver_id,
            "bits": "".join("1" if b else "0" for b in self.best),
            "best_energy": self.best_energy,
            "energy_trace": list(self.energy_trace),
            "sub_qubo_count": self.sub_qubo_count,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _csr(qubo: Qubo):
    m = qubo.adjacency
    return (
        np.ascontiguousarray(qubo.linear, dtype=np.float64),
        m.indptr.astype(np.int64),
        m.indices.astype(np.int64),
        m.data.astype(np.float64),
    )


def _result(qubo: Qubo, bits: np.ndarray, trace, solver_id: str, sub_count: int = 0) -> SolveResult:
    bits = np.asarray(bits, dtype=np.uint8)
    e = energy(qubo, bits)
    trace = np.minimum.accumulate(np.append(np.asarray(trace, dtype=np.float64), e))
    return SolveResult(bits, e, tuple(float(t) for t in trace), sub_count, solver_id)


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _fields(linear, indptr, indices, data, x):
    """linear_i + sum_j b_ij x_j; flipping i changes the energy by (1 - 2 x_i) * field_i."""
    n = len(linear)
    f = linear.copy()
    for i in range(n):
        if x[i]:
            for k in range(indptr[i], indptr[i + 1]):
                f[indices[k]] += data[k]
    return f


@nb.njit(cache=True)
def _csr_energy(linear, indptr, indices, data, x):
    e = 0.0
    for i in range(len(linear)):
        if x[i]:
            e += linear[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j > i and x[j]:
                    e += data[k]
    return e


@nb.njit(cache=True)
def _anneal_csr(linear, indptr, indices, data, betas, reads, seed):
    np.random.seed(seed)
    n = len(linear)
    states = np.zeros((reads, n), dtype=np.uint8)
    energies = np.zeros(reads)
    for r in range(reads):
        x = np.zeros(n, dtype=np.uint8)
        for i in range(n):
            x[i] = 1 if np.random.random() < 0.5 else 0
        f = _fields(linear, indptr, indices, data, x)
        for beta in betas:
            for i in range(n):
                de = f[i] if x[i] == 0 else -f[i]
                if de <= 0.0 or np.random.random() < np.exp(-beta * de):
                    step = 1.0 if x[i] == 0 else -1.0
                    x[i] = 1 - x[i]
                    for k in range(indptr[i], indptr[i + 1]):
                        f[indices[k]] += step * data[k]
        states[r] = x
        energies[r] = _csr_energy(linear, indptr, indices, data, x)
    return states, energies


@nb.njit(cache=True)
def _anneal_dense(lin, q, betas, reads, seed):
    """Annealer on a small dense symmetric coupling matrix (zero diagonal)."""
    np.random.seed(seed)
    n = len(lin)
    best = np.zeros(n, dtype=np.uint8)
    best_e = np.inf
    for r in range(reads):
        x = np.zeros(n, dtype=np.uint8)
        for i in range(n):
            x[i] = 1 if np.random.random() < 0.5 else 0
        f = lin.copy()
        for i in range(n):
            if x[i]:
                for j in range(n):
                    f[j] += q[i, j]
        for beta in betas:
            for i in range(n):
                de = f[i] if x[i] == 0 else -f[i]
                if de <= 0.0 or np.random.random() < np.exp(-beta * de):
                    step = 1.0 if x[i] == 0 else -1.0
                    x[i] = 1 - x[i]
                    for j in range(n):
                        f[j] += step * q[i, j]
        e = _dense_energy(lin, q, x)
        if e < best_e - 1e-12 or (abs(e - best_e) <= 1e-12 and _lex_less(x, best)):
            best_e = e
            best[:] = x
    return best, best_e


@nb.njit(cache=True)
def _dense_energy(lin, q, x):
    n = len(lin)
    e = 0.0
    for i in range(n):
        if x[i]:
            e += lin[i]
            for j in range(i + 1, n):
                if x[j]:
                    e += q[i, j]
    return e


@nb.njit(cache=True)
def _lex_less(a, b):
    for i in range(len(a)):
        if a[i] != b[i]:
            return a[i] < b[i]
    return False


@nb.njit(cache=True)
def _brute_dense(lin, q, tie):
    """Gray-code enumeration of all 2^n states with incremental energy."""
    n = len(lin)
    x = np.zeros(n, dtype=np.uint8)
    f = lin.copy()
    e = 0.0
    best = x.copy()
    best_e = 0.0
    for k in range(1, 1 << n):
        # bit to flip: number of trailing zeros of k
        i = 0
        while not (k >> i) & 1:
            i += 1
        if x[i] == 0:
            e += f[i]
            x[i] = 1
            for j in range(n):
                f[j] += q[i, j]
        else:
            e -= f[i]
            x[i] = 0
            for j in range(n):
                f[j] -= q[i, j]
        if e < best_e - tie:
            best_e = e
            best[:] = x
        elif e <= best_e + tie and _lex_less(x, best):
            best_e = min(e, best_e)
            best[:] = x
    return best, best_e


@nb.njit(cache=True)
def _tabu(linear, indptr, indices, data, x0, tenure, max_steps, seed):
    np.random.seed(seed)
    n = len(linear)
    x = x0.copy()
    f = _fields(linear, indptr, indices, data, x)
    e = _csr_energy(linear, indptr, indices, data, x)
    best = x.copy()
    best_e = e
    at_best = True
    tabu_until = np.zeros(n, dtype=np.int64)
    step = 0
    stale = 0
    while stale < max_steps:
        # relative tolerance: incremental updates drift, and zero-cost cycles must not count as gains
        tol = 1e-9 * max(1.0, abs(best_e))
        pick = -1
        pick_de = np.inf
        ties = 0
        for i in range(n):
            de = f[i] if x[i] == 0 else -f[i]
            if de > pick_de + 1e-12:
                continue
            if tabu_until[i] > step and not (e + de < best_e - tol):
                continue
            if de < pick_de - 1e-12:
                pick = i
                pick_de = de
                ties = 1
            else:
                # uniform choice among equal moves, otherwise plateaus cycle
                ties += 1
                if np.random.randint(ties) == 0:
                    pick = i
                    pick_de = de
        if pick < 0:
            break
        new_e = e + pick_de
        improves = new_e < best_e - tol
        if not improves and at_best:
            best[:] = x
            at_best = False
        s = 1.0 if x[pick] == 0 else -1.0
        x[pick] = 1 - x[pick]
        for k in range(indptr[pick], indptr[pick + 1]):
            f[indices[k]] += s * data[k]
        e = new_e
        tabu_until[pick] = step + 1 + tenure
        step += 1
        if improves:
            best_e = e
            at_best = True
            stale = 0
        else:
            stale += 1
    if at_best:
        best[:] = x
    return best


@nb.njit(cache=True)
def _solve_blocks(linear, indptr, indices, data, x, order, block_size, betas, reads, seeds, use_brute):
    """Solve consecutive blocks of ``order`` as clamped sub-QUBOs, accepting strict improvements."""
    n = len(linear)
    pos = np.full(n, -1, dtype=np.int64)
    n_blocks = (len(order) + block_size - 1) // block_size
    accepted = 0
    for b in range(n_blocks):
        block = order[b * block_size : min(len(order), (b + 1) * block_size)]
        m = len(block)
        for l in range(m):
            pos[block[l]] = l
        lin = np.empty(m)
        q = np.zeros((m, m))
        cur = np.empty(m, dtype=np.uint8)
        for l in range(m):
            v = block[l]
            cur[l] = x[v]
            acc = linear[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                lw = pos[w]
                if lw >= 0:
                    q[l, lw] = data[k]
                elif x[w]:
                    acc += data[k]
            lin[l] = acc
        old_e = _dense_energy(lin, q, cur)
        if use_brute:
            y, new_e = _brute_dense(lin, q, 1e-9)
        else:
            y, new_e = _anneal_dense(lin, q, betas, reads, seeds[b])
        new_e = _dense_energy(lin, q, y)
        if new_e < old_e - 1e-12:
            for l in range(m):
                x[block[l]] = y[l]
            accepted += 1
        for l in range(m):
            pos[block[l]] = -1
    return x, n_blocks, accepted


@nb.njit(cache=True)
def _grow_blocks(order, indptr, indices, block_size):
    """Re-order ``order`` so each run of ``block_size`` is grown breadth-first.

    A block starts at the best-ranked unplaced variable and absorbs its
    unplaced coupling neighbours before the next seed is taken.
    """
    n = len(order)
    placed = np.zeros(n, dtype=np.bool_)
    queued = np.zeros(n, dtype=np.bool_)
    out = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    filled = 0
    cursor = 0
    while filled < n:
        limit = min(n, filled + block_size)
        head = 0
        tail = 0
        while filled < limit:
            if head == tail:
                while placed[order[cursor]]:
                    cursor += 1
                queue[tail] = order[cursor]
                queued[order[cursor]] = True
                tail += 1
            v = queue[head]
            head += 1
            out[filled] = v
            placed[v] = True
            filled += 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if not placed[w] and not queued[w]:
                    queued[w] = True
                    queue[tail] = w
                    tail += 1
        for k in range(tail):
            queued[queue[k]] = False
    return out


# ---------------------------------------------------------------------------
# public solvers


def clamp_sub_qubo(qubo: Qubo, block, x) -> tuple[Qubo, float]:
    """Restrict ``qubo`` to ``block`` with the other variables frozen at ``x``.

    Returns the block QUBO (variables in ``block`` order) and the constant
    energy of the frozen variables, so that
    ``energy(qubo, x') == energy(sub, x'[block]) + constant`` whenever
    ``x'`` agrees with ``x`` outside the block.
    """
    block = np.asarray(block, dtype=np.int64)
    x = np.asarray(x, dtype=np.uint8)
    local = np.full(qubo.n, -1, dtype=np.int64)
    local[block] = np.arange(len(block))
    in_r, in_c = local[qubo.rows] >= 0, local[qubo.cols] >= 0

    lin = qubo.linear[block].astype(np.float64)
    # couplings to frozen variables fold into the block's linear terms
    fold_r = in_r & ~in_c & (x[qubo.cols] == 1)
    np.add.at(lin, local[qubo.rows[fold_r]], qubo.values[fold_r])
    fold_c = in_c & ~in_r & (x[qubo.rows] == 1)
    np.add.at(lin, local[qubo.cols[fold_c]], qubo.values[fold_c])

    both = in_r & in_c
    li, lj = local[qubo.rows[both]], local[qubo.cols[both]]
    sub = Qubo(lin, np.minimum(li, lj), np.maximum(li, lj), qubo.values[both], tuple(int(v) for v in block))

    frozen = np.ones(qubo.n, dtype=bool)
    frozen[block] = False
    xf = x.astype(np.float64) * frozen
    const = float(qubo.linear @ xf + np.sum(qubo.values * xf[qubo.rows] * xf[qubo.cols]))
    return sub, const


def brute_force(qubo: Qubo) -> SolveResult:
    """Exact minimum by enumerating all ``2**n`` states (``n <= 25``)."""
    if qubo.n > BRUTE_FORCE_LIMIT:
        raise SolverSizeError(f"brute force limited to n <= {BRUTE_FORCE_LIMIT}, got n = {qubo.n}")
    if qubo.n == 0:
        return _result(qubo, np.zeros(0, np.uint8), [0.0], "brute_force")
    q = qubo.adjacency.toarray()
    bits, _ = _brute_dense(np.ascontiguousarray(qubo.linear), q, _TIE)
    return _result(qubo, bits, [], "brute_force")


def simulated_anneal(qubo: Qubo, schedule: AnnealSchedule | None = None) -> SolveResult:
    """Metropolis single-flip annealing; best of ``schedule.reads`` independent runs."""
    schedule = schedule or AnnealSchedule()
    if qubo.n == 0:
        return _result(qubo, np.zeros(0, np.uint8), [0.0], "anneal")
    states, energies = _anneal_csr(*_csr(qubo), schedule.betas(), schedule.reads, schedule.seed)
    best = 0
    for r in range(1, schedule.reads):
        if energies[r] < energies[best] - 1e-12 or (
            abs(energies[r] - energies[best]) <= 1e-12 and tuple(states[r]) < tuple(states[best])
        ):
            best = r
    return _result(qubo, states[best], energies, "anneal")


def tabu_search(qubo: Qubo, start=None, tenure: int | None = None, max_steps: int = 2000, seed: int = 0) -> SolveResult:
    """Steepest-descent single-flip search with a recency tabu list.

    Each step flips the non-tabu variable with the lowest energy change,
    drawn uniformly among equal changes using ``seed``; a tabu variable is allowed when the move beats
    the best energy seen (aspiration). A flipped variable stays tabu for
    ``tenure`` steps (None picks :func:`auto_tenure`). Stops after ``max_steps`` steps without a new best.
    """
    if start is None:
        start = np.zeros(qubo.n, dtype=np.uint8)
    start = np.asarray(start, dtype=np.uint8)
    if start.shape != (qubo.n,):
        raise ValueError(f"start has shape {start.shape}, expected ({qubo.n},)")
    if qubo.n == 0:
        return _result(qubo, start, [0.0], "tabu")
    e0 = energy(qubo, start)
    tenure = auto_tenure(qubo.n) if tenure is None else tenure
    bits = _tabu(*_csr(qubo), start, int(tenure), int(max_steps), int(seed))
    return _result(qubo, bits, [e0], "tabu")


def auto_tenure(n: int) -> int:
    """Default tabu tenure: 20, growing as ``n / 50`` for large instances.

    Track QUBOs have wide plateaus of zero-cost flips; a short tabu list lets
    the search wander on them forever instead of climbing out.
    """
    return max(20, n // 50)


def impact_order(qubo: Qubo, x) -> np.ndarray:
    """Variables sorted by increasing |energy change of a single flip| (stable)."""
    lin, indptr, indices, data = _csr(qubo)
    f = _fields(lin, indptr, indices, data, np.asarray(x, dtype=np.uint8))
    return np.argsort(np.abs(f), kind="stable")


def decompose_solve(qubo: Qubo, cfg: DecompositionConfig | None = None, sub_solver: str = "anneal") -> SolveResult:
    """Iterated sub-QUBO decomposition with tabu refinement.

    Each iteration orders all variables by flip impact under the current
    state (least committed first), cuts the order into blocks of at most
    ``sub_qubo_size``, solves each block's clamped sub-QUBO with
    ``sub_solver`` (``"anneal"`` or ``"brute_force"``) and keeps a block
    result only when it lowers the total energy. The merged state is then
    polished with :func:`tabu_search`. Stops after ``max_iterations`` or
    the first iteration without improvement.
    """
    cfg = cfg or DecompositionConfig()
    if sub_solver not in ("anneal", "brute_force"):
        raise ValueError(f"unknown sub-solver {sub_solver!r}")
    use_brute = sub_solver == "brute_force"
    if use_brute and min(cfg.sub_qubo_size, qubo.n) > BRUTE_FORCE_LIMIT:
        raise SolverSizeError(
            f"brute-force sub-solver needs blocks of <= {BRUTE_FORCE_LIMIT} variables, got {min(cfg.sub_qubo_size, qubo.n)}"
        )
    if qubo.n == 0:
        return _result(qubo, np.zeros(0, np.uint8), [0.0], "decompose")

    csr = _csr(qubo)
    rng = np.random.default_rng(cfg.seed)
    tenure = auto_tenure(qubo.n) if cfg.tabu_tenure is None else cfg.tabu_tenure
    betas = cfg.sub_schedule.betas()
    x = _tabu(*csr, np.zeros(qubo.n, dtype=np.uint8), tenure, cfg.tabu_max_steps, rng.integers(2**31 - 1))
    best_e = _csr_energy(*csr, x)
    trace = [best_e]
    sub_count = 0
    for _ in range(cfg.max_iterations):
        order = _grow_blocks(impact_order(qubo, x), csr[1], csr[2], cfg.sub_qubo_size)
        n_blocks = -(-qubo.n // cfg.sub_qubo_size)
        seeds = rng.integers(0, 2**31 - 1, size=n_blocks)
        y, solved, _ = _solve_blocks(
            *csr, x.copy(), order, cfg.sub_qubo_size, betas, cfg.sub_schedule.reads, seeds, use_brute
        )
        sub_count += solved
        y = _tabu(*csr, y, tenure, cfg.tabu_max_steps, rng.integers(2**31 - 1))
        e = _csr_energy(*csr, y)
        if e < best_e - 1e-12:
            x, best_e = y, e
            trace.append(e)
        else:
            trace.append(best_e)
            break
    return _result(qubo, x, trace, "decompose", sub_count)
