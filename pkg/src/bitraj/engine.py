"""Bi-probabilities of measurement schedules and their structural properties.

The central object is the complex-valued distribution over *pairs* of outcome
sequences,

    Q(f+, f-) = tr[ P_{t_n}(f_n+) ... P_{t_1}(f_1+) rho
                    P_{t_1}(f_1-) ... P_{t_n}(f_n-) ],

whose diagonal ``f+ == f-`` is the observed sequential-measurement probability.
Tables over all pairs are stored densely, indexed by mixed-radix codes of the
two sequences (first schedule entry = most significant digit).  The full table
is assembled as a Gram matrix: with ``W(f) = P_{t_n}(f_n) ... P_{t_1}(f_1)
sqrt(rho)`` one has ``Q(f+, f-) = <vec W(f-), vec W(f+)>``, which makes
positive semi-definiteness manifest and keeps the cost linear in the number of
sequences.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import Device, Label, State, SystemSpec, heisenberg_projectors, propagator
from .serialize import canonical_digest, label_to_json, matrix_to_json

__all__ = [
    "BiProbTable",
    "ConsistencyError",
    "BiSequence",
    "PropertyReport",
    "Schedule",
    "TableSizeError",
    "biprob",
    "biprob_table",
    "chain_probability",
    "gudder_metric",
    "marginalize_pair",
    "max_table_entries",
    "property_report",
    "uniform_bound_check",
]

DEFAULT_MAX_TABLE_ENTRIES = 10_000_000


def max_table_entries() -> int:
    raw = os.environ.get("BITRAJ_MAX_TABLE", "")
    if raw:
        try:
            return int(float(raw))
        except ValueError:
            pass
    return DEFAULT_MAX_TABLE_ENTRIES


class ConsistencyError(RuntimeError):
    """Two routes that must agree did not; indicates a numerical breakdown."""


class TableSizeError(ValueError):
    """Raised when an enumeration would exceed the configured table guard."""

    def __init__(self, requested: int, limit: int):
        self.requested = requested
        self.limit = limit
        super().__init__(
            f"enumeration size {requested} exceeds the guard {limit}; "
            "set BITRAJ_MAX_TABLE or pass force_large=True if this is intended"
        )


@dataclass(frozen=True)
class BiSequence:
    """A pair of outcome-label sequences of equal length."""

    plus: tuple[Label, ...]
    minus: tuple[Label, ...]

    def __post_init__(self):
        object.__setattr__(self, "plus", tuple(self.plus))
        object.__setattr__(self, "minus", tuple(self.minus))
        if len(self.plus) != len(self.minus):
            raise ValueError("plus and minus sequences differ in length")

    @classmethod
    def diagonal(cls, outcomes: Sequence[Label]) -> "BiSequence":
        seq = tuple(outcomes)
        return cls(seq, seq)

    @property
    def is_diagonal(self) -> bool:
        return self.plus == self.minus


@dataclass(frozen=True, eq=False)
class Schedule:
    """Measurement times with their devices, plus the initial condition.

    Times are strictly increasing and all later than the initial condition's
    time tag.
    """

    entries: tuple[tuple[float, Device], ...]
    init: State

    def __post_init__(self):
        entries = tuple((float(t), dev) for t, dev in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("schedule needs at least one entry")
        t_prev = self.init.time_tag
        for t, dev in entries:
            if t <= t_prev:
                raise ValueError(
                    f"schedule times must be strictly increasing and after "
                    f"t0={self.init.time_tag}; got {t} after {t_prev}"
                )
            if dev.dim != self.init.dim:
                raise ValueError(f"device {dev.name!r} dim {dev.dim} != state dim {self.init.dim}")
            t_prev = t

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.entries)

    @property
    def devices(self) -> tuple[Device, ...]:
        return tuple(dev for _, dev in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def without(self, position: int) -> "Schedule":
        entries = self.entries[:position] + self.entries[position + 1:]
        return Schedule(entries=entries, init=self.init)

    def digest_payload(self) -> dict:
        return {
            "t0": self.init.time_tag,
            "init": matrix_to_json(self.init.density),
            "entries": [
                {
                    "time": t,
                    "device": dev.name,
                    "outcomes": [label_to_json(o) for o in dev.outcomes],
                    "projectors": [matrix_to_json(p) for p in dev.projectors],
                }
                for t, dev in self.entries
            ],
        }

    @property
    def digest(self) -> str:
        return canonical_digest(self.digest_payload())


def chain_probability(
    system: SystemSpec,
    init: State,
    steps: Sequence[tuple[float, np.ndarray]],
) -> float:
    """Probability of a projector chain: tr[P_n ... P_1 rho P_1 ... P_n].

    ``steps`` holds (time, reference-time projector) pairs in non-decreasing
    time order; equal times mean back-to-back application with no propagation
    in between.  This is the diagonal of the bi-probability and the workhorse
    for conditionals, survival series, and coarse readouts.
    """
    val = bichain_value(system, init, steps, steps)
    return float(val.real)


def bichain_value(
    system: SystemSpec,
    init: State,
    plus_steps: Sequence[tuple[float, np.ndarray]],
    minus_steps: Sequence[tuple[float, np.ndarray]],
) -> complex:
    """General off-diagonal chain with independent projector sequences."""
    left = _chain_operator(system, plus_steps)
    right = left if plus_steps is minus_steps else _chain_operator(system, minus_steps)
    return complex(np.trace(left @ init.density @ right.conj().T))


def _chain_operator(system: SystemSpec, steps: Sequence[tuple[float, np.ndarray]]) -> np.ndarray:
    op = np.eye(system.dim, dtype=complex)
    t_prev = None
    for t, proj in steps:
        if t_prev is not None and t < t_prev - 1e-15:
            raise ValueError("chain times must be non-decreasing")
        t_prev = t
        pt = _heisenberg(system, proj, t)
        op = pt @ op
    return op


def _heisenberg(system: SystemSpec, proj: np.ndarray, t: float) -> np.ndarray:
    u = propagator(system, t)
    return u.conj().T @ proj @ u


def biprob(system: SystemSpec, schedule: Schedule, bi: BiSequence) -> complex:
    """Single bi-probability value by the direct operator-product route."""
    n = len(schedule)
    if len(bi.plus) != n:
        raise ValueError(f"bi-sequence length {len(bi.plus)} != schedule length {n}")
    plus_steps = [
        (t, dev.projector_for(f)) for (t, dev), f in zip(schedule.entries, bi.plus)
    ]
    minus_steps = [
        (t, dev.projector_for(f)) for (t, dev), f in zip(schedule.entries, bi.minus)
    ]
    return bichain_value(system, schedule.init, plus_steps, minus_steps)


def _sqrt_psd(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


@dataclass(frozen=True, eq=False)
class BiProbTable:
    """Dense bi-probability table of a schedule.

    ``matrix[p, m]`` is Q of the sequence pair whose mixed-radix codes are
    ``p`` (plus branch) and ``m`` (minus branch); the first schedule entry is
    the most significant digit.
    """

    system: SystemSpec
    schedule: Schedule
    matrix: np.ndarray

    @property
    def radices(self) -> tuple[int, ...]:
        return tuple(dev.n_outcomes for dev in self.schedule.devices)

    @property
    def n_sequences(self) -> int:
        return self.matrix.shape[0]

    def encode(self, outcomes: Sequence[Label]) -> int:
        code = 0
        for (t, dev), f in zip(self.schedule.entries, outcomes):
            code = code * dev.n_outcomes + dev.outcome_index(f)
        return code

    def decode(self, code: int) -> tuple[Label, ...]:
        out: list[Label] = []
        for r, dev in zip(reversed(self.radices), reversed(self.schedule.devices)):
            out.append(dev.outcomes[code % r])
            code //= r
        return tuple(reversed(out))

    def value(self, bi: BiSequence) -> complex:
        return complex(self.matrix[self.encode(bi.plus), self.encode(bi.minus)])

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()

    def items(self) -> Iterator[tuple[BiSequence, complex]]:
        for p in range(self.n_sequences):
            fp = self.decode(p)
            for m in range(self.n_sequences):
                yield BiSequence(fp, self.decode(m)), complex(self.matrix[p, m])

    @property
    def schedule_digest(self) -> str:
        return self.schedule.digest

    def to_json(self) -> dict:
        entries = []
        for p in range(self.n_sequences):
            fp = self.decode(p)
            for m in range(self.n_sequences):
                q = self.matrix[p, m]
                entries.append(
                    {
                        "plus": [label_to_json(x) for x in fp],
                        "minus": [label_to_json(x) for x in self.decode(m)],
                        "re": float(q.real),
                        "im": float(q.imag),
                    }
                )
        return {"schedule_digest": self.schedule_digest, "entries": entries}

    def to_csv(self) -> str:
        n = len(self.schedule)
        header = (
            [f"plus_{j}" for j in range(n)]
            + [f"minus_{j}" for j in range(n)]
            + ["re", "im"]
        )
        lines = [",".join(header)]
        for p in range(self.n_sequences):
            fp = self.decode(p)
            for m in range(self.n_sequences):
                fm = self.decode(m)
                q = self.matrix[p, m]
                cells = [_csv_cell(x) for x in fp] + [_csv_cell(x) for x in fm]
                cells += [f"{q.real:.17g}", f"{q.imag:.17g}"]
                lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _csv_cell(label: Label) -> str:
    text = str(label_to_json(label))
    if any(c in text for c in ",\"\n"):
        text = '"' + text.replace('"', '""') + '"'
    return text


def biprob_table(
    system: SystemSpec,
    schedule: Schedule,
    force_large: bool = False,
) -> BiProbTable:
    """Enumerate the full table of a schedule.

    Guards against runaway sizes: the entry count (product of outcome counts,
    squared) must stay at or below ``max_table_entries()`` unless
    ``force_large`` is set.
    """
    radices = [dev.n_outcomes for dev in schedule.devices]
    total = math.prod(radices)
    if not force_large and total * total > max_table_entries():
        raise TableSizeError(total * total, max_table_entries())

    d = system.dim
    leaves = _sqrt_psd(schedule.init.density).reshape(1, d, d)
    for t, dev in schedule.entries:
        projs = heisenberg_projectors(system, dev, t)
        # new code = old_code * r + outcome_index
        stacked = np.stack([p @ leaves for p in projs], axis=1)
        leaves = stacked.reshape(-1, d, d)
    flat = leaves.reshape(total, d * d)
    matrix = flat @ flat.conj().T
    return BiProbTable(system=system, schedule=schedule, matrix=matrix)


def marginalize_pair(table: BiProbTable, position: int) -> BiProbTable:
    """Sum out entry ``position`` on both branches (the shorter-schedule table)."""
    n = len(table.schedule)
    if not 0 <= position < n:
        raise IndexError(f"position {position} out of range for schedule of length {n}")
    if n == 1:
        raise ValueError("cannot marginalize the only entry; the result would be a scalar")
    radices = table.radices
    shaped = table.matrix.reshape(radices + radices)
    summed = shaped.sum(axis=(position, n + position))
    shorter = table.schedule.without(position)
    new_total = table.n_sequences // radices[position]
    return BiProbTable(
        system=table.system,
        schedule=shorter,
        matrix=summed.reshape(new_total, new_total),
    )


@dataclass(frozen=True)
class PropertyReport:
    """Numerical witnesses of the table axioms.

    All fields are non-negative magnitudes except ``min_gram_eigenvalue``
    (signed; should not be below a small negative round-off allowance) and
    ``l1_norm`` (the total mass ``sum |Q|``).
    """

    normalization_error: float
    max_biconsistency_error: float
    max_causality_violation: float
    max_hermitianity_error: float
    min_gram_eigenvalue: float
    max_diagonal_negativity: float
    l1_norm: float

    def as_dict(self) -> dict:
        return {
            "normalization_error": self.normalization_error,
            "max_biconsistency_error": self.max_biconsistency_error,
            "max_causality_violation": self.max_causality_violation,
            "max_hermitianity_error": self.max_hermitianity_error,
            "min_gram_eigenvalue": self.min_gram_eigenvalue,
            "max_diagonal_negativity": self.max_diagonal_negativity,
            "l1_norm": self.l1_norm,
        }


def property_report(table: BiProbTable) -> PropertyReport:
    """Evaluate normalization, bi-consistency, causality, hermitianity and
    positive semi-definiteness witnesses on a table.

    Bi-consistency is checked at every position against a freshly recomputed
    table of the shortened schedule, not against a cached marginal.
    """
    m = table.matrix
    normalization_error = abs(complex(m.sum()) - 1.0)

    max_biconsistency = 0.0
    n = len(table.schedule)
    for pos in range(n):
        if n == 1:
            marg = complex(m.sum())
            max_biconsistency = max(max_biconsistency, abs(marg - 1.0))
            continue
        marg = marginalize_pair(table, pos)
        fresh = biprob_table(table.system, table.schedule.without(pos), force_large=True)
        diff = np.abs(marg.matrix - fresh.matrix).max()
        max_biconsistency = max(max_biconsistency, float(diff))

    radices = table.radices
    last_r = radices[-1]
    shaped = np.abs(m.reshape(-1, last_r, table.n_sequences // last_r, last_r))
    off_last = shaped.copy()
    idx = np.arange(last_r)
    off_last[:, idx, :, idx] = 0.0
    max_causality = float(off_last.max())

    max_hermitianity = float(np.abs(m - m.conj().T).max())

    herm = 0.5 * (m + m.conj().T)
    eigvals = np.linalg.eigvalsh(herm)
    min_gram = float(eigvals.min())

    diag = m.diagonal()
    max_diag_neg = float(max(0.0, -diag.real.min()))

    l1 = float(np.abs(m).sum())

    return PropertyReport(
        normalization_error=float(normalization_error),
        max_biconsistency_error=max_biconsistency,
        max_causality_violation=max_causality,
        max_hermitianity_error=max_hermitianity,
        min_gram_eigenvalue=min_gram,
        max_diagonal_negativity=max_diag_neg,
        l1_norm=l1,
    )


@dataclass(frozen=True, eq=False)
class GudderMetric:
    """Unit-trace positive metric reproducing a table as an inner product."""

    metric: np.ndarray
    basis_labels: tuple[tuple[Label, ...], ...]
    rank: int


def gudder_metric(table: BiProbTable, tol: float = 1e-10) -> GudderMetric:
    """The table read as a positive unit-trace metric over sequence labels.

    With one formal basis vector per outcome sequence, ``metric[f+, f-]``
    reproduces Q(f+, f-) exactly by construction.  The rank counts the
    directions that survive after quotienting out null vectors (eigenvalues at
    or below ``tol`` times the largest).
    """
    herm = 0.5 * (table.matrix + table.matrix.conj().T)
    trace = float(np.trace(herm).real)
    if abs(trace - 1.0) > 1e-10:
        raise ValueError(f"table trace {trace} deviates from 1 beyond 1e-10")
    eigvals = np.linalg.eigvalsh(herm)
    floor = tol * max(1.0, float(eigvals.max(initial=0.0)))
    rank = int((eigvals > floor).sum())
    labels = tuple(table.decode(p) for p in range(table.n_sequences))
    return GudderMetric(metric=herm, basis_labels=labels, rank=rank)


@dataclass(frozen=True)
class UniformBoundReport:
    """Total masses on refining grids next to their analytic ceiling."""

    grid_sizes: tuple[int, ...]
    l1_series: tuple[float, ...]
    bound: float


def uniform_bound_check(
    system: SystemSpec,
    device: Device,
    total_time: float,
    n_grid: int,
    init: State | None = None,
) -> UniformBoundReport:
    """Masses ``sum |Q|`` on equispaced grids j*T/n (n = 1..n_grid) vs. the bound.

    The ceiling is ``|Omega|^2 * exp(2 |Omega| * sup_f v(f) * T)`` with v the
    short-time decay rate of each outcome's survival probability (an energy
    variance; see the dynamical-phenomena module).  Raises ``ValueError`` if
    any computed mass exceeds the ceiling.
    """
    from .phenomena import zeno_rate

    if init is None:
        dim = system.dim
        init = State(np.eye(dim) / dim, time_tag=0.0)
    n_out = device.n_outcomes
    rates = [zeno_rate(system, device, f, 0.0) for f in device.outcomes]
    sup_v = max(rates)
    bound = n_out**2 * math.exp(2.0 * n_out * sup_v * total_time)

    series = []
    sizes = []
    for n in range(1, n_grid + 1):
        times = [(j + 1) * total_time / n for j in range(n)]
        entries = tuple((t, device) for t in times)
        table = biprob_table(system, Schedule(entries=entries, init=init))
        l1 = float(np.abs(table.matrix).sum())
        if l1 > bound * (1 + 1e-12):
            raise ValueError(
                f"computed mass {l1} at grid n={n} exceeds the analytic bound {bound}"
            )
        series.append(l1)
        sizes.append(n)
    return UniformBoundReport(grid_sizes=tuple(sizes), l1_series=tuple(series), bound=bound)
