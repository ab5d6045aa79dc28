"""Dynamical phenomenology of sequential measurements.

Executable forms of the laws that projective readouts obey: conditional
probabilities by the Bayes quotient, Markovian factorization of fine-grained
chains (and its loss under coarse readouts), density operators assembled from
initialization statistics, the quantum Zeno effect with its short-time decay
rate, certainty/uncertainty matrices between readout bases, and stationarity
of statistics under rigid time shifts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coarse import CoarseSchedule, quantum_coarse_prob
from .core import (
    Device,
    Label,
    State,
    SystemSpec,
    _fine_basis_columns,
    heisenberg_projectors,
    propagator,
)
from .engine import ConsistencyError, Schedule, chain_probability

__all__ = [
    "InitSpec",
    "MarkovReport",
    "ZenoSeries",
    "conditional_prob",
    "init_metric",
    "markov_delta",
    "stationarity_delta",
    "uncertainty_csv",
    "uncertainty_matrix",
    "zeno_rate",
    "zeno_scan",
]


@dataclass(frozen=True, eq=False)
class InitSpec:
    """Statistics of the initialization: which readout event started the run.

    ``entries`` holds ``(device, outcome, weight)`` triples — the probability
    that the experiment began with that outcome click on that (perfectly
    fine-grained) device at time ``time``.  Weights are non-negative and sum
    to one.
    """

    entries: tuple[tuple[Device, Label, float], ...]
    time: float = 0.0

    def __post_init__(self):
        entries = tuple((dev, lab, float(w)) for dev, lab, w in self.entries)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "time", float(self.time))
        if not entries:
            raise ValueError("initialization needs at least one weighted event")
        total = 0.0
        for dev, lab, w in entries:
            if w < 0.0:
                raise ValueError(f"negative weight {w} for ({dev.name!r}, {lab!r})")
            if not dev.is_fine_grained():
                raise ValueError(
                    f"initialization device {dev.name!r} is not perfectly fine-grained"
                )
            dev.outcome_index(lab)
            total += w
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"initialization weights sum to {total}, not 1")


def init_metric(init: InitSpec, system: SystemSpec) -> State:
    """Density operator equivalent to the initialization statistics.

    A convex combination of the rank-one projectors of the recorded
    initialization events, each translated to the initialization time.
    """
    rho = np.zeros((system.dim, system.dim), dtype=complex)
    for dev, lab, w in init.entries:
        projs = heisenberg_projectors(system, dev, init.time)
        rho = rho + w * projs[dev.outcome_index(lab)]
    return State(rho, time_tag=init.time)


def conditional_prob(
    system: SystemSpec,
    schedule: Schedule | CoarseSchedule,
    given: Sequence[Label],
    query: Label,
) -> float:
    """Bayes quotient P(last readout = query | earlier readouts = given).

    The schedule's final entry is the queried readout; ``given`` fixes all the
    earlier ones.  Equal times in a coarse schedule mean back-to-back
    projections, which hosts the rapid-remeasurement idealization exactly.
    """
    cs = (
        schedule
        if isinstance(schedule, CoarseSchedule)
        else CoarseSchedule.from_schedule(schedule)
    )
    n = len(cs)
    if len(given) != n - 1:
        raise ValueError(f"need {n - 1} conditioning readouts, got {len(given)}")
    joint = quantum_coarse_prob(system, cs, tuple(given) + (query,))
    if n == 1:
        return joint
    prefix_schedule = CoarseSchedule(entries=cs.entries[:-1], init=cs.init)
    prefix = quantum_coarse_prob(system, prefix_schedule, tuple(given))
    if prefix <= 1e-14:
        raise ValueError("conditioning on a null event")
    return joint / prefix


@dataclass(frozen=True)
class MarkovReport:
    """Worst-case gap of the two-time factorization over outcome sequences.

    Sequences whose conditioning probability vanishes are excluded from the
    maximum and counted instead.
    """

    delta: float
    excluded: int
    checked: int


def markov_delta(
    system: SystemSpec,
    device: Device,
    times: Sequence[float],
    init: InitSpec,
) -> MarkovReport:
    """Compare chain probabilities against the product of two-time conditionals.

    For a perfectly fine-grained device the chain factorizes through its
    nearest-neighbour conditionals regardless of the Hamiltonian; a coarse
    readout (any projector of rank two or more) generically breaks the
    factorization, and the returned delta measures by how much.
    """
    ts = tuple(float(t) for t in times)
    if len(ts) < 2:
        raise ValueError("need at least two measurement times")
    state = init_metric(init, system)
    projs = {f: device.projector_for(f) for f in device.outcomes}

    single: dict[tuple[int, Label], float] = {}
    for j, t in enumerate(ts):
        for f in device.outcomes:
            single[j, f] = chain_probability(system, state, [(t, projs[f])])
    pair: dict[tuple[int, Label, Label], float] = {}
    for j in range(1, len(ts)):
        for fp in device.outcomes:
            for f in device.outcomes:
                pair[j, fp, f] = chain_probability(
                    system, state, [(ts[j - 1], projs[fp]), (ts[j], projs[f])]
                )

    delta = 0.0
    excluded = 0
    checked = 0
    for seq in itertools.product(device.outcomes, repeat=len(ts)):
        lhs = chain_probability(
            system, state, [(t, projs[f]) for t, f in zip(ts, seq)]
        )
        rhs = single[0, seq[0]]
        null = False
        for j in range(1, len(ts)):
            denom = single[j - 1, seq[j - 1]]
            if denom <= 1e-14:
                null = True
                break
            rhs *= pair[j, seq[j - 1], seq[j]] / denom
        if null:
            excluded += 1
            continue
        checked += 1
        delta = max(delta, abs(lhs - rhs))
    return MarkovReport(delta=delta, excluded=excluded, checked=checked)


@dataclass(frozen=True)
class ZenoSeries:
    """Survival of a repeated readout on refining grids, with its decay rate."""

    n_values: tuple[int, ...]
    survival: tuple[float, ...]
    rate: float

    def to_csv(self) -> str:
        lines = ["n,survival"]
        for n, s in zip(self.n_values, self.survival):
            lines.append(f"{n},{s:.17g}")
        return "\n".join(lines) + "\n"


def zeno_scan(
    system: SystemSpec,
    device: Device,
    outcome: Label,
    total_time: float,
    n_list: Sequence[int],
) -> ZenoSeries:
    """Probability of reading ``outcome`` at every grid point j*T/n, j = 1..n.

    The run is initialized in the readout's own state at time zero.  As the
    grid refines the survival tends to one and the residual scales as 1/n —
    the freezing of the readout under frequent observation.
    """
    proj = device.projector_for(outcome)
    if abs(float(np.trace(proj).real) - 1.0) > 1e-9:
        raise ValueError("survival scans need a rank-one readout")
    init = State(np.array(proj, copy=True), time_tag=0.0)
    survival = []
    for n in n_list:
        n = int(n)
        if n < 1:
            raise ValueError("grid sizes must be positive")
        steps = [((j + 1) * total_time / n, proj) for j in range(n)]
        survival.append(chain_probability(system, init, steps))
    rate = zeno_rate(system, device, outcome, 0.0)
    return ZenoSeries(
        n_values=tuple(int(n) for n in n_list),
        survival=tuple(survival),
        rate=rate,
    )


def zeno_rate(system: SystemSpec, device: Device, outcome: Label, t: float) -> float:
    """Short-time decay rate v of the survival probability around time t.

    The survival over a short interval dt falls off as 1 - v^2 dt^2 with no
    linear term; v^2 is the energy variance in the readout's time-translated
    eigenvector.  The analytic value is cross-checked against a finite
    difference of the actual survival curve (step sizes 1e-3 and 2e-3, with
    the cubic correction eliminated), and the vanishing of the linear term is
    asserted as well.
    """
    proj = device.projector_for(outcome)
    if abs(float(np.trace(proj).real) - 1.0) > 1e-9:
        raise ValueError("decay rate is defined for rank-one readouts only")
    u = propagator(system, t)
    pt = u.conj().T @ proj @ u
    w, v = np.linalg.eigh(pt)
    psi = v[:, -1]
    ham = system.hamiltonian
    mean = float((psi.conj() @ ham @ psi).real)
    second = float((psi.conj() @ (ham @ ham) @ psi).real)
    var = max(second - mean * mean, 0.0)

    init = State(pt, time_tag=t)

    def survival(dt: float) -> float:
        return chain_probability(system, init, [(t + dt, proj)])

    h = 1e-3
    d1 = 1.0 - survival(h)
    d2 = 1.0 - survival(2.0 * h)
    hnorm = float(np.linalg.norm(ham, 2))
    linear = (4.0 * d1 - d2) / (2.0 * h)
    if abs(linear) > 1e-5 * max(1.0, hnorm**3):
        raise ConsistencyError(
            f"survival linear term {linear} does not vanish for {outcome!r}"
        )
    fd = 2.0 * d1 / h**2 - d2 / (2.0 * h) ** 2
    if abs(fd - var) > 1e-4 * var + 1e-7 * max(1.0, hnorm**4):
        raise ConsistencyError(
            f"finite-difference rate^2 {fd} disagrees with the variance {var}"
        )
    return math.sqrt(var)


def uncertainty_matrix(
    system: SystemSpec, dev_k: Device, dev_l: Device, t: float
) -> np.ndarray:
    """Overlap matrix C[k, l] between the eigenvectors of two fine readouts.

    C[k, l] is the squared overlap of outcome k of the first device with
    outcome l of the second, both translated to time ``t``.  It is doubly
    stochastic, and independent of ``t`` (asserted here by re-evaluating one
    time unit later).  Identical devices give the identity matrix; mutually
    unbiased ones give the flat matrix 1/d.
    """
    if dev_k.dim != system.dim or dev_l.dim != system.dim:
        raise ValueError("device dimensions must match the system")

    def overlaps(tt: float) -> np.ndarray:
        u = propagator(system, tt)
        cols_k = u.conj().T @ _fine_basis_columns(dev_k)
        cols_l = u.conj().T @ _fine_basis_columns(dev_l)
        m = cols_l.conj().T @ cols_k
        return np.abs(m.T) ** 2

    c = overlaps(t)
    drift = float(np.abs(c - overlaps(t + 1.0)).max())
    if drift > 1e-10:
        raise ConsistencyError(f"overlap matrix drifted by {drift} between times")
    return c


def uncertainty_csv(dev_k: Device, dev_l: Device, matrix: np.ndarray) -> str:
    """Tabulate an overlap matrix as k,l,value rows."""
    lines = ["k,l,value"]
    for i, k in enumerate(dev_k.outcomes):
        for j, l in enumerate(dev_l.outcomes):
            lines.append(f"{k},{l},{matrix[i, j]:.17g}")
    return "\n".join(lines) + "\n"


def stationarity_delta(
    system: SystemSpec,
    schedule: Schedule,
    shift: float,
    propagator_fn: Callable[[float], np.ndarray] | None = None,
) -> float:
    """Largest readout-statistics gap between a schedule and its shifted copy.

    Every measurement time moves by ``shift`` and the initial condition is
    carried along covariantly (re-expressed relative to the new origin).  With
    a constant Hamiltonian the statistics are invariant and the gap is
    round-off; a driven propagator, supplied as ``propagator_fn(t) -> U(t, 0)``,
    generically breaks the invariance.
    """
    if propagator_fn is None:
        u = lambda tt: propagator(system, tt)  # noqa: E731
    else:
        u = propagator_fn
    tau0 = schedule.init.time_tag
    frame = u(tau0 + shift).conj().T @ u(tau0)
    rho0 = schedule.init.density
    rho_shifted = frame @ rho0 @ frame.conj().T

    def chain(rho: np.ndarray, steps) -> float:
        op = np.eye(system.dim, dtype=complex)
        for tt, proj in steps:
            ut = u(tt)
            op = (ut.conj().T @ proj @ ut) @ op
        return float(np.trace(op @ rho @ op.conj().T).real)

    delta = 0.0
    for seq in itertools.product(*[dev.outcomes for dev in schedule.devices]):
        base_steps = [
            (t, dev.projector_for(f))
            for (t, dev), f in zip(schedule.entries, seq)
        ]
        moved_steps = [(t + shift, p) for t, p in base_steps]
        delta = max(delta, abs(chain(rho0, base_steps) - chain(rho_shifted, moved_steps)))
    return float(delta)
