"""Virtual laboratory: sampled sequential measurements and their statistics.

Generates outcome sequences trial by trial with the Born weights and the
projective collapse update, then replays the phenomenological deductions made
from real tallies: empirical probability tables with binomial error bars,
interference terms reconstructed from fine vs. pair-merged readout runs, and
conditional (uncertainty) matrices estimated from back-to-back readouts.

Randomness is counter-based: every trial owns a fixed range of Philox counter
blocks keyed by the run seed, so the counts are bit-identical no matter how
the trials are partitioned across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.random import Generator, Philox

from .coarse import CoarseSchedule, Resolution, _effective_projector
from .core import Device, Label, State, SystemSpec, propagator
from .engine import Schedule
from .phenomena import uncertainty_matrix
from .serialize import label_to_json

__all__ = [
    "EmpiricalDist",
    "InterferenceEstimate",
    "SampleRun",
    "UncertaintyEstimate",
    "empirical_distribution",
    "estimate_uncertainty",
    "pair_resolution",
    "reconstruct_interference",
    "sample_sequences",
]


@dataclass(frozen=True, eq=False)
class SampleRun:
    """Tally of one sampling run: how often each outcome sequence occurred."""

    schedule_digest: str
    seed: int
    n_samples: int
    counts: dict[tuple[Label, ...], int]

    def __post_init__(self):
        object.__setattr__(self, "counts", dict(self.counts))
        if self.n_samples < 1:
            raise ValueError("a run needs at least one sample")
        total = 0
        for seq, c in self.counts.items():
            if c < 0:
                raise ValueError(f"negative count for {seq!r}")
            total += c
        if total != self.n_samples:
            raise ValueError(
                f"counts sum to {total}, but the run holds {self.n_samples} samples"
            )

    def to_json(self) -> dict:
        return {
            "schedule_digest": self.schedule_digest,
            "seed": int(self.seed),
            "n_samples": int(self.n_samples),
            "counts": [
                {"sequence": [label_to_json(l) for l in seq], "count": int(c)}
                for seq, c in sorted(self.counts.items(), key=lambda kv: str(kv[0]))
            ],
        }

    def to_csv(self) -> str:
        lines = ["sequence,count,p_hat,sigma"]
        n = self.n_samples
        for seq, c in sorted(self.counts.items(), key=lambda kv: str(kv[0])):
            p = c / n
            sig = math.sqrt(p * (1.0 - p) / n)
            cell = ";".join(str(label_to_json(l)) for l in seq)
            if any(ch in cell for ch in ',"\n'):
                cell = '"' + cell.replace('"', '""') + '"'
            lines.append(f"{cell},{c},{p:.17g},{sig:.17g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class EmpiricalDist:
    """Normalized counts with binomial standard errors, per observed sequence."""

    probabilities: dict[tuple[Label, ...], float]
    std_errors: dict[tuple[Label, ...], float]
    n_samples: int


def empirical_distribution(run: SampleRun) -> EmpiricalDist:
    """Frequencies and plug-in error bars of a sampling run."""
    n = run.n_samples
    probs: dict[tuple[Label, ...], float] = {}
    errs: dict[tuple[Label, ...], float] = {}
    for seq, c in run.counts.items():
        p = c / n
        probs[seq] = p
        errs[seq] = math.sqrt(p * (1.0 - p) / n)
    return EmpiricalDist(probabilities=probs, std_errors=errs, n_samples=n)


def _schedule_steps(
    system: SystemSpec, schedule: Schedule | CoarseSchedule
) -> tuple[State, list[tuple[Label, ...]], list[np.ndarray]]:
    """Initial state, per-entry outcome labels, per-entry Heisenberg projector stacks."""
    if isinstance(schedule, Schedule):
        cs = CoarseSchedule.from_schedule(schedule)
    else:
        cs = schedule
    labels: list[tuple[Label, ...]] = []
    stacks: list[np.ndarray] = []
    for t, dev, res in cs.entries:
        outs = tuple(res.block_labels) if res is not None else tuple(dev.outcomes)
        u = propagator(system, t)
        projs = [
            u.conj().T @ _effective_projector(dev, res, lab) @ u for lab in outs
        ]
        labels.append(outs)
        stacks.append(np.stack(projs))
    return cs.init, labels, stacks


def _trial_rng(seed: int, trial: int, blocks_per_trial: int) -> Generator:
    counter = np.zeros(4, dtype=np.uint64)
    counter[0] = np.uint64(trial * blocks_per_trial)
    return Generator(Philox(key=np.uint64(seed), counter=counter))


def _run_trials(
    init_density: np.ndarray,
    stacks: Sequence[np.ndarray],
    seed: int,
    trials: range,
    blocks_per_trial: int,
) -> dict[tuple[int, ...], int]:
    counts: dict[tuple[int, ...], int] = {}
    n_entries = len(stacks)
    for trial in trials:
        rng = _trial_rng(seed, trial, blocks_per_trial)
        draws = rng.random(n_entries)
        rho = init_density
        picked: list[int] = []
        for j, projs in enumerate(stacks):
            probs = np.einsum("oij,ji->o", projs, rho).real
            np.clip(probs, 0.0, None, out=probs)
            total = probs.sum()
            if total <= 1e-300:
                raise RuntimeError(
                    "all readout branches vanished mid-chain; the projector "
                    "chain is inconsistent"
                )
            alive = np.nonzero(probs > 1e-300)[0]
            cum = np.cumsum(probs[alive])
            idx = int(np.searchsorted(cum, draws[j] * total, side="right"))
            if idx >= len(alive):
                idx = len(alive) - 1
            o = int(alive[idx])
            p = probs[o]
            proj = projs[o]
            rho = (proj @ rho @ proj) / p
            picked.append(o)
        key = tuple(picked)
        counts[key] = counts.get(key, 0) + 1
    return counts


def sample_sequences(
    system: SystemSpec,
    schedule: Schedule | CoarseSchedule,
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> SampleRun:
    """Draw outcome sequences by chaining Born weights with collapse updates.

    Each trial consumes its own fixed range of counter blocks, so the result
    depends only on ``(seed, n_samples)`` — never on ``workers``, which merely
    sets how many threads share the sweep.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if workers < 1:
        raise ValueError("need at least one worker")
    init, labels, stacks = _schedule_steps(system, schedule)
    n_entries = len(stacks)
    blocks_per_trial = max(1, math.ceil(n_entries / 4))

    if workers == 1 or n_samples < 2 * workers:
        merged = _run_trials(init.density, stacks, seed, range(n_samples), blocks_per_trial)
    else:
        bounds = np.linspace(0, n_samples, workers + 1).astype(int)
        chunks = [range(bounds[i], bounds[i + 1]) for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda ch: _run_trials(
                        init.density, stacks, seed, ch, blocks_per_trial
                    ),
                    chunks,
                )
            )
        merged = {}
        for part in parts:
            for key, c in part.items():
                merged[key] = merged.get(key, 0) + c

    if isinstance(schedule, Schedule):
        digest = schedule.digest
    else:
        digest = _coarse_digest(schedule)
    counts = {
        tuple(labels[j][o] for j, o in enumerate(key)): c for key, c in merged.items()
    }
    return SampleRun(
        schedule_digest=digest, seed=int(seed), n_samples=int(n_samples), counts=counts
    )


def _coarse_digest(cs: CoarseSchedule) -> str:
    from .serialize import canonical_digest

    payload = {
        "init_time": cs.init.time_tag,
        "entries": [
            {
                "time": t,
                "device": dev.name,
                "outcomes": [str(label_to_json(o)) for o in dev.outcomes],
                "blocks": None
                if res is None
                else [[str(label_to_json(f)) for f in b] for b in res.blocks],
            }
            for t, dev, res in cs.entries
        ],
    }
    return canonical_digest(payload)


class InterferenceEstimate(NamedTuple):
    """Reconstructed interference term with its propagated standard error."""

    value: float
    std_error: float


def pair_resolution(device: Device, pair: tuple[Label, Label], label: Label | None = None) -> Resolution:
    """Merge two outcomes of a device into one block; every other outcome stays fine."""
    a, b = pair
    if a == b:
        raise ValueError("the pair must hold two distinct outcomes")
    if label is None:
        label = f"{a}|{b}"
    blocks: list[tuple[Label, ...]] = [(a, b)]
    labels: list[Label] = [label]
    for o in device.outcomes:
        if o != a and o != b:
            blocks.append((o,))
            labels.append(o)
    return Resolution(device, tuple(blocks), tuple(labels))


def reconstruct_interference(
    fine: EmpiricalDist,
    coarse: EmpiricalDist,
    position: int,
    pair: tuple[Label, Label],
    context: Sequence[Label] = (),
    block_label: Label | None = None,
) -> InterferenceEstimate:
    """Interference term between two outcomes, from empirical tallies alone.

    Half the merged-block probability minus the two fine probabilities, all
    taken at the same surrounding ``context`` (the outcomes at every other
    position).  ``block_label`` defaults to the ``pair_resolution`` convention.
    Raises when none of the three required cells was ever observed — a sign
    the labels or context do not belong to these runs.
    """
    if block_label is None:
        block_label = f"{pair[0]}|{pair[1]}"
    context = tuple(context)

    def seq_with(x: Label) -> tuple[Label, ...]:
        if not 0 <= position <= len(context):
            raise IndexError(f"position {position} does not fit a context of {len(context)}")
        return context[:position] + (x,) + context[position:]

    s_plus = seq_with(pair[0])
    s_minus = seq_with(pair[1])
    s_block = seq_with(block_label)
    if (
        s_block not in coarse.probabilities
        and s_plus not in fine.probabilities
        and s_minus not in fine.probabilities
    ):
        raise ValueError(
            f"none of the cells {s_block!r}, {s_plus!r}, {s_minus!r} were observed"
        )
    p_or = coarse.probabilities.get(s_block, 0.0)
    p_plus = fine.probabilities.get(s_plus, 0.0)
    p_minus = fine.probabilities.get(s_minus, 0.0)
    e_or = coarse.std_errors.get(s_block, 0.0)
    e_plus = fine.std_errors.get(s_plus, 0.0)
    e_minus = fine.std_errors.get(s_minus, 0.0)
    value = 0.5 * (p_or - p_plus - p_minus)
    sigma = 0.5 * math.sqrt(e_or**2 + e_plus**2 + e_minus**2)
    return InterferenceEstimate(value=value, std_error=sigma)


@dataclass(frozen=True, eq=False)
class UncertaintyEstimate:
    """Empirical conditional matrix between two rapid readouts.

    ``matrix[k, l]`` estimates the probability of outcome k on the second
    device given outcome l on the first; columns never observed are NaN and
    listed in ``excluded``.  ``exchange_error`` compares against the
    role-swapped experiment; ``exact_delta`` is filled for the idealized
    zero-delay mode, where the exact overlap matrix is available.
    """

    matrix: np.ndarray
    std_errors: np.ndarray
    condition_counts: np.ndarray
    excluded: tuple[Label, ...]
    exchange_error: float
    exact_delta: float | None
    dt: float
    n_samples: int


def _conditional_counts(
    run: SampleRun, first_dev: Device, second_dev: Device
) -> tuple[np.ndarray, np.ndarray]:
    """(second x first) conditional frequency matrix and first-outcome totals."""
    n_f = first_dev.n_outcomes
    n_s = second_dev.n_outcomes
    joint = np.zeros((n_s, n_f))
    for (l, k), c in run.counts.items():
        joint[second_dev.outcome_index(k), first_dev.outcome_index(l)] += c
    totals = joint.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = joint / totals
    return cond, totals


def estimate_uncertainty(
    system: SystemSpec,
    dev_k: Device,
    dev_l: Device,
    t: float,
    dt: float,
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> UncertaintyEstimate:
    """Estimate the conditional matrix C[k, l] from back-to-back sampled readouts.

    Measures ``dev_l`` at ``t`` and ``dev_k`` at ``t + dt`` on the maximally
    mixed state; ``dt = 0`` is the idealized consecutive-projection chain and
    is additionally compared entrywise to the exact overlap matrix.  A second,
    role-swapped run (seed + 1) checks the exchange symmetry of the estimates.
    """
    if dt < 0:
        raise ValueError("the delay must be non-negative")
    d = system.dim
    mixed = State(np.eye(d) / d, time_tag=min(0.0, float(t)))
    fwd = CoarseSchedule(
        entries=((float(t), dev_l, None), (float(t) + float(dt), dev_k, None)),
        init=mixed,
    )
    swp = CoarseSchedule(
        entries=((float(t), dev_k, None), (float(t) + float(dt), dev_l, None)),
        init=mixed,
    )
    run_fwd = sample_sequences(system, fwd, n_samples, seed, workers=workers)
    run_swp = sample_sequences(system, swp, n_samples, seed + 1, workers=workers)

    cond, totals = _conditional_counts(run_fwd, dev_l, dev_k)
    cond_swp, totals_swp = _conditional_counts(run_swp, dev_k, dev_l)

    with np.errstate(invalid="ignore", divide="ignore"):
        sig = np.sqrt(cond * (1.0 - cond) / totals)
    excluded = tuple(
        lab for j, lab in enumerate(dev_l.outcomes) if totals[j] == 0
    )

    exchange = 0.0
    for k in range(dev_k.n_outcomes):
        for l in range(dev_l.n_outcomes):
            if totals[l] > 0 and totals_swp[k] > 0:
                exchange = max(exchange, abs(cond[k, l] - cond_swp[l, k]))

    exact_delta = None
    if dt == 0:
        exact = uncertainty_matrix(system, dev_k, dev_l, float(t))
        gaps = [
            abs(cond[k, l] - exact[k, l])
            for k in range(dev_k.n_outcomes)
            for l in range(dev_l.n_outcomes)
            if totals[l] > 0
        ]
        exact_delta = max(gaps) if gaps else 0.0

    return UncertaintyEstimate(
        matrix=cond,
        std_errors=sig,
        condition_counts=totals,
        excluded=excluded,
        exchange_error=exchange,
        exact_delta=exact_delta,
        dt=float(dt),
        n_samples=int(n_samples),
    )
