"""Forward variable selection with a binomial stopping test.

Variables are added greedily by out-of-bag CRPS risk: each forward step fits
one forest per remaining candidate and picks the argmin. The variable
accepted at step j is tested once step j+1's risks exist, by counting how
many of the shared candidates saw their risk drop; under the null the count
is Binomial(M, 1/2), and selection stops (dropping the tested variable) when
the count fails to clear the 1-alpha binomial quantile.
"""

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from . import forest as qforest
from .data import Dataset, ForestParams, IndexSet, RunConfig, complement, mix64, parallel_map
from .scoring import QuantileGrid

TRACE_SCHEMA_VERSION = 1


class SelectionError(ValueError):
    pass


class EmptySubforestError(SelectionError):
    """Every observation lacked a usable sub-forest (too few trees)."""


@dataclass(frozen=True)
class RiskDetail:
    risk: float
    excluded: int


@dataclass(frozen=True)
class RiskTable:
    """Estimated risks of ``base + {q}`` for every remaining candidate q."""

    base: IndexSet
    risks: dict
    excluded: dict

    def __post_init__(self):
        if not self.risks:
            raise SelectionError("risk table needs at least one candidate")
        for q, r in self.risks.items():
            if q in self.base:
                raise SelectionError(f"candidate {q} already in base set")
            if not (math.isfinite(r) and r >= 0):
                raise SelectionError(f"risk for candidate {q} is not finite/nonnegative")

    def best(self) -> int:
        best_q = None
        best_r = math.inf
        for q in sorted(self.risks):
            if self.risks[q] < best_r:
                best_r = self.risks[q]
                best_q = q
        return best_q


@dataclass(frozen=True)
class StepRecord:
    step: int
    base: IndexSet
    table: RiskTable
    chosen: int
    m_candidates: int
    w_stat: Optional[int]
    critical: Optional[int]
    decision: str
    degenerate: bool


@dataclass(frozen=True)
class SelectionTrace:
    steps: tuple
    selected: IndexSet
    alpha: float
    config: RunConfig
    n_forests: int
    stop_reason: str

    def to_dict(self, names=None) -> dict:
        def label(i):
            return names[i] if names is not None else i

        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "method": "forward_crps",
            "selected": [label(i) for i in self.selected],
            "selected_indices": list(self.selected.indices),
            "alpha": self.alpha,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "n_forests": self.n_forests,
            "stop_reason": self.stop_reason,
            "steps": [
                {
                    "step": s.step,
                    "base": [label(i) for i in s.base],
                    "risks": {str(label(q)): s.table.risks[q] for q in sorted(s.table.risks)},
                    "excluded": {str(label(q)): s.table.excluded[q] for q in sorted(s.table.excluded)},
                    "chosen": label(s.chosen),
                    "chosen_index": s.chosen,
                    "M": s.m_candidates,
                    "W": s.w_stat,
                    "critical": s.critical,
                    "decision": s.decision,
                    "degenerate": s.degenerate,
                }
                for s in self.steps
            ],
        }

    def to_json(self, names=None) -> str:
        return json.dumps(self.to_dict(names), indent=2)


def estimate_risk(
    dataset: Dataset,
    covariates: IndexSet,
    params: ForestParams,
    grid: QuantileGrid,
    seed: int,
    detail: bool = False,
):
    """Out-of-bag CRPS risk of a forest on the given covariates.

    Fits one forest, scores every observation against its sub-forest
    quantile prediction on the grid, and averages over observations with a
    usable sub-forest (their count is reported via ``detail``).
    """
    fitted = qforest.fit(dataset, covariates, params, seed)
    crps, included = qforest.oob_crps_all(fitted, grid)
    n_inc = int(included.sum())
    if n_inc == 0:
        raise EmptySubforestError(
            "no observation has a nonempty sub-forest; increase the tree count"
        )
    risk = float(crps[included].mean())
    if detail:
        return RiskDetail(risk=risk, excluded=dataset.n - n_inc)
    return risk


def forward_step(
    dataset: Dataset,
    base: IndexSet,
    params: ForestParams,
    grid: QuantileGrid,
    seed: int,
    step: int = 0,
    threads: int = 1,
):
    """One forward step: risk of ``base + {q}`` for every q outside base.

    Returns (chosen index, RiskTable). Candidate forests use seeds mixed
    from (seed, step, candidate), so the step is deterministic regardless of
    thread count. Ties in the argmin resolve toward the lowest index.
    """
    cands = complement(base, dataset.d)
    if len(cands) == 0:
        raise SelectionError("base set already contains every covariate")

    def eval_candidate(q):
        det = estimate_risk(
            dataset, base.add(q), params, grid, mix64(seed, step, q), detail=True
        )
        return q, det

    results = parallel_map(eval_candidate, cands.indices, threads)
    risks = {q: det.risk for q, det in results}
    excluded = {q: det.excluded for q, det in results}
    table = RiskTable(base=base, risks=risks, excluded=excluded)
    return table.best(), table


def test_statistic(prev: RiskTable, cur: RiskTable):
    """(W, M): count of strict risk drops over the shared candidates.

    ``cur``'s base must extend ``prev``'s by exactly the tested variable;
    exact zero differences do not count.
    """
    if prev.base.indices != cur.base.indices[:-1]:
        raise SelectionError(
            f"risk tables misaligned: {prev.base.indices} vs {cur.base.indices}"
        )
    extra = set(cur.risks) - set(prev.risks)
    if extra:
        raise SelectionError(f"current table has unknown candidates {sorted(extra)}")
    w = 0
    for q in cur.risks:
        if prev.risks[q] - cur.risks[q] > 0.0:
            w += 1
    return w, len(cur.risks)


def binomial_critical(m: int, alpha: float) -> int:
    """Smallest c with P(Binomial(m, 1/2) <= c) >= 1 - alpha, by exact summation."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must be in (0, 1)")
    target = Fraction(1) - Fraction(alpha)
    denom = 1 << m
    cum = 0
    for c in range(m + 1):
        cum += math.comb(m, c)
        if Fraction(cum, denom) >= target:
            return c
    return m


def select(dataset: Dataset, config: RunConfig) -> SelectionTrace:
    """Run the full forward selection loop (greedy add + binomial stop).

    The first variable enters untested; from the second step on, each newly
    produced risk table tests the previously accepted variable. On a failed
    test the selection returns the set from before that variable. Steps whose
    test cannot reject at the given alpha regardless of data (critical value
    equal to M) are flagged degenerate.
    """
    params = config.forest
    grid = QuantileGrid(config.crps_grid_k)
    d = dataset.d
    steps = []
    n_forests = 0

    base = IndexSet()
    chosen, table = forward_step(
        dataset, base, params, grid, config.seed, step=1, threads=config.threads
    )
    n_forests += len(table.risks)
    first_degenerate = d == 1  # a single candidate can never be tested
    steps.append(
        StepRecord(
            step=1,
            base=base,
            table=table,
            chosen=chosen,
            m_candidates=len(table.risks),
            w_stat=None,
            critical=None,
            decision="stop" if d == 1 else "continue",
            degenerate=first_degenerate,
        )
    )
    accepted = base.add(chosen)
    prev_table = table

    step_no = 1
    while True:
        if len(accepted) == d:
            return SelectionTrace(
                steps=tuple(steps),
                selected=accepted,
                alpha=config.alpha,
                config=config,
                n_forests=n_forests,
                stop_reason="exhausted",
            )
        step_no += 1
        chosen, table = forward_step(
            dataset, accepted, params, grid, config.seed, step=step_no, threads=config.threads
        )
        n_forests += len(table.risks)
        w, m = test_statistic(prev_table, table)
        crit = binomial_critical(m, config.alpha)
        degenerate = crit >= m
        if w > crit:
            steps.append(
                StepRecord(
                    step=step_no,
                    base=accepted,
                    table=table,
                    chosen=chosen,
                    m_candidates=m,
                    w_stat=w,
                    critical=crit,
                    decision="continue",
                    degenerate=degenerate,
                )
            )
            accepted = accepted.add(chosen)
            prev_table = table
            continue
        steps.append(
            StepRecord(
                step=step_no,
                base=accepted,
                table=table,
                chosen=chosen,
                m_candidates=m,
                w_stat=w,
                critical=crit,
                decision="stop",
                degenerate=degenerate,
            )
        )
        return SelectionTrace(
            steps=tuple(steps),
            selected=accepted.drop_last(),
            alpha=config.alpha,
            config=config,
            n_forests=n_forests,
            stop_reason="test_failed",
        )
