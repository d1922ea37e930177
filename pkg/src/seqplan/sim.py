"""Monte Carlo cross-check of a plan: empirical coverage, ASN and stopping stages."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coverage import MISS_TOL, _check_theta
from .rules import evaluate, law_of, stage_intervals

__all__ = ["SimReport", "simulate", "block_generator", "BLOCK"]

BLOCK = 4096


@dataclass(frozen=True)
class SimReport:
    trials: int
    complement: float
    complement_se: float
    asn: float
    asn_se: float
    stop_hist: tuple
    seed: int
    threshold_mean: float      # mean stage size (or threshold) at termination
    threshold_se: float
    unfinished: int = 0        # trials still running after the last stage

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def block_generator(seed, block):
    """Independent Philox stream for one block of trials."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def _threads():
    v = int(os.environ.get("SEQPLAN_THREADS", "0") or 0)
    return v if v > 0 else min(8, os.cpu_count() or 1)


def _draw(rng, law, plan, theta, dn, state, nprev):
    """Increment of the stage variable for each active trial."""
    m = len(state)
    if law == "binomial":
        return rng.binomial(dn, theta, size=m)
    if law == "poisson":
        return rng.poisson(dn * theta, size=m)
    if law == "hyper":
        N = plan.N
        M = round(theta * N)
        good = M - state
        bad = (N - M) - (nprev - state)
        return rng.hypergeometric(good, bad, dn) if m else np.zeros(0, dtype=np.int64)
    # inverse: trials to collect dn further successes
    if theta >= 1:
        return np.full(m, dn, dtype=np.int64)
    return dn + rng.negative_binomial(dn, theta, size=m)


def _run_block(plan, theta, count, seed, block):
    rng = block_generator(seed, block)
    law = law_of(plan)
    s = plan.s
    x = np.zeros(count, dtype=np.int64)
    active = np.arange(count)
    stage_of = np.full(count, -1)
    miss = np.zeros(count, dtype=bool)
    used = np.zeros(count, dtype=float)
    thr = np.zeros(count, dtype=float)
    prev = 0
    for ell, b in enumerate(plan.boundaries, start=1):
        n = b.size
        x[active] += _draw(rng, law, plan, theta, n - prev, x[active], prev)
        xa = x[active]
        cont = b.mask(xa)
        stop_idx = active[~cont]
        if stop_idx.size:
            th, L, U = stage_intervals(plan, ell, x[stop_idx])
            miss[stop_idx] = (L >= theta - MISS_TOL) | (U <= theta + MISS_TOL)
            stage_of[stop_idx] = ell
            used[stop_idx] = x[stop_idx] if law == "inverse" else n
            thr[stop_idx] = n
        active = active[cont]
        prev = n
        if active.size == 0:
            break
    unfinished = int(active.size)
    if unfinished:
        # treated as misses; sample size recorded at the last stage
        miss[active] = True
        used[active] = x[active] if law == "inverse" else prev
        thr[active] = prev
    hist = np.bincount(stage_of[stage_of > 0], minlength=s + 1)[1:]
    return (int(miss.sum()), float(used.sum()), float((used ** 2).sum()),
            float(thr.sum()), float((thr ** 2).sum()), hist, unfinished)


def _uniform_mix_sums(rng, theta, dn, m):
    """Sums of dn draws from 0.5 * Bernoulli(theta) + 0.5 * uniform with mean theta."""
    if m == 0:
        return np.zeros(0)
    lo, hi = (0.0, 2 * theta) if theta <= 0.5 else (2 * theta - 1, 1.0)
    coin = rng.random((m, dn)) < 0.5
    bern = (rng.random((m, dn)) < theta).astype(float)
    unif = rng.uniform(lo, hi, (m, dn))
    return np.where(coin, bern, unif).sum(axis=1)


def _run_block_scalar(plan, theta, count, seed, block, dist="bernoulli"):
    """Reference path through ``evaluate``, one trial at a time."""
    rng = block_generator(seed, block)
    law = law_of(plan)
    s = plan.s
    x = np.zeros(count, dtype=float if dist != "bernoulli" else np.int64)
    active = np.arange(count)
    stage_of = np.full(count, -1)
    miss = np.zeros(count, dtype=bool)
    used = np.zeros(count, dtype=float)
    thr = np.zeros(count, dtype=float)
    prev = 0
    for ell, b in enumerate(plan.boundaries, start=1):
        n = b.size
        if dist == "bernoulli":
            x[active] += _draw(rng, law, plan, theta, n - prev, x[active], prev)
        else:
            x[active] += _uniform_mix_sums(rng, theta, n - prev, active.size)
        keep = []
        for i in active:
            dcs = evaluate(plan, ell, int(x[i]) if dist == "bernoulli" else float(x[i]))
            if dcs.stop:
                miss[i] = dcs.lower >= theta - MISS_TOL or dcs.upper <= theta + MISS_TOL
                stage_of[i] = ell
                used[i] = dcs.n
                thr[i] = n
            else:
                keep.append(i)
        active = np.asarray(keep, dtype=int)
        prev = n
        if active.size == 0:
            break
    unfinished = int(active.size)
    if unfinished:
        miss[active] = True
        used[active] = x[active] if law == "inverse" else prev
        thr[active] = prev
    hist = np.bincount(stage_of[stage_of > 0], minlength=s + 1)[1:]
    return (int(miss.sum()), float(used.sum()), float((used ** 2).sum()),
            float(thr.sum()), float((thr ** 2).sum()), hist, unfinished)


def simulate(plan, theta, trials, seed=0, vectorized=True, workers=None, dist="bernoulli"):
    """Simulate ``trials`` runs of the plan at ``theta``.

    Trials are split into blocks of BLOCK; block i always draws from its own
    stream, so the report does not depend on the number of workers.
    ``dist="uniform-mix"`` (bounded-mean plans only) draws each observation
    from an even mixture of Bernoulli(theta) and a uniform law with mean
    theta; it runs through ``evaluate`` trial by trial.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    _check_theta(plan, theta)
    theta = float(theta)
    if dist not in ("bernoulli", "uniform-mix"):
        raise ValueError(f"unknown dist {dist!r}")
    if dist != "bernoulli":
        if not plan.family.startswith("bounded-mean") or tuple(plan.opts.get("bounds", (0.0, 1.0))) != (0.0, 1.0):
            raise ValueError("uniform-mix sampling needs a bounded-mean plan on [0, 1]")
        vectorized = False
    nb = math.ceil(trials / BLOCK)
    sizes = [min(BLOCK, trials - i * BLOCK) for i in range(nb)]
    workers = workers or _threads()
    if vectorized:
        run = _run_block
        jobs = [(plan, theta, sizes[i], seed, i) for i in range(nb)]
    else:
        run = _run_block_scalar
        jobs = [(plan, theta, sizes[i], seed, i, dist) for i in range(nb)]
    if workers > 1 and nb > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda a: run(*a), jobs))
    else:
        parts = [run(*a) for a in jobs]
    miss = sum(p[0] for p in parts)
    s1 = sum(p[1] for p in parts)
    s2 = sum(p[2] for p in parts)
    t1 = sum(p[3] for p in parts)
    t2 = sum(p[4] for p in parts)
    hist = np.sum([p[5] for p in parts], axis=0)
    unfinished = sum(p[6] for p in parts)
    T = trials
    c = miss / T
    mean = s1 / T
    var = max(0.0, s2 / T - mean ** 2) * T / max(T - 1, 1)
    tm = t1 / T
    tv = max(0.0, t2 / T - tm ** 2) * T / max(T - 1, 1)
    return SimReport(T, c, math.sqrt(c * (1 - c) / T), mean, math.sqrt(var / T),
                     tuple(int(h) for h in hist), int(seed), tm, math.sqrt(tv / T), unfinished)
