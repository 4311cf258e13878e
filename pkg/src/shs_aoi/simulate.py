"""Exact event-driven simulation of age-dependent SHS models.

Between events the ages move along ``x + b_q s``, so every rate is a
polynomial in the elapsed time ``s``. Each outgoing transition draws its own
firing time by inverting its integrated hazard, and the earliest one fires
(competing risks). Time integrals of the tracked monomials are accumulated
exactly with Gauss-Legendre rules of sufficient degree.

Random numbers come from numpy's Philox counter-based generator; replica
``r`` of seed ``s`` uses ``SeedSequence([s, r])``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import ConstantReset, ShsModel, errors_only, validate_model
from .moments import MomentIndex, enumerate_indices


class AbsorbingStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Run length is ``max_events`` jumps or ``horizon`` time units, whichever is set.

    The first ``warmup_fraction`` of the run (in events or time) is discarded.
    ``moment_order`` is the largest total order of the time-averaged monomials.
    """

    max_events: int | None = None
    horizon: float | None = None
    seed: int = 0
    replica: int = 0
    warmup_fraction: float = 0.2
    moment_order: int = 3
    log_events: int = 0

    def __post_init__(self):
        if (self.max_events is None) == (self.horizon is None):
            raise ValueError("set exactly one of max_events or horizon")
        if self.max_events is not None and self.max_events <= 0:
            raise ValueError("max_events must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.moment_order < 0:
            raise ValueError("moment_order must be nonnegative")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, self.replica])))


@dataclass
class SimStats:
    time_avg_moments: dict[MomentIndex, float]
    state_occupancy: dict[int, float]
    event_counts: dict[int, int]
    support_violations: int
    observed_time: float
    events: int
    collisions: int = 0
    event_log: np.ndarray | None = field(default=None, repr=False)
    # hybrid state at the end of a single run; pass as (q0, x0) to continue it
    final_state: int | None = None
    final_ages: np.ndarray | None = field(default=None, repr=False)

    def moment(self, exps, state=None) -> float:
        """``E[x^m]`` summed over states, or restricted to ``state``."""
        exps = tuple(exps)
        if state is not None:
            return self.time_avg_moments.get(MomentIndex(state, exps), 0.0)
        return sum(v for k, v in self.time_avg_moments.items() if k.exps == exps)

    def mean_age(self, component: int) -> float:
        n = len(next(iter(self.time_avg_moments)).exps)
        exps = [0] * n
        exps[component] = 1
        return self.moment(exps)

    def merge(self, other: "SimStats") -> "SimStats":
        """Time-weighted pooling of two independent runs."""
        t1, t2 = self.observed_time, other.observed_time
        w1, w2 = t1 / (t1 + t2), t2 / (t1 + t2)
        keys = set(self.time_avg_moments) | set(other.time_avg_moments)
        moments = {
            k: w1 * self.time_avg_moments.get(k, 0.0) + w2 * other.time_avg_moments.get(k, 0.0)
            for k in keys
        }
        occ = {
            q: w1 * self.state_occupancy.get(q, 0.0) + w2 * other.state_occupancy.get(q, 0.0)
            for q in set(self.state_occupancy) | set(other.state_occupancy)
        }
        counts = {
            l: self.event_counts.get(l, 0) + other.event_counts.get(l, 0)
            for l in set(self.event_counts) | set(other.event_counts)
        }
        return SimStats(
            moments,
            occ,
            counts,
            self.support_violations + other.support_violations,
            t1 + t2,
            self.events + other.events,
            self.collisions + other.collisions,
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "key", "value"])
            for k in sorted(self.time_avg_moments):
                w.writerow(["moment", str(k), repr(self.time_avg_moments[k])])
            for q in sorted(self.state_occupancy):
                w.writerow(["occupancy", q, repr(self.state_occupancy[q])])
            for l in sorted(self.event_counts):
                w.writerow(["event_count", l, self.event_counts[l]])
            w.writerow(["support_violations", "", self.support_violations])
            w.writerow(["collisions", "", self.collisions])
            w.writerow(["observed_time", "", repr(self.observed_time)])
            w.writerow(["events", "", self.events])


# ---------------------------------------------------------------------------
# compiled model layout


@dataclass
class _Compiled:
    n: int
    n_states: int
    state_ids: np.ndarray
    drift: np.ndarray
    dst: np.ndarray
    reset_kind: np.ndarray
    reset_src: np.ndarray
    reset_const: np.ndarray
    term_ptr: np.ndarray
    term_exps: np.ndarray
    term_coef: np.ndarray
    out_ptr: np.ndarray
    out_idx: np.ndarray
    pinned: np.ndarray
    order_pairs: np.ndarray
    mono_exps: np.ndarray
    max_degree: int


def _compile(model: ShsModel, moment_order: int) -> _Compiled:
    n = model.n
    pos = {q: k for k, q in enumerate(model.states)}
    S, L = len(model.states), len(model.transitions)
    drift = np.array([model.drift[q] for q in model.states], dtype=np.float64).reshape(S, n)
    dst = np.array([pos[t.target] for t in model.transitions], dtype=np.int64)
    reset_kind = np.zeros(L, dtype=np.int64)
    reset_src = -np.ones((L, n), dtype=np.int64)
    reset_const = np.zeros((L, n))
    term_ptr = np.zeros(L + 1, dtype=np.int64)
    exps_list, coef_list = [], []
    for l, tr in enumerate(model.transitions):
        if isinstance(tr.reset, ConstantReset):
            reset_kind[l] = 1
            reset_const[l] = tr.reset.value
        else:
            for i, src in enumerate(tr.reset.sources()):
                reset_src[l, i] = -1 if src is None else src
        for e, c in tr.rate.terms.items():
            exps_list.append(e)
            coef_list.append(c)
        term_ptr[l + 1] = len(coef_list)
    term_exps = np.array(exps_list, dtype=np.int64).reshape(len(coef_list), n)
    term_coef = np.array(coef_list, dtype=np.float64)
    out_ptr = np.zeros(S + 1, dtype=np.int64)
    out_idx = []
    for k, q in enumerate(model.states):
        ls = model.outgoing(q)
        out_idx.extend(ls)
        out_ptr[k + 1] = len(out_idx)
    pinned = np.zeros((S, n), dtype=np.bool_)
    for q, comps in model.support.zero.items():
        for i in comps:
            pinned[pos[q], i] = True
    order_pairs = np.array(
        [(pos[q], i, j) for q, i, j in model.support.less_than], dtype=np.int64
    ).reshape(-1, 3)
    full = ShsModel(n, (0,), {0: (0,) * n}, ())
    monos = [idx.exps for idx in enumerate_indices(full, moment_order)]
    return _Compiled(
        n, S, np.array(model.states, dtype=np.int64), drift, dst, reset_kind, reset_src, reset_const,
        term_ptr, term_exps, term_coef, out_ptr, np.array(out_idx, dtype=np.int64), pinned,
        order_pairs, np.array(monos, dtype=np.int64).reshape(len(monos), n), model.max_rate_degree,
    )


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _rate_poly(x, b, term_exps, term_coef, t0, t1, degree):
    """Coefficients (ascending powers of s) of a rate evaluated along x + b s."""
    out = np.zeros(degree + 1)
    tmp = np.zeros(degree + 1)
    for t in range(t0, t1):
        poly = np.zeros(degree + 1)
        poly[0] = term_coef[t]
        deg = 0
        for i in range(x.shape[0]):
            e = term_exps[t, i]
            if e == 0:
                continue
            if b[i] == 0.0:
                for k in range(deg + 1):
                    poly[k] *= x[i] ** e
            else:
                # multiply by (x_i + s)^e
                for _ in range(e):
                    tmp[:] = 0.0
                    for k in range(deg + 1):
                        tmp[k] += poly[k] * x[i]
                        tmp[k + 1] += poly[k]
                    deg += 1
                    poly[: deg + 1] = tmp[: deg + 1]
        for k in range(deg + 1):
            out[k] += poly[k]
    return out


@numba.njit(cache=True)
def _invert_hazard(p, target):
    """Smallest tau with sum_k p[k] tau^(k+1)/(k+1) = target; inf if never reached."""
    deg = p.shape[0] - 1
    while deg >= 0 and p[deg] == 0.0:
        deg -= 1
    if deg < 0:
        return np.inf
    if deg == 0:
        return target / p[0] if p[0] > 0 else np.inf
    if deg == 1:
        if p[1] <= 0.0:
            return np.inf
        return 2.0 * target / (p[0] + math.sqrt(p[0] * p[0] + 2.0 * p[1] * target))
    if p[deg] <= 0.0:
        return np.inf
    # bracket, then Newton safeguarded by bisection on the monotone cumulative hazard
    lo, hi = 0.0, 1.0
    while True:
        val = 0.0
        for k in range(deg + 1):
            val += p[k] * hi ** (k + 1) / (k + 1)
        if val >= target:
            break
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            return np.inf
    tau = 0.5 * (lo + hi)
    for _ in range(200):
        val, rate = 0.0, 0.0
        for k in range(deg + 1):
            val += p[k] * tau ** (k + 1) / (k + 1)
            rate += p[k] * tau**k
        f = val - target
        if f > 0:
            hi = tau
        else:
            lo = tau
        step_ok = rate > 0
        new = tau - f / rate if step_ok else 0.5 * (lo + hi)
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if abs(new - tau) <= 1e-12 * max(new, 1e-300) or hi - lo <= 1e-12 * hi:
            return new
        tau = new
    return tau


@numba.njit(cache=True)
def _gauss_legendre(npts):
    # nodes/weights on [-1, 1] via Newton on Legendre polynomials
    xs = np.zeros(npts)
    ws = np.zeros(npts)
    for i in range(npts):
        z = math.cos(math.pi * (i + 0.75) / (npts + 0.5))
        for _ in range(100):
            p1, p2 = 1.0, 0.0
            for j in range(1, npts + 1):
                p3 = p2
                p2 = p1
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j
            dp = npts * (z * p1 - p2) / (z * z - 1.0)
            z1 = z
            z = z1 - p1 / dp
            if abs(z - z1) < 1e-15:
                break
        xs[i] = z
        ws[i] = 2.0 / ((1.0 - z * z) * dp * dp)
    return xs, ws


@numba.njit(cache=True)
def _accumulate(acc_row, x, b, s0, s1, mono_exps, gl_x, gl_w, max_order):
    """acc_row[k] += integral over [s0, s1] of prod_i (x_i + b_i s)^mono_exps[k, i]."""
    if s1 <= s0:
        return
    half = 0.5 * (s1 - s0)
    mid = 0.5 * (s1 + s0)
    n = x.shape[0]
    pw = np.empty((n, max_order + 1))
    for j in range(gl_x.shape[0]):
        s = mid + half * gl_x[j]
        for i in range(n):
            v = x[i] + b[i] * s
            pw[i, 0] = 1.0
            for e in range(1, max_order + 1):
                pw[i, e] = pw[i, e - 1] * v
        w = half * gl_w[j]
        for k in range(mono_exps.shape[0]):
            val = w
            for i in range(n):
                val *= pw[i, mono_exps[k, i]]
            acc_row[k] += val


@numba.njit(cache=True)
def _support_ok(q, x, pinned, order_pairs):
    for i in range(x.shape[0]):
        if pinned[q, i] and x[i] != 0.0:
            return False
    for r in range(order_pairs.shape[0]):
        if order_pairs[r, 0] == q and not (x[order_pairs[r, 1]] < x[order_pairs[r, 2]]):
            return False
    return True


@numba.njit(cache=True, nogil=True)
def _run_kernel(
    rng, q, x, drift, dst, reset_kind, reset_src, reset_const, term_ptr, term_exps, term_coef,
    out_ptr, out_idx, pinned, order_pairs, mono_exps, max_degree, max_order,
    max_events, horizon, warm_events, warm_time, log_cap,
):
    n = x.shape[0]
    S = drift.shape[0]
    L = dst.shape[0]
    acc = np.zeros((S, mono_exps.shape[0]))
    occ = np.zeros(S)
    counts = np.zeros(L, dtype=np.int64)
    gl_x, gl_w = _gauss_legendre(max_order // 2 + 1)
    log_t = np.zeros(log_cap)
    log_q = np.zeros(log_cap, dtype=np.int64)
    log_x = np.zeros((log_cap, n))
    n_log = 0
    t = 0.0
    events = 0
    violations = 0
    status = 0
    use_events = max_events > 0
    if not _support_ok(q, x, pinned, order_pairs):
        violations += 1
    while True:
        if use_events and events >= max_events:
            break
        b = drift[q]
        best = np.inf
        best_l = -1
        for k in range(out_ptr[q], out_ptr[q + 1]):
            l = out_idx[k]
            p = _rate_poly(x, b, term_exps, term_coef, term_ptr[l], term_ptr[l + 1], max_degree)
            target = -math.log(1.0 - rng.random())
            tau = _invert_hazard(p, target)
            if tau < best:
                best = tau
                best_l = l
        if best_l < 0:
            if use_events:
                status = 1
                break
            best = np.inf
        # integrate the flow segment over the observed window
        seg_end = t + best
        if not use_events and seg_end > horizon:
            seg_end = horizon
        lo = t
        if use_events:
            if events < warm_events:
                lo = seg_end
        elif lo < warm_time:
            lo = warm_time
        if seg_end > lo:
            _accumulate(acc[q], x, b, lo - t, seg_end - t, mono_exps, gl_x, gl_w, max_order)
            occ[q] += seg_end - lo
        if not use_events and t + best >= horizon:
            for i in range(n):
                x[i] += b[i] * (horizon - t)
            break
        # jump
        for i in range(n):
            x[i] += b[i] * best
        t += best
        if reset_kind[best_l] == 1:
            for i in range(n):
                x[i] = reset_const[best_l, i]
        else:
            old = x.copy()
            for i in range(n):
                src = reset_src[best_l, i]
                x[i] = old[src] if src >= 0 else 0.0
        q = dst[best_l]
        counts[best_l] += 1
        events += 1
        if not _support_ok(q, x, pinned, order_pairs):
            violations += 1
        if n_log < log_cap:
            log_t[n_log] = t
            log_q[n_log] = q
            log_x[n_log] = x
            n_log += 1
    return acc, occ, counts, violations, events, status, log_t[:n_log], log_q[:n_log], log_x[:n_log], q, x


def run(model: ShsModel, cfg: SimConfig, *, x0=None, q0=None) -> SimStats:
    """Simulate ``model`` from ``(q0, x0)`` (default: first state, zero ages)."""
    errs = errors_only(validate_model(model))
    if errs:
        raise ValueError("invalid model: " + "; ".join(errs))
    comp = _compile(model, cfg.moment_order)
    pos = {q: k for k, q in enumerate(model.states)}
    q = pos[model.states[0] if q0 is None else q0]
    x = np.zeros(model.n) if x0 is None else np.array(x0, dtype=float)
    max_events = cfg.max_events or 0
    horizon = cfg.horizon or 0.0
    warm_events = int(cfg.warmup_fraction * max_events)
    warm_time = cfg.warmup_fraction * horizon
    acc, occ, counts, viol, events, status, lt, lq, lx, q_end, x_end = _run_kernel(
        cfg.generator(), q, x, comp.drift, comp.dst, comp.reset_kind, comp.reset_src, comp.reset_const,
        comp.term_ptr, comp.term_exps, comp.term_coef, comp.out_ptr, comp.out_idx, comp.pinned,
        comp.order_pairs, comp.mono_exps, comp.max_degree, cfg.moment_order,
        max_events, horizon, warm_events, warm_time, cfg.log_events,
    )
    if status == 1:
        raise AbsorbingStateError(f"no transition can fire after {events} events")
    total = occ.sum()
    if total <= 0:
        raise ValueError("empty observation window: horizon must exceed the warmup")
    stats = _stats(model, comp, acc / total, occ / total, counts, int(viol), total, int(events), lt, lq, lx)
    stats.final_state = model.states[int(q_end)]
    stats.final_ages = x_end.copy()
    return stats


def _stats(model, comp, acc, occ, counts, viol, total, events, lt=None, lq=None, lx=None, collisions=0):
    moments = {}
    for k, q in enumerate(model.states):
        pinned = set(model.support.pinned(q))
        for j, exps in enumerate(comp.mono_exps):
            if not any(exps[i] for i in pinned):
                moments[MomentIndex(q, tuple(int(e) for e in exps))] = float(acc[k, j])
    log = None
    if lt is not None and len(lt):
        states = np.asarray(comp.state_ids)[lq]
        log = np.column_stack([lt, states, lx])
    return SimStats(
        moments,
        {q: float(occ[k]) for k, q in enumerate(model.states)},
        {l: int(c) for l, c in enumerate(counts)},
        viol,
        float(total),
        events,
        collisions,
        log,
    )


def write_event_log(stats: SimStats, path) -> None:
    if stats.event_log is None:
        raise ValueError("run was made without log_events")
    n = stats.event_log.shape[1] - 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "state"] + [f"x{i}" for i in range(n)])
        for row in stats.event_log:
            w.writerow([repr(float(row[0])), int(row[1])] + [repr(float(v)) for v in row[2:]])


def run_replicas(model: ShsModel, cfg: SimConfig, replicas: int, workers: int = 1) -> SimStats:
    """Independent replicas (streams ``(seed, 0..replicas-1)``) pooled by observed time."""
    cfgs = [SimConfig(**{**cfg.__dict__, "replica": r}) for r in range(replicas)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: run(model, c), cfgs))
    else:
        parts = [run(model, c) for c in cfgs]
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


_NEXT_EVENT_CACHE: dict[int, tuple[ShsModel, _Compiled]] = {}


def next_event(model: ShsModel, q: int, x, u) -> tuple[int, float]:
    """Competing-risks step from ``(q, x)`` with one uniform draw per outgoing transition.

    ``u`` maps transition id -> uniform in (0, 1]; returns the winning
    transition id and its dwell time.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(model.drift[q], dtype=float)
    cached = _NEXT_EVENT_CACHE.get(id(model))
    if cached is None or cached[0] is not model:
        cached = (model, _compile(model, 0))
        _NEXT_EVENT_CACHE.clear()
        _NEXT_EVENT_CACHE[id(model)] = cached
    comp = cached[1]
    best, best_l = math.inf, -1
    for l in model.outgoing(q):
        p = _rate_poly(
            x, b, comp.term_exps, comp.term_coef, comp.term_ptr[l], comp.term_ptr[l + 1], comp.max_degree
        )
        tau = _invert_hazard(p, -math.log(u[l]))
        if tau < best:
            best, best_l = tau, l
    if best_l < 0:
        raise AbsorbingStateError(f"no transition can fire from state {q} at x={x.tolist()}")
    return best_l, best


# ---------------------------------------------------------------------------
# slotted CSMA


@numba.njit(cache=True, nogil=True)
def _slotted_kernel(rng, a, H, slot, n_slots, warm_slots, max_order):
    n = a.shape[0]
    x = np.zeros(n)  # monitor ages
    acc = np.zeros((n, max_order + 1))
    busy_time = 0.0
    collisions = 0
    deliveries = np.zeros(n, dtype=np.int64)
    attempters = np.zeros(n, dtype=np.int64)
    s = 0
    while s < n_slots:
        cnt = 0
        for i in range(n):
            p = 1.0 - math.exp(-a[i] * x[i] * slot)
            if rng.random() < p:
                attempters[cnt] = i
                cnt += 1
        if cnt == 0:
            length = 1
            winner = -1
        else:
            if cnt > 1:
                collisions += 1
            winner = attempters[int(rng.random() * cnt)]
            if math.isinf(H[winner]):
                length = 0
            else:
                service = -math.log(1.0 - rng.random()) / H[winner]
                length = max(1, int(math.ceil(service / slot)))
            length = min(length, n_slots - s) if length > 0 else 0
        dur = length * slot
        if s + length > warm_slots and length > 0:
            start = max(s, warm_slots)
            lo = (start - s) * slot
            for i in range(n):
                for e in range(max_order + 1):
                    acc[i, e] += ((x[i] + dur) ** (e + 1) - (x[i] + lo) ** (e + 1)) / (e + 1)
            if winner >= 0:
                busy_time += dur - lo
        for i in range(n):
            x[i] += dur
        if winner >= 0:
            # packet created at capture, so its age at delivery is the service time
            x[winner] = dur
            deliveries[winner] += 1
        s += length if length > 0 else 0
        if length == 0:
            # zero-length service still consumes the attempt slot
            for i in range(n):
                if s + 1 > warm_slots:
                    for e in range(max_order + 1):
                        acc[i, e] += ((x[i] + slot) ** (e + 1) - x[i] ** (e + 1)) / (e + 1)
                x[i] += slot
            s += 1
    observed = (n_slots - warm_slots) * slot
    return acc / observed, busy_time / observed, collisions, deliveries


@dataclass
class SlottedStats:
    """Per-link time-averaged monitor age moments ``moments[i, k] = E[x_i^k]``."""

    moments: np.ndarray
    busy_fraction: float
    collisions: int
    deliveries: np.ndarray

    def mean_age(self, link: int) -> float:
        return float(self.moments[link, 1])


def run_slotted_csma(a, H, slot: float, cfg: SimConfig) -> SlottedStats:
    """Slotted age-aware CSMA: each idle slot link ``i`` attempts with ``1 - exp(-a_i x_i slot)``.

    Simultaneous attempts go to a uniformly chosen attempter (collisions are
    counted, not modelled). Service lasts an exponential(H_i) time rounded up
    to whole slots; ``H_i = inf`` delivers instantly. ``cfg.horizon`` is in
    time units; ``cfg.max_events`` is read as a slot count.
    """
    a = np.asarray(a, dtype=float)
    H = np.asarray(H, dtype=float)
    if not slot > 0 or np.any(a <= 0) or np.any(H <= 0) or a.shape != H.shape:
        raise ValueError("slot, a and H must be positive and a, H of equal length")
    n_slots = cfg.max_events if cfg.max_events is not None else int(round(cfg.horizon / slot))
    warm = int(cfg.warmup_fraction * n_slots)
    acc, busy, coll, deliv = _slotted_kernel(cfg.generator(), a, H, slot, n_slots, warm, cfg.moment_order)
    return SlottedStats(acc, float(busy), int(coll), deliv)
