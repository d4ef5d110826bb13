"""Monte-Carlo simulation of frame-asynchronous k-MUD IRSA with SIC decoding.

Slot-by-slot event loop: Poisson arrivals place their replicas in the frame
window after arrival, the receiver peels every visible slot holding at most k
unresolved packets, and interference from each decoded packet is cancelled
everywhere (including replicas that have not been transmitted yet, which are
discarded on arrival).  Receiver resource limits are modeled as policies:

* ``unbounded``   -- every past slot stays available.
* ``max_delay``   -- a packet unresolved delta_max slots after its first
                     replica is dropped and its replicas removed.
* ``max_memory``  -- at most n_max undecoded replicas are stored; the oldest
                     replica is evicted first, and a packet is lost once its
                     last replica is gone.
* ``window``      -- slots older than W are frozen out of peeling.

Decoding delay is counted from the arrival slot; the max_delay budget is
counted from the first replica slot.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .de import SystemConfig, Variant
from .degree_dist import DegreeDistribution
from .errors import DegreeExceedsFrame, DomainError, InstanceTooLarge, InvalidPolicyParam

_Z95 = 1.959963984540054


class PolicyKind(Enum):
    UNBOUNDED = "unbounded"
    MAX_DELAY = "max_delay"
    MAX_MEMORY = "max_memory"
    WINDOW = "window"


@dataclass(frozen=True)
class ReceiverPolicy:
    kind: PolicyKind
    param: int | None = None

    def __post_init__(self):
        if self.kind is PolicyKind.UNBOUNDED:
            if self.param is not None:
                raise InvalidPolicyParam("unbounded policy takes no parameter")
        else:
            if self.param is None or self.param < 1:
                raise InvalidPolicyParam(f"{self.kind.value} needs a parameter >= 1, got {self.param}")

    @classmethod
    def unbounded(cls):
        return cls(PolicyKind.UNBOUNDED)

    @classmethod
    def max_delay(cls, delta_max: int):
        return cls(PolicyKind.MAX_DELAY, int(delta_max))

    @classmethod
    def max_memory(cls, n_max: int):
        return cls(PolicyKind.MAX_MEMORY, int(n_max))

    @classmethod
    def window(cls, w: int):
        return cls(PolicyKind.WINDOW, int(w))

    @classmethod
    def parse(cls, text: str) -> "ReceiverPolicy":
        """Parse 'unbounded' or 'max_delay:200' style policy strings."""
        name, _, arg = text.partition(":")
        kind = PolicyKind(name)
        return cls(kind, int(arg) if arg else None)

    def label(self) -> tuple[str, str]:
        return self.kind.value, "" if self.param is None else str(self.param)


@dataclass
class User:
    """One packet: its arrival, replica placement, and decoding outcome."""

    uid: int
    arrival_slot: int
    degree: int
    replica_slots: tuple[int, ...]
    decoded_slot: int | None = None


def generate_traffic(
    cfg: SystemConfig,
    dist: DegreeDistribution,
    horizon: int,
    rng: np.random.Generator | int,
) -> list[User]:
    """Poisson arrivals with replica placement over each user's frame window.

    First-slot-fixed: the arrival slot's successor always carries a replica and
    the remaining degree-1 copies land uniformly in the rest of the window.
    Uniform: all copies land uniformly in the window.
    """
    n = cfg.frame_length
    if dist.max_degree > n:
        raise DegreeExceedsFrame(f"max replica count {dist.max_degree} exceeds frame length {n}")
    if horizon < n:
        raise DomainError(f"horizon must be >= frame_length, got {horizon}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    first_fixed = cfg.variant is Variant.FIRST_SLOT_FIXED
    users: list[User] = []
    uid = 0
    counts = rng.poisson(cfg.arrival_rate, size=horizon)
    for t in range(1, horizon + 1):
        c = int(counts[t - 1])
        if c == 0:
            continue
        degrees = dist.sample_degree(rng, size=c)
        for r in degrees:
            r = int(r)
            if first_fixed:
                rest = rng.choice(n - 1, size=r - 1, replace=False) if r > 1 else ()
                slots = (t + 1,) + tuple(sorted(t + 2 + int(s) for s in rest))
            else:
                picks = rng.choice(n, size=r, replace=False)
                slots = tuple(sorted(t + 1 + int(s) for s in picks))
            users.append(User(uid=uid, arrival_slot=t, degree=r, replica_slots=slots))
            uid += 1
    return users


def sic_peel(
    replicas: Mapping[int, Sequence[int]],
    k: int,
    visible: Iterable[int] | None = None,
    max_rounds: int | None = None,
) -> set[int]:
    """Peel a static access graph to its fixpoint; returns the decodable user set.

    ``replicas`` maps user id -> replica slots.  Only slots in ``visible`` (all
    slots when None) may be peeled.  The result is independent of the order in
    which qualifying slots are processed; ``max_rounds`` optionally caps the
    number of peeling sweeps.
    """
    resident: dict[int, set[int]] = {}
    for uid, slots in replicas.items():
        for s in slots:
            resident.setdefault(s, set()).add(uid)
    if visible is not None:
        allowed = set(visible)
        resident = {s: us for s, us in resident.items() if s in allowed}
    decoded: set[int] = set()
    pending = deque(sorted(s for s, us in resident.items() if 1 <= len(us) <= k))
    queued = set(pending)
    rounds = 0
    while pending:
        if max_rounds is not None and rounds >= max_rounds:
            break
        rounds += 1
        s = pending.popleft()
        queued.discard(s)
        us = resident.get(s)
        if not us or len(us) > k:
            continue
        for uid in list(us):
            decoded.add(uid)
            for other in replicas[uid]:
                slot_users = resident.get(other)
                if slot_users is None:
                    continue
                slot_users.discard(uid)
                if not slot_users:
                    del resident[other]
                elif 1 <= len(slot_users) <= k and other not in queued:
                    pending.append(other)
                    queued.add(other)
    return decoded


def brute_force_decode(replicas: Mapping[int, Sequence[int]], k: int) -> set[int]:
    """Exhaustive peeling oracle for small instances.

    Explores every order of slot choices (memoized on the decoded set), asserts
    that all maximal peeling sequences end in the same decoded set, and returns
    it.  Certifies the confluence that ``sic_peel`` relies on.
    """
    uids = sorted(replicas)
    slots = sorted({s for ss in replicas.values() for s in ss})
    if len(uids) > 8 or len(slots) > 10:
        raise InstanceTooLarge(f"{len(uids)} users / {len(slots)} slots exceeds 8 / 10")

    def decodable_slots(done: frozenset[int]) -> list[tuple[int, frozenset[int]]]:
        moves = []
        for s in slots:
            us = frozenset(u for u in uids if u not in done and s in replicas[u])
            if 1 <= len(us) <= k:
                moves.append((s, us))
        return moves

    terminals: set[frozenset[int]] = set()
    seen: set[frozenset[int]] = set()
    stack = [frozenset()]
    while stack:
        done = stack.pop()
        if done in seen:
            continue
        seen.add(done)
        moves = decodable_slots(done)
        if not moves:
            terminals.add(done)
            continue
        for _, us in moves:
            stack.append(done | us)
    if len(terminals) != 1:
        raise AssertionError(f"peeling is not confluent on this instance: {sorted(map(sorted, terminals))}")
    return set(next(iter(terminals)))


@dataclass(frozen=True)
class SimMetrics:
    """Outcome of one simulation run, measured on the steady-state window."""

    variant: str
    mud_degree: int
    frame_length: int
    arrival_rate: float
    load: float
    policy: str
    policy_param: str
    seed: int
    horizon: int
    warmup: int
    arrivals: int
    decoded: int
    lost: int
    plr: float
    avg_delay: float
    delay_p50: float
    delay_p95: float
    throughput: float
    delay_histogram: tuple[int, ...] = ()
    packet_log: tuple | None = None

    CSV_HEADER = "variant,k,n,lambda_a,load,policy,param,seed,arrivals,decoded,lost,plr,avg_delay,delay_p50,delay_p95,throughput"

    def csv_row(self) -> str:
        return (
            f"{self.variant},{self.mud_degree},{self.frame_length},{self.arrival_rate:.17g},"
            f"{self.load:.17g},{self.policy},{self.policy_param},{self.seed},"
            f"{self.arrivals},{self.decoded},{self.lost},{self.plr:.17g},"
            f"{self.avg_delay:.17g},{self.delay_p50:.17g},{self.delay_p95:.17g},{self.throughput:.17g}"
        )


def default_warmup(cfg: SystemConfig) -> int:
    # start-up effects die out after one frame; ten adds safety margin.
    return 10 * cfg.frame_length


def tail_exclusion(cfg: SystemConfig, policy: ReceiverPolicy) -> int:
    """Arrivals this close to the horizon are censored from the metrics."""
    n = cfg.frame_length
    if policy.kind is PolicyKind.MAX_DELAY:
        return n + policy.param
    if policy.kind is PolicyKind.WINDOW:
        return n + policy.param
    return 2 * n


def run_simulation(
    cfg: SystemConfig,
    dist: DegreeDistribution,
    policy: ReceiverPolicy,
    horizon: int,
    seed: int,
    warmup: int | None = None,
    users: list[User] | None = None,
    collect_trace: bool = False,
    check_invariants: bool = False,
) -> SimMetrics:
    """Run one seeded simulation and measure PLR, delay and throughput.

    ``users`` may carry a pre-generated traffic trace (the seed is then only a
    label); identical arguments produce identical metrics.
    """
    n = cfg.frame_length
    if warmup is None:
        warmup = default_warmup(cfg)
    tail = tail_exclusion(cfg, policy)
    if horizon <= warmup + tail:
        raise DomainError(f"horizon {horizon} leaves no measurement window (warmup {warmup} + tail {tail})")
    if users is None:
        users = generate_traffic(cfg, dist, horizon, np.random.default_rng(seed))

    transmissions: dict[int, list[int]] = {}
    future_left = {}
    for u in users:
        u.decoded_slot = None
        future_left[u.uid] = 0
        for s in u.replica_slots:
            if s <= horizon:
                transmissions.setdefault(s, []).append(u.uid)
                future_left[u.uid] += 1
    by_uid = {u.uid: u for u in users}

    resident: dict[int, set[int]] = {}      # slot -> undecoded stored replicas
    stored: dict[int, set[int]] = {}        # uid -> slots holding its stored replicas
    lost_at: dict[int, int] = {}
    memory_fifo: deque[tuple[int, int]] = deque()  # (slot, uid) in storage order
    stored_count = 0
    deadlines: dict[int, list[int]] = {}
    k = cfg.mud_degree

    if policy.kind is PolicyKind.MAX_DELAY:
        for u in users:
            deadline = u.replica_slots[0] + policy.param
            if deadline <= horizon:
                deadlines.setdefault(deadline, []).append(u.uid)

    def visible_floor(now: int) -> int:
        return now - policy.param + 1 if policy.kind is PolicyKind.WINDOW else 1

    def peel(touched: Iterable[int], now: int) -> None:
        nonlocal stored_count
        pending = deque(sorted(set(touched)))
        queued = set(pending)
        floor = visible_floor(now)
        while pending:
            s = pending.popleft()
            queued.discard(s)
            us = resident.get(s)
            if not us or len(us) > k or s < floor:
                continue
            for uid in sorted(us):
                by_uid[uid].decoded_slot = now
                my_slots = stored.pop(uid)
                stored_count -= len(my_slots)
                for other in my_slots:  # SIC: cancel everywhere
                    if other == s:
                        continue
                    slot_users = resident[other]
                    slot_users.discard(uid)
                    if not slot_users:
                        del resident[other]
                    elif len(slot_users) <= k and other not in queued:
                        pending.append(other)
                        queued.add(other)
            del resident[s]

    def drop_replicas(uid: int, touched: set[int]) -> None:
        nonlocal stored_count
        for s in stored.pop(uid, ()):
            slot_users = resident.get(s)
            if slot_users and uid in slot_users:
                slot_users.discard(uid)
                stored_count -= 1
                touched.add(s)
                if not slot_users:
                    del resident[s]

    for now in range(1, horizon + 1):
        touched: set[int] = set()
        arrivals_here = transmissions.get(now, ())
        for uid in arrivals_here:
            future_left[uid] -= 1
            user = by_uid[uid]
            if user.decoded_slot is not None or uid in lost_at:
                continue  # known or abandoned packet: replica cancelled on sight
            resident.setdefault(now, set()).add(uid)
            stored.setdefault(uid, set()).add(now)
            stored_count += 1
            memory_fifo.append((now, uid))
        if arrivals_here:
            touched.add(now)
        peel(touched, now)

        if policy.kind is PolicyKind.MAX_DELAY:
            touched = set()
            for uid in deadlines.get(now, ()):
                user = by_uid[uid]
                if user.decoded_slot is None and uid not in lost_at:
                    lost_at[uid] = now
                    drop_replicas(uid, touched)
            if touched:
                peel(touched, now)
        elif policy.kind is PolicyKind.MAX_MEMORY:
            touched = set()
            while stored_count > policy.param and memory_fifo:
                s, uid = memory_fifo.popleft()
                slots = stored.get(uid)
                if slots is None or s not in slots:
                    continue  # stale entry: replica already decoded away or dropped
                slots.discard(s)
                slot_users = resident.get(s)
                if slot_users is not None:
                    slot_users.discard(uid)
                    if not slot_users:
                        del resident[s]
                stored_count -= 1
                touched.add(s)
                if not slots and future_left[uid] == 0 and by_uid[uid].decoded_slot is None:
                    lost_at[uid] = now
            if touched:
                peel(touched, now)
        elif policy.kind is PolicyKind.WINDOW:
            frozen = now - policy.param
            if frozen >= 1 and frozen in resident:
                for uid in list(resident.pop(frozen)):
                    slots = stored.get(uid)
                    if slots is not None:
                        slots.discard(frozen)
                        stored_count -= 1
                        if not slots and future_left[uid] == 0 and by_uid[uid].decoded_slot is None:
                            lost_at[uid] = now

        if check_invariants:
            by_user = sum(len(s) for s in stored.values())
            by_slot = sum(len(us) for us in resident.values())
            assert stored_count == by_user == by_slot, (
                f"replica accounting broken at slot {now}: count={stored_count} "
                f"user-side={by_user} slot-side={by_slot}"
            )
            if policy.kind is PolicyKind.MAX_MEMORY:
                assert stored_count <= policy.param, f"memory bound exceeded at slot {now}"

    # conservation: every packet is decoded, declared lost, or still pending
    decoded_all = sum(1 for u in users if u.decoded_slot is not None)
    lost_all = len(lost_at)
    pending_all = sum(1 for u in users if u.decoded_slot is None and u.uid not in lost_at)
    assert decoded_all + lost_all + pending_all == len(users), "packet conservation violated"

    measure_start, measure_end = warmup + 1, horizon - tail
    measured = [u for u in users if measure_start <= u.arrival_slot <= measure_end]
    decoded_m = [u for u in measured if u.decoded_slot is not None]
    lost_m = len(measured) - len(decoded_m)  # undecoded measured packets count as lost
    delays = np.array([u.decoded_slot - u.arrival_slot for u in decoded_m], dtype=float)
    span = measure_end - measure_start + 1

    if measured:
        plr = lost_m / len(measured)
    else:
        plr = math.nan
    if delays.size:
        avg_delay = float(delays.mean())
        p50, p95 = (float(np.percentile(delays, q)) for q in (50, 95))
        hist = tuple(int(c) for c in np.bincount(delays.astype(int)))
    else:
        avg_delay = p50 = p95 = math.nan
        hist = ()

    log = None
    if collect_trace:
        log = tuple(
            (u.uid, u.arrival_slot, u.decoded_slot if u.decoded_slot is not None else "LOST")
            for u in measured
        )
    return SimMetrics(
        variant=cfg.variant.value,
        mud_degree=k,
        frame_length=n,
        arrival_rate=cfg.arrival_rate,
        load=cfg.load,
        policy=policy.kind.value,
        policy_param="" if policy.param is None else str(policy.param),
        seed=seed,
        horizon=horizon,
        warmup=warmup,
        arrivals=len(measured),
        decoded=len(decoded_m),
        lost=lost_m,
        plr=plr,
        avg_delay=avg_delay,
        delay_p50=p50,
        delay_p95=p95,
        throughput=len(decoded_m) / span,
        delay_histogram=hist,
        packet_log=log,
    )


@dataclass(frozen=True)
class AggregateMetrics:
    """Replication average with normal-approximation 95% confidence half-widths."""

    reps: int
    master_seed: int
    arrivals: int
    decoded: int
    lost: int
    plr: float
    plr_half_width: float
    avg_delay: float
    delay_half_width: float
    throughput: float


def spawn_seeds(master_seed: int, reps: int) -> list[int]:
    """Deterministic per-replication seeds: SeedSequence(master).spawn children."""
    return [int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(master_seed).spawn(reps)]


def _mean_hw(values: np.ndarray) -> tuple[float, float]:
    vals = values[~np.isnan(values)]
    if vals.size == 0:
        return math.nan, math.nan
    if vals.size == 1:
        return float(vals[0]), math.nan
    return float(vals.mean()), float(_Z95 * vals.std(ddof=1) / math.sqrt(vals.size))


def run_replications(
    cfg: SystemConfig,
    dist: DegreeDistribution,
    policy: ReceiverPolicy,
    horizon: int,
    reps: int,
    master_seed: int,
    warmup: int | None = None,
) -> tuple[list[SimMetrics], AggregateMetrics]:
    """Independent replications in deterministic seed order, plus their summary."""
    runs = [
        run_simulation(cfg, dist, policy, horizon, seed, warmup=warmup)
        for seed in spawn_seeds(master_seed, reps)
    ]
    plr, plr_hw = _mean_hw(np.array([r.plr for r in runs]))
    delay, delay_hw = _mean_hw(np.array([r.avg_delay for r in runs]))
    agg = AggregateMetrics(
        reps=reps,
        master_seed=master_seed,
        arrivals=sum(r.arrivals for r in runs),
        decoded=sum(r.decoded for r in runs),
        lost=sum(r.lost for r in runs),
        plr=plr,
        plr_half_width=plr_hw,
        avg_delay=delay,
        delay_half_width=delay_hw,
        throughput=float(np.mean([r.throughput for r in runs])),
    )
    return runs, agg
