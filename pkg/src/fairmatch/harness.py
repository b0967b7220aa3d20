"""Experiment orchestration: trip ingestion, sweep configs and result export.

A sweep expands one base instance into a list of points (rescaled to
several LP scales, or to several (min capacity, min rate) targets), runs
every configured policy on every point and writes one CSV row per cell.
All cells of a sweep share the config seed, so policies are compared on
common arrival streams.  Rows are sorted by cell key and floats are
written with ``repr``, so a rerun of the same config is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, time, timedelta
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import instance as inst_mod
from .instance import Instance, build, scale_to_target_s
from .lp_benchmark import opt_upper_bound, solve_benchmark
from .metrics import FAIR_A, FAIR_B, NotApplicable, competitive_ratio, estimate_fair_a, estimate_fair_b
from .policies import make_policy
from .theory import offline_fair_b_single_agent

TRIP_COLUMNS = ["trip_id", "start_ts", "end_ts", "origin_area", "dest_area", "fare"]
RESULT_COLUMNS = [
    "instance_label", "policy", "objective", "mean", "half_width_95", "trials", "benchmark",
    "competitive_ratio", "seed", "config_hash", "error",
]
CAPACITY_RULE = "round_half_up(records from origin in window / days), min 1"


# trips


@dataclass(frozen=True)
class TripRecord:
    origin_area: int
    destination_area: int
    start_time: datetime
    trip_id: str = ""

    def __post_init__(self):
        if self.origin_area < 1 or self.destination_area < 1:
            raise ValueError("areas must be positive integers")


def _parse_ts(text: str) -> datetime:
    text = text.strip()
    for fmt in ("%m/%d/%Y %I:%M:%S %p", "%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            pass
    return datetime.fromisoformat(text)


def read_trips(path: Union[str, Path]) -> Tuple[List[TripRecord], int]:
    """Trips from a CSV with at least start_ts, origin_area, dest_area.

    Rows with a blank or non-numeric area are skipped; returns (records, skipped).
    """
    records, skipped = [], 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"start_ts", "origin_area", "dest_area"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"trips CSV lacks columns {sorted(missing)}")
        for row in reader:
            try:
                o, d = int(float(row["origin_area"])), int(float(row["dest_area"]))
                ts = _parse_ts(row["start_ts"])
            except (TypeError, ValueError):
                skipped += 1
                continue
            records.append(TripRecord(o, d, ts, row.get("trip_id", "") or ""))
    return records, skipped


def write_trips(records: Iterable[TripRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_COLUMNS)
        for r in records:
            end = r.start_time + timedelta(minutes=15)
            w.writerow([r.trip_id, r.start_time.isoformat(sep=" "), end.isoformat(sep=" "),
                        r.origin_area, r.destination_area, "10.00"])
    return path


def parse_window(text: str) -> Tuple[time, time]:
    m = re.fullmatch(r"\s*(\d{1,2}):(\d{2})\s*-\s*(\d{1,2}):(\d{2})\s*", text)
    if not m:
        raise ValueError(f"window must look like HH:MM-HH:MM, got {text!r}")
    h1, m1, h2, m2 = map(int, m.groups())
    start, end = time(h1, m1), time(h2, m2)
    if not start < end:
        raise ValueError("window start must precede its end")
    return start, end


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def ingest_trips(records: Sequence[TripRecord], window: Union[str, Tuple[time, time]], top_k: int,
                 days: Optional[int] = None, grouping: str = "homogeneous") -> Instance:
    """Build a matching instance from trip records.

    Types are the ``top_k`` most frequent (origin, destination) pairs
    within the daily window, with rate count / days.  Each origin area of
    a kept pair becomes one agent, adjacent to every kept pair leaving it,
    with capacity round_half_up(all window records from that origin / days),
    at least 1.  ``days`` defaults to the number of distinct dates seen in
    the window.  Groups are one per type ("homogeneous") or one per
    destination area ("destination").
    """
    if not records:
        raise ValueError("no trip records")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if grouping not in ("homogeneous", "destination"):
        raise ValueError("grouping must be 'homogeneous' or 'destination'")
    start, end = parse_window(window) if isinstance(window, str) else window
    inside = [r for r in records if start <= r.start_time.time() < end]
    if not inside:
        raise ValueError("no trip record falls in the window")
    if days is None:
        days = len({r.start_time.date() for r in inside})
    if days < 1:
        raise ValueError("days must be >= 1")

    pairs = Counter((r.origin_area, r.destination_area) for r in inside)
    # most frequent first, ties by area ids so the cut is deterministic
    kept = sorted(pairs, key=lambda p: (-pairs[p], p))[:top_k]
    kept.sort()
    from_origin = Counter(r.origin_area for r in inside)
    origins = sorted({o for o, _ in kept})
    agent_of = {o: i for i, o in enumerate(origins)}
    caps = [max(1, round_half_up(from_origin[o] / days)) for o in origins]
    rates = [pairs[p] / days for p in kept]
    edges = [(agent_of[o], j) for j, (o, _) in enumerate(kept)]
    groups = None
    dests = sorted({d for _, d in kept})
    if grouping == "destination":
        groups = [[j for j, (_, d) in enumerate(kept) if d == dest] for dest in dests]
    meta = {
        "source": "trips", "window": f"{start:%H:%M}-{end:%H:%M}", "days": days, "top_k": top_k,
        "grouping": grouping, "capacity_rule": CAPACITY_RULE, "agent_areas": origins,
        "type_pairs": [list(p) for p in kept],
    }
    if grouping == "destination":
        meta["group_areas"] = dests
    label = f"trips[{meta['window']},k={top_k},{grouping}]"
    return build(caps, rates, edges, groups, label=label, metadata=meta)


def synthetic_trips(areas: int = 8, days: int = 30, seed: int = 0, daily_trips: float = 400.0,
                    start: datetime = datetime(2020, 9, 1)) -> List[TripRecord]:
    """Trips in the ride-hail log schema from a seeded gravity-style model.

    Area popularity follows a Zipf-like profile, destinations lean toward
    nearby area ids, and start times are spread over the whole day with a
    bump in the evening.  Purely a hermetic stand-in for real trip logs.
    """
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    ids = np.arange(1, areas + 1)
    pop = 1.0 / ids ** 0.8
    dist = np.abs(ids[:, None] - ids[None, :])
    od = pop[:, None] * pop[None, :] * np.exp(-dist / max(1.0, areas / 3))
    od /= od.sum()
    flat = od.ravel()
    out = []
    k = 0
    for day in range(days):
        n = gen.poisson(daily_trips)
        cells = gen.choice(flat.size, size=n, p=flat)
        # half the trips uniform over the day, half around 18:30
        secs = np.where(gen.random(n) < 0.5, gen.uniform(0, 86400, n),
                        np.clip(gen.normal(18.5 * 3600, 3600, n), 0, 86399))
        for c, s in zip(cells, secs):
            o, d = divmod(int(c), areas)
            ts = start + timedelta(days=day, seconds=int(s))
            out.append(TripRecord(o + 1, d + 1, ts, f"t{k:07d}"))
            k += 1
    out.sort(key=lambda r: (r.start_time, r.trip_id))
    return out


# configs


@dataclass
class PolicySpec:
    name: str
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        return self.name + "(" + ",".join(f"{k}={self.params[k]}" for k in sorted(self.params)) + ")"


@dataclass
class ExperimentConfig:
    """One sweep.

    ``instance`` is {"file": path}, {"builder": name, "params": {...}} or
    {"trips": path, "window": "HH:MM-HH:MM", "top_k": k, "days": d,
    "grouping": g}.  ``sweep`` is None, {"kind": "scale_s", "targets": [...]}
    or {"kind": "grid", "points": [[b, lam], ...]}.
    """

    instance: Dict[str, Any]
    policies: List[PolicySpec]
    objective: str = "fair-a"
    trials: int = 1000
    inner: int = 200
    seed: int = 0
    sweep: Optional[Dict[str, Any]] = None
    out: Optional[str] = None

    def __post_init__(self):
        self.policies = [p if isinstance(p, PolicySpec) else
                         PolicySpec(p) if isinstance(p, str) else PolicySpec(**p)
                         for p in self.policies]
        self.objective = self.objective.lower()
        if self.objective not in ("fair-a", "fair-b"):
            raise ValueError("objective must be fair-a or fair-b")
        if self.trials < 1 or self.inner < 1:
            raise ValueError("trials must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ExperimentConfig":
        return cls(**doc)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("out")  # where results go does not change them
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


BUILDERS = {
    "central_star": inst_mod.central_star,
    "pool_supply": inst_mod.pool_supply,
    "single_agent": inst_mod.single_agent,
}


def load_instance(source: Dict[str, Any], base_dir: Optional[Path] = None) -> Instance:
    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() or base_dir is None else base_dir / p

    if "file" in source:
        return Instance.load(resolve(source["file"]))
    if "builder" in source:
        name = source["builder"]
        if name not in BUILDERS:
            raise ValueError(f"unknown builder {name!r}; choose from {sorted(BUILDERS)}")
        return BUILDERS[name](**source.get("params", {}))
    if "trips" in source:
        records, _ = read_trips(resolve(source["trips"]))
        return ingest_trips(records, source.get("window", "18:00-19:00"), int(source.get("top_k", 484)),
                            source.get("days"), source.get("grouping", "homogeneous"))
    raise ValueError("instance source needs 'file', 'builder' or 'trips'")


def scale_to_min(instance: Instance, b: float, lam: float) -> Instance:
    """Rescale rates so the smallest is ``lam`` and capacities so the smallest is about ``b``.

    Capacities scale by a common factor with round-half-up and floor 1.
    """
    caps, rates = instance.capacities.astype(float), instance.rates
    new_rates = rates * (lam / rates.min())
    new_caps = [max(1, round_half_up(c * b / caps.min())) for c in caps]
    label = f"{instance.label}|b={b:g},lam={lam:g}"
    return instance.with_rates(new_rates, label=label).with_capacities(new_caps, label=label)


def sweep_points(config: ExperimentConfig, base: Instance) -> List[Tuple[str, Instance]]:
    sw = config.sweep
    if not sw:
        return [(base.label or "instance", base)]
    kind = sw.get("kind")
    pts = []
    if kind == "scale_s":
        for target in sw["targets"]:
            scaled, achieved = scale_to_target_s(base, float(target))
            scaled.metadata.update(target_s=float(target), achieved_s=achieved)
            pts.append((f"{base.label}|s*={float(target):g}", scaled))
    elif kind == "grid":
        for b, lam in sw["points"]:
            pts.append((f"{base.label}|b={b:g},lam={lam:g}", scale_to_min(base, b, lam)))
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")
    return pts


def _benchmark(instance: Instance, objective: str) -> Optional[float]:
    if objective == "fair-a":
        return opt_upper_bound(solve_benchmark(instance))
    if instance.num_agents == 1 and instance.adjacency.all():
        return offline_fair_b_single_agent(int(instance.capacities[0]), instance.total_rate)
    return None


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def run_cell(instance: Instance, spec: PolicySpec, config: ExperimentConfig,
             benchmark: Optional[float]) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "instance_label": instance.label, "policy": spec.label,
        "objective": FAIR_A if config.objective == "fair-a" else FAIR_B,
        "mean": None, "half_width_95": None, "trials": config.trials, "benchmark": benchmark,
        "competitive_ratio": None, "seed": config.seed, "config_hash": config.config_hash(),
        "error": "",
    }
    try:
        policy = make_policy(spec.name, instance, **spec.params)
        if config.objective == "fair-a":
            est = estimate_fair_a(policy, instance, config.trials, config.seed)
        else:
            est = estimate_fair_b(policy, instance, config.trials, config.inner, config.seed)
        row["mean"], row["half_width_95"] = est.mean, est.half_width_95
        if benchmark is not None:
            try:
                row["competitive_ratio"] = competitive_ratio(est, benchmark)
            except NotApplicable:
                row["error"] = "benchmark is zero"
    except Exception as exc:  # recorded per cell, the sweep goes on
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def run_sweep(config: ExperimentConfig, base_dir: Optional[Path] = None) -> List[Dict[str, Any]]:
    """Every (point, policy) cell of the config, in cell-key order."""
    base = load_instance(config.instance, base_dir)
    rows = []
    for p, (label, point) in enumerate(sweep_points(config, base)):
        try:
            bench = _benchmark(point, config.objective)
            bench_err = ""
        except Exception as exc:
            bench, bench_err = None, f"benchmark: {type(exc).__name__}: {exc}"
        for q, spec in enumerate(config.policies):
            row = run_cell(point, spec, config, bench)
            row["instance_label"] = label
            if bench_err and not row["error"]:
                row["error"] = bench_err
            rows.append(((p, q), row))
    rows.sort(key=lambda kv: kv[0])
    return [r for _, r in rows]


def results_csv(rows: Sequence[Dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(rows: Sequence[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(results_csv(rows))
    return path
