"""Slot classification, pivot detection, and trace audits.

Terminology: a non-empty slot is *good* when it carries exactly one honest
production, no adversary production, and the following `nu` slots are silent;
otherwise it is *bad*.  Indexing the non-empty slots 1..K gives the walk
X_k = +-1 (good vs bad) and, once download success is known, the walk
Y_k = +-1 (downloaded-in-time vs not).  A *probabilistic pivot* at k means
every index interval containing k has more good than bad slots; a
*combinatorial pivot* means the same for downloaded vs not.
"""
from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import trace as tr


# ---------------------------------------------------------------------------
# pure series functions

def pivot_flags_walk(indicator: np.ndarray) -> np.ndarray:
    """O(n) pivot test from the walk form: index k (1-based position in the
    array) is a pivot iff indicator[k]==1, every suffix sum from k stays
    positive, and every prefix sum up to k-1 stays non-negative.  Implemented
    via prefix extrema of the +-1 walk."""
    ind = np.asarray(indicator, dtype=np.int64)
    n = ind.shape[-1]
    if n == 0:
        return np.zeros(0, dtype=bool)
    x = 2 * ind - 1
    s = np.concatenate([np.zeros(ind.shape[:-1] + (1,), dtype=np.int64),
                        np.cumsum(x, axis=-1)], axis=-1)
    prefmax = np.maximum.accumulate(s, axis=-1)
    sufmin = np.flip(np.minimum.accumulate(np.flip(s, axis=-1), axis=-1), axis=-1)
    # pivot at k  <=>  min_{j>=k} S_j > max_{i<=k-1} S_i
    return (ind == 1) & (sufmin[..., 1:] > prefmax[..., :-1])


def pivot_flags_interval(indicator) -> list[bool]:
    """Direct interval-form pivot test, O(n^3); kept as the slow oracle the
    walk form is cross-checked against."""
    ind = list(indicator)
    n = len(ind)
    s = [0]
    for v in ind:
        s.append(s[-1] + (1 if v else -1))
    flags = []
    for k in range(1, n + 1):
        ok = ind[k - 1] == 1
        if ok:
            for i in range(0, k):
                for j in range(k, n + 1):
                    if s[j] - s[i] <= 0:
                        ok = False
                        break
                if not ok:
                    break
        flags.append(ok)
    return flags


def is_pp_walk(good: np.ndarray, k: int) -> bool:
    """Probabilistic pivot test for 1-based index k (fast path)."""
    return bool(pivot_flags_walk(np.asarray(good))[k - 1])


def is_pp_interval(good, k: int) -> bool:
    """Probabilistic pivot test for 1-based index k (interval oracle)."""
    return pivot_flags_interval(good)[k - 1]


def is_cp(downloaded, k: int) -> bool:
    """Combinatorial pivot test on the downloaded indicator (1-based k)."""
    return bool(pivot_flags_walk(np.asarray(downloaded))[k - 1])


def margin_check(good: np.ndarray, i: int, j: int) -> tuple[int, int]:
    """For the index interval (i, j], return (good - bad, pivot count); the
    honest margin must cover the pivots whenever any pivot lies inside."""
    g = np.asarray(good, dtype=np.int64)
    flags = pivot_flags_walk(g)
    gsum = int(g[i:j].sum())
    bad = (j - i) - gsum
    return gsum - bad, int(flags[i:j].sum())


# ---------------------------------------------------------------------------
# index series extracted from a trace

@dataclass
class IndexSeries:
    """Per-index arrays over the non-empty slots of a run (1-based index k
    corresponds to array position k-1)."""

    slots: np.ndarray          # t_k
    good: np.ndarray           # G_k (bool)
    downloaded: np.ndarray     # D_k (bool), zero wherever not good
    block: np.ndarray          # header id of the good slot's block, -1 otherwise
    nu: int
    horizon: int

    def __len__(self) -> int:
        return len(self.slots)


def classify(run_trace: tr.Trace, nu: int) -> IndexSeries:
    """Build the index series from a trace: slot classes from production
    counts, download success from per-node processing completions."""
    meta = run_trace.meta
    horizon = meta["horizon_slots"]
    honest = list(meta["honest_nodes"])

    counts: dict[int, list[int]] = {}
    for ev in run_trace.of_kind(tr.BPO):
        counts[ev.slot] = [ev.data["h"], ev.data["a"] + ev.data.get("s", 0)]

    produced_at: dict[int, list[dict]] = {}
    for ev in run_trace.of_kind(tr.BLOCK_PRODUCED):
        if ev.data["cls"] == "honest":
            produced_at.setdefault(ev.data["bpo_slot"], []).append(ev.data)

    processed: dict[tuple[int, int], int] = {}

    def note(node: int, header: int, slot: int) -> None:
        key = (node, header)
        if key not in processed or slot < processed[key]:
            processed[key] = slot

    for ev in run_trace.events:
        if ev.kind == tr.BLOCK_PRODUCED and ev.data["cls"] == "honest":
            note(ev.data["producer"], ev.data["header"], ev.slot)
        elif ev.kind in (tr.CONTENT_FETCHED, tr.PRETEND_EMPTY):
            note(ev.data["node"], ev.data["header"], ev.slot)

    slots = sorted(counts)
    n = len(slots)
    good = np.zeros(n, dtype=bool)
    downloaded = np.zeros(n, dtype=bool)
    block = np.full(n, -1, dtype=np.int64)

    nonempty = set(slots)
    for k, t in enumerate(slots):
        h, a = counts[t]
        if h != 1 or a != 0:
            continue
        if any((t + d) in nonempty for d in range(1, nu + 1)):
            continue
        blocks = produced_at.get(t, [])
        if len(blocks) != 1:
            continue
        good[k] = True
        b = blocks[0]["header"]
        block[k] = b
        deadline = t + nu
        downloaded[k] = all(processed.get((p, b), horizon + nu + 1) <= deadline
                            for p in honest)
    return IndexSeries(np.asarray(slots, dtype=np.int64), good, downloaded,
                       block, nu, horizon)


# ---------------------------------------------------------------------------
# audits

@dataclass
class AuditResult:
    name: str
    passed: bool
    inconclusive: bool = False
    checked: int = 0
    violations: list = field(default_factory=list)

    def summary(self) -> str:
        state = ("inconclusive" if self.inconclusive
                 else "pass" if self.passed else "FAIL")
        return f"{self.name}: {state} ({self.checked} checked, {len(self.violations)} violations)"


_MAX_WITNESSES = 10


def _header_table(run_trace: tr.Trace) -> dict[int, dict]:
    table: dict[int, dict] = {}
    for ev in run_trace.of_kind(tr.BLOCK_PRODUCED):
        table[ev.data["header"]] = ev.data
    return table


def _ancestor_at(table: dict[int, dict], header: int, height: int) -> int:
    h = table.get(header)
    cur = header
    while h is not None and h["height"] > height:
        cur = h["parent"]
        h = table.get(cur)
    if height == 0:
        return 0
    return cur


def _tip_timelines(run_trace: tr.Trace) -> dict[int, list[tuple[int, int, int]]]:
    """Per node: list of (slot, tip, height) dChain tip changes, in order."""
    timelines: dict[int, list[tuple[int, int, int]]] = {}
    for ev in run_trace.of_kind(tr.CHAIN_SWITCHED):
        d = ev.data
        timelines.setdefault(d["node"], []).append((ev.slot, d["new"], d["height"]))
    return timelines


def audit_chain_growth(run_trace: tr.Trace, series: IndexSeries) -> AuditResult:
    """Every downloaded index lifts the minimum honest chain height:
    L_min(t_k + nu) >= L_min(t_k - 1) + D(i,k] along the run."""
    meta = run_trace.meta
    honest = list(meta["honest_nodes"])
    timelines = _tip_timelines(run_trace)

    # minimum honest dChain height at end of each relevant slot, via merge
    changes: list[tuple[int, int, int]] = []   # (slot, node, height)
    for p in honest:
        for slot, _tip, height in timelines.get(p, []):
            changes.append((slot, p, height))
    changes.sort()

    heights = {p: 0 for p in honest}
    idx = 0

    def lmin_at(slot: int) -> int:
        nonlocal idx
        while idx < len(changes) and changes[idx][0] <= slot:
            _, p, h = changes[idx]
            heights[p] = max(heights[p], h)
            idx += 1
        return min(heights.values()) if heights else 0

    result = AuditResult("chain-growth", True)
    queries: list[tuple[int, int, int]] = []   # (query slot, kind, k)
    for k in range(len(series)):
        if series.downloaded[k]:
            t = int(series.slots[k])
            queries.append((t - 1, 0, k))
            queries.append((t + series.nu, 1, k))
    queries.sort()
    before: dict[int, int] = {}
    for slot, kind, k in queries:
        if kind == 0:
            before[k] = lmin_at(slot)
        else:
            result.checked += 1
            after = lmin_at(slot)
            if after < before[k] + 1:
                result.passed = False
                if len(result.violations) < _MAX_WITNESSES:
                    result.violations.append(
                        {"index": k + 1, "slot": int(series.slots[k]),
                         "lmin_before": before[k], "lmin_after": after})
    return result


def audit_stabilization(run_trace: tr.Trace, series: IndexSeries,
                        cp_flags: np.ndarray) -> AuditResult:
    """Every combinatorial pivot's block must sit on every honest dChain from
    the end of its window onward."""
    meta = run_trace.meta
    honest = list(meta["honest_nodes"])
    table = _header_table(run_trace)
    timelines = _tip_timelines(run_trace)

    result = AuditResult("cp-stabilization", True)
    cps = [(int(series.slots[k]) + series.nu, int(series.block[k]), k + 1)
           for k in range(len(series)) if cp_flags[k]]
    if not cps:
        result.inconclusive = True
        return result

    for p in honest:
        line = timelines.get(p, [])
        for start_slot, block, k in cps:
            height = table[block]["height"]
            ok = True
            witness_slot = None
            # tip in force at start_slot, then every later change
            pos = bisect.bisect_right([s for s, _, _ in line], start_slot) - 1
            to_check = []
            if pos >= 0:
                to_check.append(line[pos])
            to_check.extend(line[pos + 1:])
            if not to_check:
                ok = False
                witness_slot = start_slot
            for slot, tip, tip_height in to_check:
                if tip_height < height or _ancestor_at(table, tip, height) != block:
                    ok = False
                    witness_slot = slot
                    break
            result.checked += 1
            if not ok:
                result.passed = False
                if len(result.violations) < _MAX_WITNESSES:
                    result.violations.append(
                        {"index": k, "block": block, "node": p,
                         "slot": witness_slot})
    return result


def audit_budget(run_trace: tr.Trace, series: IndexSeries,
                 cp_flags: np.ndarray, c_tilde: float) -> AuditResult:
    """A good-but-undownloaded index shows where the bandwidth went: every
    honest node that missed the block must have completed at least c_tilde
    fetches of blocks produced after the latest prior combinatorial pivot."""
    result = AuditResult("download-budget", True)
    if c_tilde is None or c_tilde <= 0.0:
        result.inconclusive = True
        return result
    meta = run_trace.meta
    honest = list(meta["honest_nodes"])
    if meta.get("policy") != "longest-header-chain":
        result.inconclusive = True
        return result
    table = _header_table(run_trace)

    fetches: dict[int, list[tuple[int, int]]] = {p: [] for p in honest}
    processed: dict[tuple[int, int], int] = {}
    for ev in run_trace.events:
        if ev.kind == tr.CONTENT_FETCHED:
            node, header = ev.data["node"], ev.data["header"]
            if node in fetches and ev.data.get("via", "request") == "request":
                fetches[node].append((ev.slot, header))
            processed.setdefault((node, header), ev.slot)
        elif ev.kind == tr.PRETEND_EMPTY:
            processed.setdefault((ev.data["node"], ev.data["header"]), ev.slot)
        elif ev.kind == tr.BLOCK_PRODUCED and ev.data["cls"] == "honest":
            processed.setdefault((ev.data["producer"], ev.data["header"]), ev.slot)

    last_cp_slot = 0
    for k in range(len(series)):
        t = int(series.slots[k])
        if series.good[k] and not series.downloaded[k]:
            deadline = t + series.nu
            b = int(series.block[k])
            for p in honest:
                if processed.get((p, b), deadline + 1) <= deadline:
                    continue
                count = 0
                for slot, header in fetches[p]:
                    if t <= slot <= deadline:
                        info = table.get(header)
                        if info is not None and last_cp_slot < info["bpo_slot"] <= t:
                            count += 1
                result.checked += 1
                if count < math.floor(c_tilde - 1e-9):
                    result.passed = False
                    if len(result.violations) < _MAX_WITNESSES:
                        result.violations.append(
                            {"index": k + 1, "slot": t, "node": p,
                             "fetched": count, "required": c_tilde})
        if cp_flags[k]:
            last_cp_slot = t
    if result.checked == 0:
        result.inconclusive = True
    return result


def audit_single_fetch(run_trace: tr.Trace) -> AuditResult:
    """Each production opportunity's content is fetched at most once per node
    (per header on plain PoS, where equivocating copies are distinct)."""
    meta = run_trace.meta
    per_bpo = meta.get("protocol") != "pos"
    table = _header_table(run_trace)
    seen: set = set()
    result = AuditResult("single-fetch", True)
    for ev in run_trace.of_kind(tr.CONTENT_FETCHED):
        if ev.data.get("via", "request") != "request":
            continue
        node, header = ev.data["node"], ev.data["header"]
        if per_bpo:
            info = table.get(header)
            key = (node, info["bpo_slot"], info["bpo_node"], info["bpo_seq"]) \
                if info else (node, header)
        else:
            key = (node, header)
        result.checked += 1
        if key in seen:
            result.passed = False
            if len(result.violations) < _MAX_WITNESSES:
                result.violations.append({"node": node, "header": header,
                                          "slot": ev.slot})
        seen.add(key)
    return result


def audit_capacity(run_trace: tr.Trace) -> AuditResult:
    """Tokens paid out at fetch completions over any window of w slots stay
    within capacity * tau * w + 1 (one block of carry-over).  Partially paid
    downloads settle the remainder at completion, so the paid fraction is
    what the window bound constrains, not the completion count."""
    meta = run_trace.meta
    rate = meta["capacity"] * meta["tau"]
    result = AuditResult("capacity", True)
    per_node: dict[int, list[tuple[int, float]]] = {}
    for ev in run_trace.of_kind(tr.CONTENT_FETCHED):
        if ev.data.get("via", "request") == "request":
            per_node.setdefault(ev.data["node"], []).append(
                (ev.slot, float(ev.data.get("paid", 1.0))))
    for node, payments in sorted(per_node.items()):
        # paid(i..j) <= rate*(slot_j - slot_i + 1) + 1 for all i<=j reduces
        # to a running-minimum check on b_k = cum_before_k - rate*slot_k.
        run_min = math.inf
        min_at = None
        cum = 0.0
        for s, w in payments:
            b = cum - rate * s
            if b < run_min:
                run_min = b
                min_at = s
            cum += w
            if (cum - rate * s) - run_min > rate + 1.0 + 1e-9:
                result.passed = False
                if len(result.violations) < _MAX_WITNESSES:
                    result.violations.append({"node": node, "slot": s,
                                              "window_start": min_at})
            result.checked += 1
    return result


def audit_ledger_safety(run_trace: tr.Trace) -> AuditResult:
    """All confirmed prefixes (across nodes and time) are consistent."""
    table = _header_table(run_trace)
    result = AuditResult("ledger-safety", True)
    max_len, max_tip = 0, 0
    for ev in run_trace.of_kind(tr.LEDGER_OUTPUT):
        ln, tip = ev.data["len"], ev.data["tip"]
        result.checked += 1
        if ln <= max_len:
            ok = _ancestor_at(table, max_tip, ln) == tip
        else:
            ok = _ancestor_at(table, tip, max_len) == max_tip
            if ok:
                max_len, max_tip = ln, tip
        if not ok:
            result.passed = False
            if len(result.violations) < _MAX_WITNESSES:
                result.violations.append({"node": ev.data["node"],
                                          "slot": ev.slot, "len": ln})
    return result


def audit_blanking(run_trace: tr.Trace, k_epf: Optional[int]) -> AuditResult:
    """Blanked blocks are never honest, and each has an on-chain proof within
    k_epf blocks above it."""
    table = _header_table(run_trace)
    result = AuditResult("blanking", True)
    proof_depth: dict[int, int] = {}
    for ev in run_trace.of_kind(tr.PROOF_INCLUDED):
        carrier = table.get(ev.data["carrier"])
        target = table.get(ev.data["target"])
        if carrier and target:
            depth = carrier["height"] - target["height"] - 1
            prev = proof_depth.get(ev.data["target"])
            if prev is None or depth < prev:
                proof_depth[ev.data["target"]] = depth
    blanked = {ev.data["block"] for ev in run_trace.of_kind(tr.BLANKED)}
    for block in sorted(blanked):
        info = table.get(block)
        result.checked += 1
        if info is not None and info["cls"] == "honest":
            result.passed = False
            result.violations.append({"block": block, "reason": "honest block blanked"})
        if k_epf is not None:
            depth = proof_depth.get(block)
            if depth is None or depth > k_epf:
                result.passed = False
                if len(result.violations) < _MAX_WITNESSES:
                    result.violations.append({"block": block, "reason": "no timely proof",
                                              "depth": depth})
    if not blanked:
        result.inconclusive = True
    return result


@dataclass
class WindowStats:
    k_cp: int
    tumbling_total: int
    tumbling_hit: int
    sliding_total: int
    sliding_hit: int

    @property
    def sliding_fraction(self) -> float:
        return self.sliding_hit / self.sliding_total if self.sliding_total else float("nan")


def cp_recurrence(cp_flags: np.ndarray, k_cp: int,
                  edge_margin: Optional[int] = None) -> WindowStats:
    """Count tumbling k_cp windows and sliding 2*k_cp windows that contain a
    combinatorial pivot, excluding an edge margin at both ends."""
    flags = np.asarray(cp_flags, dtype=bool)
    n = len(flags)
    margin = k_cp if edge_margin is None else edge_margin
    lo, hi = margin, n - margin
    stats = WindowStats(k_cp, 0, 0, 0, 0)
    if hi - lo < k_cp:
        return stats
    csum = np.concatenate([[0], np.cumsum(flags)])
    m = lo
    while m + k_cp <= hi:
        stats.tumbling_total += 1
        if csum[m + k_cp] - csum[m] > 0:
            stats.tumbling_hit += 1
        m += k_cp
    w = 2 * k_cp
    if hi - lo >= w:
        counts = csum[lo + w:hi + 1] - csum[lo:hi + 1 - w]
        stats.sliding_total = len(counts)
        stats.sliding_hit = int((counts > 0).sum())
    return stats


# ---------------------------------------------------------------------------
# report

@dataclass
class PivotReport:
    nu: int
    c_tilde: Optional[float]
    k_cp: int
    n_indices: int
    n_good: int
    n_downloaded: int
    pp_indices: list[int]
    cp_indices: list[int]
    windows: WindowStats
    audits: list[AuditResult]

    @property
    def passed(self) -> bool:
        return all(a.passed or a.inconclusive for a in self.audits)

    def to_dict(self) -> dict:
        return {
            "nu": self.nu, "c_tilde": self.c_tilde, "k_cp": self.k_cp,
            "indices": self.n_indices, "good": self.n_good,
            "downloaded": self.n_downloaded,
            "pp_count": len(self.pp_indices), "cp_count": len(self.cp_indices),
            "pp_indices": self.pp_indices[:1000],
            "cp_indices": self.cp_indices[:1000],
            "windows": {
                "k_cp": self.windows.k_cp,
                "tumbling_total": self.windows.tumbling_total,
                "tumbling_hit": self.windows.tumbling_hit,
                "sliding_total": self.windows.sliding_total,
                "sliding_hit": self.windows.sliding_hit,
            },
            "audits": [{"name": a.name, "passed": a.passed,
                        "inconclusive": a.inconclusive, "checked": a.checked,
                        "violations": a.violations} for a in self.audits],
            "passed": self.passed,
        }


def analyze_trace(run_trace: tr.Trace, nu: int, c_tilde: Optional[float],
                  k_cp: int) -> tuple[PivotReport, IndexSeries]:
    series = classify(run_trace, nu)
    pp = pivot_flags_walk(series.good.astype(np.int64))
    cp = pivot_flags_walk(series.downloaded.astype(np.int64))
    audits = [
        audit_chain_growth(run_trace, series),
        audit_stabilization(run_trace, series, cp),
        audit_budget(run_trace, series, cp, c_tilde),
        audit_single_fetch(run_trace),
        audit_capacity(run_trace),
        audit_ledger_safety(run_trace),
    ]
    meta = run_trace.meta
    if meta.get("protocol") == "sapos":
        audits.append(audit_blanking(run_trace, meta.get("k_epf")))
    report = PivotReport(
        nu=nu, c_tilde=c_tilde, k_cp=k_cp,
        n_indices=len(series),
        n_good=int(series.good.sum()),
        n_downloaded=int(series.downloaded.sum()),
        pp_indices=[k + 1 for k in np.nonzero(pp)[0].tolist()],
        cp_indices=[k + 1 for k in np.nonzero(cp)[0].tolist()],
        windows=cp_recurrence(cp, k_cp),
        audits=audits,
    )
    return report, series


def write_report(report: PivotReport, series: IndexSeries, json_path: str,
                 csv_path: str) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    pp = pivot_flags_walk(series.good.astype(np.int64))
    cp = pivot_flags_walk(series.downloaded.astype(np.int64))
    x_prefix = np.cumsum(2 * series.good.astype(np.int64) - 1)
    y_prefix = np.cumsum(2 * series.downloaded.astype(np.int64) - 1)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "slot", "good", "downloaded", "x_prefix", "y_prefix",
                    "pp", "cp"])
        for k in range(len(series)):
            w.writerow([k + 1, int(series.slots[k]), int(series.good[k]),
                        int(series.downloaded[k]), int(x_prefix[k]),
                        int(y_prefix[k]), int(pp[k]), int(cp[k])])
