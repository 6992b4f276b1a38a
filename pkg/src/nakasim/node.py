"""Honest node: header tree, download scheduler, chain selection, ledger.

A node keeps every valid header it has seen, downloads content for one block
at a time according to its scheduling policy, and extends the longest fully
processed chain when it wins a production opportunity.  Processing one block
costs one unit of download budget; blanked or adversary-pushed content is
free.  Partially paid downloads survive preemption in a small LRU cache.
"""
from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Callable, Optional

from . import params as pm
from . import sapos as sp
from . import trace as tr
from .lottery import BlockHeader, BpoId, Content, HeaderStore
from .netenv import Environment, RequestOutcome

MAX_SCHEDULER_TIPS = 100
MAX_PARTIAL_TASKS = 10


@dataclass
class LedgerEntry:
    header_id: int
    height: int
    blanked: bool
    txs: tuple


class Node:
    def __init__(self, node_id: int, store: HeaderStore, env: Environment,
                 run_trace: tr.Trace, policy: str, protocol: str,
                 k_conf: int, k_epf: int = 0,
                 audit_sink: Optional["object"] = None):
        self.id = node_id
        self.store = store
        self.env = env
        self.trace = run_trace
        self.policy = policy
        self.protocol = protocol
        self.sapos = protocol == pm.PROTOCOL_SAPOS
        self.k_conf = k_conf
        self.k_epf = k_epf
        self.audit_sink = audit_sink

        g = store.genesis.id
        self.known: set[int] = {g}
        self.seen_order: dict[int, int] = {g: 0}
        self._seen_counter = 1
        self.processed: set[int] = {g}
        self.blanked: set[int] = set()
        self.content_known: dict[int, Content] = {}
        self.invalid: set[int] = set()
        self.bpo_seen: dict[tuple, list[int]] = {}

        self.tips: dict[int, None] = OrderedDict()
        self._tip_key: dict[int, tuple] = {}
        self._pending: dict[int, Optional[deque]] = {}
        # greedy keys stay valid until another block is processed or blanked;
        # the scheduler's tip ordering additionally depends on membership
        self._done_version = 0
        self._greedy_cache: dict[int, tuple[int, tuple]] = {}
        self._tips_version = 0
        self._sorted_cache: tuple[int, int, list[int]] = (-1, -1, [])
        self.partial: OrderedDict[int, float] = OrderedDict()
        self.unavailable: set[int] = set()
        self._unavailable_by_commitment: dict[int, set[int]] = {}

        self.dchain: list[int] = []           # header ids, height 1..len
        self.proofed_targets: set[int] = set()  # proof targets on current dchain
        self.confirmed_len = 0
        self.confirmed_tip = g
        self._ledger_blanked: dict[int, bool] = {}

        self.pool: deque = deque()
        self.included_txids: set = set()

        self.active = False
        self.invalid_header_count = 0

    # -- header intake --------------------------------------------------

    @property
    def dchain_tip(self) -> int:
        return self.dchain[-1] if self.dchain else self.store.genesis.id

    @property
    def dchain_height(self) -> int:
        return len(self.dchain)

    def is_done(self, header_id: int) -> bool:
        return header_id in self.processed or header_id in self.blanked

    def on_header(self, header: BlockHeader, slot: int) -> list[int]:
        """Insert a delivered header together with any unknown ancestors
        (a header implies its chain). Returns newly inserted ids; invalid
        headers and their descendants are dropped."""
        chain: list[BlockHeader] = []
        h = header
        while h.id not in self.known:
            if h.id in self.invalid:
                return []
            chain.append(h)
            h = self.store.get(h.parent_id)
        inserted: list[int] = []
        for h in reversed(chain):
            if not self._validate(h):
                self.invalid.add(h.id)
                self.invalid_header_count += 1
                break
            self._insert(h, slot)
            inserted.append(h.id)
        if inserted:
            self.active = True
        return inserted

    def _validate(self, h: BlockHeader) -> bool:
        parent = self.store.get(h.parent_id)
        if (h.bpo.slot, h.bpo.seq) <= (parent.bpo.slot, parent.bpo.seq):
            return False
        if self.sapos:
            for proof in h.proofs:
                if not sp.validate_proof_deadline(self.store, h, proof, self.k_epf):
                    return False
        return True

    def _insert(self, h: BlockHeader, slot: int) -> None:
        self.known.add(h.id)
        self.seen_order[h.id] = self._seen_counter
        self._seen_counter += 1

        seen = self.bpo_seen.setdefault(h.bpo.key(), [])
        seen.append(h.id)
        if len(seen) == 2:
            self.trace.emit(slot, tr.EQUIVOCATION_SEEN, node=self.id,
                            bpo_slot=h.bpo.slot, bpo_node=h.bpo.node,
                            bpo_seq=h.bpo.seq, headers=list(seen))

        # tip bookkeeping: the parent stops being a tip, the new header
        # inherits its pending queue when it extends one.
        self._tips_version += 1
        if h.parent_id in self.tips:
            del self.tips[h.parent_id]
            self._tip_key.pop(h.parent_id, None)
            self._greedy_cache.pop(h.parent_id, None)
            dq = self._pending.pop(h.parent_id, None)
            if dq is not None:
                dq.append(h.id)
            self._pending[h.id] = dq
        else:
            self._pending[h.id] = None   # built lazily on first consideration
        self.tips[h.id] = None
        order = -self.seen_order[h.id]
        if self.policy == pm.POLICY_FRESHEST_BLOCK:
            self._tip_key[h.id] = (h.bpo.slot, h.height, order)
        else:
            self._tip_key[h.id] = (h.height, order)
        if len(self.tips) > MAX_SCHEDULER_TIPS:
            worst = min(self.tips, key=self._policy_key)
            self._drop_tips([worst])

    def content_uploaded(self, commitment: int) -> None:
        """Clear the known-unavailable memo for headers waiting on this
        commitment; the scheduler may retry them this slot."""
        ids = self._unavailable_by_commitment.pop(commitment, None)
        if ids:
            self.unavailable.difference_update(ids)
            self.active = True

    # -- scheduling -------------------------------------------------------

    def _build_pending(self, tip_id: int) -> deque:
        stack = []
        cur = tip_id
        while not self.is_done(cur):
            stack.append(cur)
            cur = self.store.get(cur).parent_id
        return deque(reversed(stack))

    def _pending_for(self, tip_id: int) -> deque:
        dq = self._pending.get(tip_id)
        if dq is None:
            dq = self._build_pending(tip_id)
            self._pending[tip_id] = dq
        while dq and self.is_done(dq[0]):
            dq.popleft()
        return dq

    def _policy_key(self, tip_id: int) -> tuple:
        base = self._tip_key[tip_id]
        if self.policy == pm.POLICY_GREEDY:
            # processed prefix length first, then the cached (height, order)
            hit = self._greedy_cache.get(tip_id)
            if hit is not None and hit[0] == self._done_version:
                return hit[1]
            dq = self._pending_for(tip_id)
            full = (base[0] - len(dq),) + base
            self._greedy_cache[tip_id] = (self._done_version, full)
            return full
        return base

    def schedule_target(self, slot: int) -> Optional[BlockHeader]:
        """Pick the next block to download under the configured policy,
        performing any zero-cost processing (blanking, pushed content)
        encountered on the chains as they are considered.  Fully processed
        tips are dropped from the scheduler; they need no further work and
        a later child rebuilds its queue lazily."""
        key = (self._tip_key.__getitem__
               if self.policy != pm.POLICY_GREEDY else self._policy_key)
        while True:
            acted = False
            finished: list[int] = []
            done_v, tips_v, ordered = self._sorted_cache
            if done_v != self._done_version or tips_v != self._tips_version:
                ordered = sorted(self.tips, key=key, reverse=True)
                self._sorted_cache = (self._done_version, self._tips_version,
                                      ordered)
            for tip_id in ordered:
                dq = self._pending_for(tip_id)
                while dq:
                    front = dq[0]
                    if self.is_done(front):
                        dq.popleft()
                    elif self.sapos and sp.equivocated_in_view(
                            self, self.store.get(front)):
                        self._mark_blanked(front, slot)
                        dq.popleft()
                        acted = True
                    elif front in self.content_known:
                        self._mark_processed(front, slot, via="push")
                        dq.popleft()
                        acted = True
                    else:
                        break
                if not dq:
                    finished.append(tip_id)
                    continue
                if dq[0] in self.unavailable:
                    continue
                self._drop_tips(finished)
                return self.store.get(dq[0])
            self._drop_tips(finished)
            if not acted:
                return None

    def _drop_tips(self, tip_ids: list[int]) -> None:
        if tip_ids:
            self._tips_version += 1
        for t in tip_ids:
            self.tips.pop(t, None)
            self._pending.pop(t, None)
            self._tip_key.pop(t, None)
            self._greedy_cache.pop(t, None)

    def process_step(self, slot: int) -> None:
        """Spend this slot's remaining budget on scheduled downloads; called
        once per slot after deliveries and production."""
        while True:
            target = self.schedule_target(slot)
            if target is None:
                self.active = False
                return
            paid = self.partial.get(target.id, 0.0)
            outcome, newly = self.env.request_content(self.id, target, paid, slot)
            if outcome is RequestOutcome.UNAVAILABLE:
                self.unavailable.add(target.id)
                self._unavailable_by_commitment.setdefault(
                    target.commitment, set()).add(target.id)
                continue
            if outcome is RequestOutcome.FETCHED:
                self.partial.pop(target.id, None)
                self.trace.emit(slot, tr.CONTENT_FETCHED, node=self.id,
                                header=target.id, via="request", paid=newly)
                self._mark_processed(target.id, slot, via="request")
                continue
            # throttled: bank the partial payment, keep the task warm
            if newly > 0.0:
                self.partial[target.id] = paid + newly
                self.partial.move_to_end(target.id)
                if len(self.partial) > MAX_PARTIAL_TASKS:
                    self.partial.popitem(last=False)   # oldest work is lost
            return

    def receive_pushed_content(self, header: BlockHeader, content: Content) -> None:
        if content.commitment == header.commitment:
            self.content_known[header.id] = content
            self.active = True

    # -- processing and chain selection ------------------------------------

    def _mark_blanked(self, header_id: int, slot: int) -> None:
        self.blanked.add(header_id)
        self._done_version += 1
        self.trace.emit(slot, tr.PRETEND_EMPTY, node=self.id, header=header_id)
        self._after_processed(header_id, slot)

    def _mark_processed(self, header_id: int, slot: int, via: str) -> None:
        self.processed.add(header_id)
        self._done_version += 1
        if via == "push":
            self.trace.emit(slot, tr.CONTENT_FETCHED, node=self.id,
                            header=header_id, via="push")
        self._after_processed(header_id, slot)

    def _after_processed(self, header_id: int, slot: int) -> None:
        h = self.store.get(header_id)
        if h.height <= self.dchain_height:
            return
        old_tip = self.dchain_tip
        extension = h.parent_id == old_tip
        if extension:
            self.dchain.append(h.id)
            self._on_chain_extended(h)
        else:
            self.dchain = self.store.chain_to(h.id)
            self._rebuild_chain_state()
        self.trace.emit(slot, tr.CHAIN_SWITCHED, node=self.id, old=old_tip,
                        new=h.id, height=h.height, switch=not extension)
        self._update_ledger(slot)

    def _on_chain_extended(self, h: BlockHeader) -> None:
        for proof in h.proofs:
            self.proofed_targets.add(proof.target)
        if h.id in self.processed:
            content = self._content_of(h)
            if content is not None:
                self.included_txids.update(t[0] for t in content.txs)

    def _rebuild_chain_state(self) -> None:
        self.proofed_targets = set()
        self.included_txids = set()
        for hid in self.dchain:
            h = self.store.get(hid)
            for proof in h.proofs:
                self.proofed_targets.add(proof.target)
            if hid in self.processed:
                content = self._content_of(h)
                if content is not None:
                    self.included_txids.update(t[0] for t in content.txs)

    def _content_of(self, h: BlockHeader) -> Optional[Content]:
        c = self.content_known.get(h.id)
        if c is not None:
            return c
        return self.store.contents.get(h.commitment) \
            if h.commitment in self.env.cloud or h.id in self.processed else None

    def _update_ledger(self, slot: int) -> None:
        new_len = max(0, self.dchain_height - self.k_conf)
        if new_len == 0:
            return
        new_tip = self.dchain[new_len - 1]
        if new_len == self.confirmed_len and new_tip == self.confirmed_tip:
            return
        start = self.confirmed_len if new_len > self.confirmed_len else 0
        self.confirmed_len = new_len
        self.confirmed_tip = new_tip
        self.trace.emit(slot, tr.LEDGER_OUTPUT, node=self.id, len=new_len,
                        tip=new_tip)
        for idx in range(start, new_len):
            self._check_confirmed(self.dchain[idx], slot)

    def _check_confirmed(self, header_id: int, slot: int) -> None:
        """Ledger-level bookkeeping when a block becomes confirmed: final
        blank status under the blanking rule, plus the missing-content audit."""
        if not self.sapos:
            return
        blanked = header_id in self.proofed_targets
        if blanked and not self._ledger_blanked.get(header_id, False):
            self.trace.emit(slot, tr.BLANKED, node=self.id, block=header_id)
        self._ledger_blanked[header_id] = blanked
        if self.audit_sink is not None:
            self.audit_sink.note_blank_status(self.id, header_id, blanked, slot)
            if not blanked and header_id not in self.processed:
                self.audit_sink.note_missing_content(self.id, header_id, slot)

    # -- production ---------------------------------------------------------

    def try_produce(self, bpo: BpoId, slot: int) -> tuple[BlockHeader, Content]:
        """Extend the longest processed chain with a new block; empty pool
        still yields an (empty) block."""
        txs = self._take_txs()
        proofs = sp.attach_proofs(self, slot) if self.sapos else ()
        content = self.store.make_content(txs, producer=self.id)
        extend = (self.store.pow_extend if self.protocol == pm.PROTOCOL_POW
                  else self.store.pos_extend)
        header = extend(bpo, self.dchain_tip, content.commitment, proofs)
        for proof in proofs:
            self.trace.emit(slot, tr.PROOF_INCLUDED, node=self.id,
                            carrier=header.id, target=proof.target,
                            other=proof.header_b)
        self.content_known[header.id] = content
        self._insert(header, slot)
        self.processed.add(header.id)
        self._after_processed(header.id, slot)
        return header, content

    def _take_txs(self) -> tuple:
        taken = []
        size = 0.0
        while self.pool:
            tx = self.pool[0]
            if tx[0] in self.included_txids:
                self.pool.popleft()
                continue
            if size + tx[1] > 1.0 + 1e-9:
                break
            taken.append(tx)
            size += tx[1]
            self.pool.popleft()
        return tuple(taken)

    def receive_tx(self, tx: tuple) -> None:
        self.pool.append(tx)

    # -- output ---------------------------------------------------------

    def output_ledger(self) -> list[LedgerEntry]:
        """Confirmed prefix with blanking applied (content of blocks whose
        equivocation is proven on-chain is dropped)."""
        out = []
        for hid in self.dchain[:self.confirmed_len]:
            h = self.store.get(hid)
            blanked = self.sapos and hid in self.proofed_targets
            txs: tuple = ()
            if not blanked:
                content = self._content_of(h)
                txs = content.txs if content is not None else ()
            out.append(LedgerEntry(hid, h.height, blanked, txs))
        return out
