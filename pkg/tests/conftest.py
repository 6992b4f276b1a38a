"""Shared builders: a single honest node wired to its own store, network
environment, and trace, plus small header-tree helpers."""
from __future__ import annotations

import os

from nakasim import netenv
from nakasim import node as nd
from nakasim import params as pm
from nakasim import trace as tr
from nakasim.lottery import BpoId, HeaderStore

# keep worker pools out of unit tests regardless of the host machine
os.environ.setdefault("NAKASIM_THREADS", "1")


def bpo(slot: int, node: int = 1, honest: bool = True, seq: int = 0) -> BpoId:
    return BpoId(slot, node, honest, seq)


class Rig:
    """One honest node under test. Headers are minted straight into the
    shared store; tests deliver them and drive process_step by hand."""

    def __init__(self, rate=1.0, delay_slots=0,
                 policy=pm.POLICY_LONGEST_HEADER_CHAIN,
                 protocol=pm.PROTOCOL_POW, k_conf=2, k_epf=4, partition=None):
        self.store = HeaderStore()
        self.env = netenv.Environment([0], rate, delay_slots, partition)
        self.trace = tr.Trace()
        self.node = nd.Node(0, self.store, self.env, self.trace,
                            policy, protocol, k_conf, k_epf)

    def grow(self, parent, slot, node_id=1, seq=0, txs=(), upload=True,
             honest=True, proofs=(), pos=False):
        """Mint one child of `parent` and (by default) upload its content."""
        content = self.store.make_content(txs=txs, producer=node_id)
        mint = self.store.pos_extend if pos else self.store.pow_extend
        header = mint(BpoId(slot, node_id, honest, seq), parent.id,
                      content.commitment, proofs)
        if upload:
            self.env.upload_content(header, content, origin=node_id, slot=slot)
        return header, content

    def chain(self, length, start_slot=1, parent=None, slot_step=1, **kw):
        """A straight chain of `length` blocks; returns the header list."""
        parent = parent if parent is not None else self.store.genesis
        out = []
        slot = start_slot
        for _ in range(length):
            header, _ = self.grow(parent, slot, **kw)
            out.append(header)
            parent = header
            slot += slot_step
        return out

    def deliver(self, headers, slot):
        for h in headers if isinstance(headers, (list, tuple)) else [headers]:
            self.node.on_header(h, slot)

    def step(self, slot, times=1):
        for _ in range(times):
            self.node.process_step(slot)


class MiniRun:
    """Hand-built trace with full control over productions and fetches; used
    to exercise the audits on known-good and doctored histories."""

    def __init__(self, nodes=(0, 1), horizon=60, capacity=10.0, tau=0.1,
                 policy=pm.POLICY_LONGEST_HEADER_CHAIN, protocol=pm.PROTOCOL_POW,
                 k_epf=None):
        self.trace = tr.Trace()
        self.trace.emit(0, tr.META, scenario={}, seed=0, nu=4, c_tilde=None,
                        tau=tau, capacity=capacity, horizon_slots=horizon,
                        honest_nodes=list(nodes), protocol=protocol,
                        policy=policy, k_epf=k_epf)
        self.next_id = 1
        self.height = {0: 0}

    def produce(self, slot, parent=None, cls="honest", producer=0, h=1, a=0,
                bpo_seq=0, emit_bpo=True):
        """One production in `slot`; returns the new header id."""
        if parent is None:
            parent = self.next_id - 1 if self.next_id > 1 else 0
        if emit_bpo:
            self.trace.emit(slot, tr.BPO, h=h, a=a)
        hid = self.next_id
        self.next_id += 1
        self.height[hid] = self.height[parent] + 1
        self.trace.emit(slot, tr.BLOCK_PRODUCED, cls=cls, producer=producer,
                        header=hid, parent=parent, height=self.height[hid],
                        bpo_slot=slot, bpo_node=producer, bpo_seq=bpo_seq)
        return hid

    def busy(self, slot, h=0, a=1):
        self.trace.emit(slot, tr.BPO, h=h, a=a)

    def fetch(self, slot, node, header, paid=1.0):
        self.trace.emit(slot, tr.CONTENT_FETCHED, node=node, header=header,
                        via="request", paid=paid)

    def switch(self, slot, node, tip):
        self.trace.emit(slot, tr.CHAIN_SWITCHED, node=node, new=tip,
                        height=self.height[tip])

    def ledger(self, slot, node, length, tip):
        self.trace.emit(slot, tr.LEDGER_OUTPUT, node=node, len=length, tip=tip)
