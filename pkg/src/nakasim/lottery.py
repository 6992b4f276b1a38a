"""Slot clock, block-production lotteries, and the shared header tree.

Per-slot honest and adversary wins are independent Poisson draws taken from a
counter-based generator, so the outcome of any slot is a pure function of
(seed, slot, stream) and runs replay byte-identically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

# Stream identifiers for the counter-based generator.  Values are arbitrary
# but fixed: changing them changes every sampled execution.
STREAM_HONEST = 0x68
STREAM_ADVERSARY = 0x61
STREAM_SPV = 0x73
STREAM_ASSIGN = 0x6E
STREAM_ANALYSIS = 0x79


def _poisson_cdf_table(mu: float) -> np.ndarray:
    """Cumulative Poisson table covering all mass reachable by a 53-bit
    uniform draw."""
    if mu <= 0.0:
        return np.array([1.0])
    n_max = int(mu + 12.0 * math.sqrt(mu) + 30.0)
    pmf = np.empty(n_max + 1)
    pmf[0] = math.exp(-mu)
    for n in range(1, n_max + 1):
        pmf[n] = pmf[n - 1] * mu / n
    return np.minimum(np.cumsum(pmf), 1.0)


def _slot_gen(seed: int, stream: int, slot: int) -> np.random.Generator:
    """Fresh generator keyed on (seed, stream, slot) for per-slot draws whose
    count varies (node assignment); cheap because only non-empty slots need it."""
    key = np.array([(seed ^ (stream * 0x9E3779B97F4A7C15)) & 0xFFFFFFFFFFFFFFFF,
                    slot & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class BpoId:
    """Identity of one block-production opportunity."""

    slot: int
    node: int
    honest: bool
    seq: int = 0

    def key(self) -> tuple:
        return (self.slot, self.node, self.honest, self.seq)


@dataclass(frozen=True)
class SlotOutcome:
    slot: int
    h_count: int
    a_count: int
    bpos: tuple[BpoId, ...] = ()


class SlotSampler:
    """Deterministic per-slot lottery. One uniform per slot per stream drives
    a table-inverted Poisson count; winners are assigned to uniformly random
    nodes of the matching class."""

    def __init__(self, seed: int, beta: float, rho: float,
                 honest_nodes: Iterable[int], adversary_nodes: Iterable[int],
                 spv_rate_per_slot: float = 0.0):
        self.seed = seed
        self.mu_h = (1.0 - beta) * rho
        self.mu_a = beta * rho
        self.mu_s = spv_rate_per_slot
        self.honest_nodes = tuple(honest_nodes)
        self.adversary_nodes = tuple(adversary_nodes)
        self._cdf_h = _poisson_cdf_table(self.mu_h)
        self._cdf_a = _poisson_cdf_table(self.mu_a)
        self._cdf_s = _poisson_cdf_table(self.mu_s)

    def counts(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised (honest, adversary, spv) win counts for slots
        [start, stop). Slot t always consumes the t-th draw of its stream."""
        n = stop - start
        out = []
        for stream, cdf, mu in ((STREAM_HONEST, self._cdf_h, self.mu_h),
                                (STREAM_ADVERSARY, self._cdf_a, self.mu_a),
                                (STREAM_SPV, self._cdf_s, self.mu_s)):
            if mu <= 0.0:
                out.append(np.zeros(n, dtype=np.int64))
                continue
            bg = np.random.Philox(key=np.array([self.seed & 0xFFFFFFFFFFFFFFFF,
                                                stream], dtype=np.uint64))
            # advance() steps whole 4-word counter blocks; give each slot one
            # block so slot t is always the same draw regardless of batching.
            bg.advance(start)
            u = np.random.Generator(bg).random(4 * n)[::4]
            out.append(np.searchsorted(cdf, u, side="right").astype(np.int64))
        return out[0], out[1], out[2]

    def assign(self, slot: int, h_count: int, a_count: int) -> tuple[BpoId, ...]:
        """Attach winners to node indices; seq orders same-class wins."""
        if h_count == 0 and a_count == 0:
            return ()
        gen = _slot_gen(self.seed, STREAM_ASSIGN, slot)
        bpos = []
        if h_count:
            picks = gen.integers(0, len(self.honest_nodes), size=h_count)
            for seq, p in enumerate(picks):
                bpos.append(BpoId(slot, self.honest_nodes[int(p)], True, seq))
        if a_count:
            n_adv = max(1, len(self.adversary_nodes))
            picks = gen.integers(0, n_adv, size=a_count)
            # adversary seqs continue after honest ones so same-slot chains
            # across classes keep a strict (slot, seq) order
            for k, p in enumerate(picks):
                node = (self.adversary_nodes[int(p)]
                        if self.adversary_nodes else -1)
                bpos.append(BpoId(slot, node, False, h_count + k))
        return tuple(bpos)

    def sample_slot(self, slot: int) -> SlotOutcome:
        h, a, _ = self.counts(slot, slot + 1)
        h_count, a_count = int(h[0]), int(a[0])
        return SlotOutcome(slot, h_count, a_count,
                           self.assign(slot, h_count, a_count))


def sample_slot(sampler: SlotSampler, slot: int) -> SlotOutcome:
    """Module-level convenience wrapper around SlotSampler.sample_slot."""
    return sampler.sample_slot(slot)


class ReusedBpo(Exception):
    """A proof-of-work opportunity was spent on a second header."""


@dataclass(frozen=True)
class EquivocationProof:
    """Two distinct headers minted from the same production opportunity,
    plus the on-chain header they discredit."""

    bpo_key: tuple
    header_a: int
    header_b: int
    target: int


@dataclass(frozen=True)
class BlockHeader:
    id: int
    parent_id: Optional[int]
    bpo: BpoId
    height: int
    commitment: int
    proofs: tuple[EquivocationProof, ...] = ()


@dataclass(frozen=True)
class Content:
    commitment: int
    txs: tuple = ()
    producer: int = -1


GENESIS_ID = 0


class HeaderStore:
    """Global append-only registry of headers and contents.

    The store enforces the lottery discipline: PoW spends each opportunity on
    at most one header, PoS permits equivocation but deduplicates identical
    (bpo, parent, commitment) triples.
    """

    def __init__(self):
        genesis_bpo = BpoId(slot=-1, node=-1, honest=True, seq=0)
        self.genesis = BlockHeader(GENESIS_ID, None, genesis_bpo, 0, 0)
        self.headers: dict[int, BlockHeader] = {GENESIS_ID: self.genesis}
        self.contents: dict[int, Content] = {0: Content(0, (), -1)}
        self.by_bpo: dict[tuple, list[int]] = {}
        self._pos_identity: dict[tuple, int] = {}
        self._next_header = 1
        self._next_commitment = 1

    def get(self, header_id: int) -> BlockHeader:
        return self.headers[header_id]

    def make_content(self, txs: tuple = (), producer: int = -1) -> Content:
        c = Content(self._next_commitment, tuple(txs), producer)
        self._next_commitment += 1
        self.contents[c.commitment] = c
        return c

    def _mint(self, bpo: BpoId, parent_id: int, commitment: int,
              proofs: tuple) -> BlockHeader:
        parent = self.headers[parent_id]
        # same-slot chaining is legal when the later win has a higher seq
        if (bpo.slot, bpo.seq) <= (parent.bpo.slot, parent.bpo.seq):
            raise ValueError("header opportunity must come after its parent's")
        header = BlockHeader(self._next_header, parent_id, bpo,
                             parent.height + 1, commitment, proofs)
        self._next_header += 1
        self.headers[header.id] = header
        self.by_bpo.setdefault(bpo.key(), []).append(header.id)
        return header

    def pow_extend(self, bpo: BpoId, parent_id: int, commitment: int,
                   proofs: tuple = ()) -> BlockHeader:
        if bpo.key() in self.by_bpo:
            raise ReusedBpo(f"bpo {bpo.key()} already spent")
        return self._mint(bpo, parent_id, commitment, proofs)

    def pos_extend(self, bpo: BpoId, parent_id: int, commitment: int,
                   proofs: tuple = ()) -> BlockHeader:
        ident = (bpo.key(), parent_id, commitment)
        existing = self._pos_identity.get(ident)
        if existing is not None:
            return self.headers[existing]
        header = self._mint(bpo, parent_id, commitment, proofs)
        self._pos_identity[ident] = header.id
        return header

    def equivocators(self, bpo: BpoId) -> list[int]:
        return self.by_bpo.get(bpo.key(), [])

    def chain_to(self, header_id: int) -> list[int]:
        """Header ids from the first block after genesis up to header_id."""
        out = []
        h = self.headers[header_id]
        while h.parent_id is not None:
            out.append(h.id)
            h = self.headers[h.parent_id]
        out.reverse()
        return out

    def ancestor_at(self, header_id: int, height: int) -> int:
        h = self.headers[header_id]
        while h.height > height:
            h = self.headers[h.parent_id]
        return h.id

    def is_ancestor(self, anc_id: int, desc_id: int) -> bool:
        anc = self.headers[anc_id]
        return self.ancestor_at(desc_id, anc.height) == anc_id if \
            self.headers[desc_id].height >= anc.height else False

    def common_ancestor(self, a_id: int, b_id: int) -> int:
        a, b = self.headers[a_id], self.headers[b_id]
        while a.height > b.height:
            a = self.headers[a.parent_id]
        while b.height > a.height:
            b = self.headers[b.parent_id]
        while a.id != b.id:
            a = self.headers[a.parent_id]
            b = self.headers[b.parent_id]
        return a.id
