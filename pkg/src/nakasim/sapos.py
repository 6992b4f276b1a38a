"""Self-authenticating proof-of-stake additions.

Equivocation handling has two layers: at the scheduler, a node that has
seen two headers for one production opportunity treats the block as empty
and skips its download; at the ledger, a produced block may carry an
equivocation proof that retroactively blanks the offender's content.
Proofs must land within a bounded number of blocks of the offense or the
content stands.  Application payloads face two further restrictions that
keep pretend-empty safe: no transaction may condition on block content
that a producer could grind, and every call carries a gas deposit large
enough to pay for what it could consume.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

from .lottery import BlockHeader, EquivocationProof, HeaderStore

if TYPE_CHECKING:
    from .node import Node


def validate_proof_deadline(store: HeaderStore, carrier: BlockHeader,
                            proof: EquivocationProof, k_epf: int) -> bool:
    """A proof is valid only if its target sits on the carrier's own chain
    with at most k_epf blocks strictly between them, and the two evidence
    headers really are distinct blocks for one production opportunity."""
    a = store.headers.get(proof.header_a)
    b = store.headers.get(proof.header_b)
    if a is None or b is None or a.id == b.id:
        return False
    if a.bpo.key() != b.bpo.key():
        return False
    if proof.target not in (a.id, b.id):
        return False
    target = store.get(proof.target)
    between = carrier.height - target.height - 1
    if between < 0 or between > k_epf:
        return False
    return store.ancestor_at(carrier.parent_id, target.height) == target.id


def attach_proofs(node: "Node", slot: int) -> tuple:
    """Collect proofs a producer can still include: equivocations it has
    seen whose on-chain copy lies within the proof window of the new block
    and is not already proven.  The caller emits the trace record once the
    carrying header exists."""
    chain = node.dchain
    height = len(chain)
    window = chain[max(0, height - node.k_epf - 1):]
    proofs = []
    for hid in window:
        if hid in node.proofed_targets:
            continue
        h = node.store.get(hid)
        seen = node.bpo_seen.get(h.bpo.key(), ())
        if len(seen) >= 2:
            other = next(x for x in seen if x != hid)
            proofs.append(EquivocationProof(
                bpo_key=h.bpo.key(), header_a=hid, header_b=other, target=hid))
    return tuple(proofs)


def equivocated_in_view(node: "Node", header: BlockHeader) -> bool:
    """Scheduler-level blanking predicate: the node has seen two headers
    for this block's production opportunity."""
    return len(node.bpo_seen.get(header.bpo.key(), ())) >= 2


def ledger_with_blanking(chain_entries: Iterable, proofed: set) -> list:
    blanked = []
    for entry in chain_entries:
        if entry.header_id in proofed:
            entry.blanked = True
            entry.txs = ()
        blanked.append(entry)
    return blanked


@dataclass(frozen=True)
class AppTx:
    """Abstract application payload: the state keys it reads or writes, the
    deposit account that pays for it, and its worst-case gas."""

    txid: str
    keys: frozenset = frozenset()
    account: str = ""
    max_gas: float = 0.0


def predictable_tx_filter(pending: Iterable[AppTx],
                          chain_blocks: Sequence[Iterable[AppTx]],
                          k_epf: int) -> tuple:
    """Admit only transactions whose key sets are untouched by the last
    k_epf blocks; their effect is then the same whether or not any of those
    blocks ends up blanked."""
    recent: set = set()
    if k_epf > 0:
        for block_txs in chain_blocks[max(0, len(chain_blocks) - k_epf):]:
            for tx in block_txs:
                recent.update(tx.keys)
    return tuple(tx for tx in pending if recent.isdisjoint(tx.keys))


def gas_deposit_check(tx: AppTx, chain_blocks: Sequence[dict],
                      k_epf: int) -> bool:
    """Fundability under blanking: only deposits at least k_epf blocks old
    count (younger ones could still be blanked away), withdrawals bind
    immediately, and every transaction already included in the last k_epf
    blocks reserves its worst-case gas.  chain_blocks entries are dicts with
    optional keys 'deposits', 'withdrawals' (account -> amount) and 'txs'."""
    n = len(chain_blocks)
    matured = 0.0
    for block in chain_blocks[:max(0, n - k_epf)]:
        matured += block.get("deposits", {}).get(tx.account, 0.0)
    for block in chain_blocks:
        matured -= block.get("withdrawals", {}).get(tx.account, 0.0)
    reserved = 0.0
    for block in chain_blocks[max(0, n - k_epf):]:
        for other in block.get("txs", ()):
            if other.account == tx.account:
                reserved += other.max_gas
    return matured - reserved + 1e-12 >= tx.max_gas
