"""The four custody protocols: anchoring records to the chain and back.

Protocol versions:

* ``p1`` ships one transaction per record and reuses the chain key (minus
  its namespace prefix) as the store surrogate. That key reuse is the
  original design's insecurity and is reproduced deliberately so the fix
  is demonstrable.
* ``p2`` ships all current records as a single payload under one fresh
  chain ID, and plants a store surrogate drawn independently of the chain
  ID, so nothing in the store correlates with anything on the chain.
* ``p3`` shares p2's anchoring path; retrieval is a filtered JSON export
  straight from the chain with zero state-mutating transactions and zero
  store writes.
* ``p4`` shares p2's anchoring path; retrieval restores only the filtered
  subset, re-keying each partially drained payload under a fresh chain ID
  so the remainder stays anchored.

Failure ordering: an anchor persists the vault before swapping store rows,
and a recovery restores store rows before persisting the vault and only
then removes chain keys. In both directions the worst crash outcome is a
duplicate-anchor or duplicate-restore candidate, never data loss.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import records as rec
from .chain import ChainBackend, ChainError, GasLimitExceeded
from .filters import RetrievalFilter
from .store import SURROGATE_PREFIX, RecordStore
from .vault import (
    CHAIN_ID_PREFIX,
    AuthFailure as VaultAuthFailure,  # noqa: F401 - engine-level error surface
    IdMapping,
    KdfParams,
    MappingEntry,
    vault_load,
    vault_save,
)

PROTOCOL_P1 = "p1"
PROTOCOL_P2 = "p2"
PROTOCOL_P3 = "p3"
PROTOCOL_P4 = "p4"
PROTOCOLS = (PROTOCOL_P1, PROTOCOL_P2, PROTOCOL_P3, PROTOCOL_P4)

# p2, p3 and p4 share the single-payload anchoring path; their mapping
# entries are indistinguishable.
BATCHED_PROTOCOLS = (PROTOCOL_P2, PROTOCOL_P3, PROTOCOL_P4)


class EngineError(Exception):
    pass


class NothingToAnchor(EngineError):
    """The store holds no real rows."""


class ChainUnavailable(EngineError):
    """The chain backend failed underneath the engine."""


class PayloadMismatch(EngineError):
    """Chain payload does not match the vault's accounting; tampering signal."""


@dataclass(frozen=True)
class AnchorOutcome:
    protocol: str
    tx_count: int
    chain_ids: tuple[str, ...]
    records_anchored: int
    gas_total: int
    elapsed_ms: float


@dataclass(frozen=True)
class RecoveryOutcome:
    protocol: str
    chain_calls: int
    chain_txs: int
    records_restored: int
    records_exported: int
    elapsed_ms: float


@dataclass(frozen=True)
class ExportFile:
    """Filtered JSON export plus the accounting of how it was produced."""

    content: bytes
    document: dict
    outcome: RecoveryOutcome

    def write_to(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.content)


@dataclass
class EngineConfig:
    remove_on_recover: bool = True
    rng_seed: int | None = None
    vault_kdf: KdfParams = field(default_factory=KdfParams)


class SyncEngine:
    """Coordinates store, chain, and vault; one anchor or recovery at a time."""

    def __init__(
        self,
        store: RecordStore,
        chain: ChainBackend,
        contract_address: str,
        vault_path: str,
        passphrase: str,
        config: EngineConfig | None = None,
        now_fn=None,
    ):
        self.store = store
        self.chain = chain
        self.contract_address = contract_address
        self.vault_path = vault_path
        self._passphrase = passphrase
        self.config = config or EngineConfig()
        self._now = now_fn or (lambda: datetime.now(timezone.utc))
        self._rng = random.Random(self.config.rng_seed)
        self._lock = threading.Lock()
        if os.path.exists(vault_path):
            self.mapping = vault_load(vault_path, passphrase)
        else:
            self.mapping = IdMapping()

    # -- anchoring -------------------------------------------------------

    def anchor(self, protocol: str) -> AnchorOutcome:
        if protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {protocol!r}")
        with self._lock:
            started = time.perf_counter()
            rows = self.store.real_rows()
            if not rows:
                raise NothingToAnchor("store has no real rows to anchor")
            now = self._now().replace(microsecond=0)
            if protocol == PROTOCOL_P1:
                outcome = self._anchor_per_record(rows, now, started)
            else:
                outcome = self._anchor_batched(protocol, rows, now, started)
            return outcome

    def _anchor_per_record(self, rows, now, started) -> AnchorOutcome:
        chain_ids = []
        gas_total = 0
        swaps = []
        for row in rows:
            unit = rec.encode_record(row.record())
            chain_id = self._new_chain_id()
            # The original per-record scheme reused one identifier on both
            # sides; the surrogate is the chain id under the store prefix.
            surrogate = SURROGATE_PREFIX + chain_id[len(CHAIN_ID_PREFIX) :]
            receipt = self._chain_store(chain_id, unit)
            gas_total += receipt.gas_used
            self.mapping.put(
                chain_id,
                MappingEntry(
                    record_count=1,
                    anchored_at=now,
                    protocol=PROTOCOL_P1,
                    surrogate_id=surrogate,
                ),
            )
            chain_ids.append(chain_id)
            swaps.append((row.row_id, surrogate))
        self._save_vault()
        for row_id, surrogate in swaps:
            self.store.swap_for_placeholder([row_id], surrogate, now)
        return AnchorOutcome(
            protocol=PROTOCOL_P1,
            tx_count=len(rows),
            chain_ids=tuple(chain_ids),
            records_anchored=len(rows),
            gas_total=gas_total,
            elapsed_ms=(time.perf_counter() - started) * 1000.0,
        )

    def _anchor_batched(self, protocol, rows, now, started) -> AnchorOutcome:
        payload = rec.encode_payload([rec.encode_record(r.record()) for r in rows])
        chain_id = self._new_chain_id()
        surrogate = self._new_surrogate_id()
        receipt = self._chain_store(chain_id, payload.text)
        self.mapping.put(
            chain_id,
            MappingEntry(
                record_count=payload.record_count,
                anchored_at=now,
                protocol=PROTOCOL_P2,
                surrogate_id=surrogate,
            ),
        )
        self._save_vault()
        self.store.swap_for_placeholder([r.row_id for r in rows], surrogate, now)
        return AnchorOutcome(
            protocol=protocol,
            tx_count=1,
            chain_ids=(chain_id,),
            records_anchored=payload.record_count,
            gas_total=receipt.gas_used,
            elapsed_ms=(time.perf_counter() - started) * 1000.0,
        )

    # -- recovery ----------------------------------------------------------

    def recover_all(self, protocol: str = PROTOCOL_P2) -> RecoveryOutcome:
        """Pull every anchored payload back into the store."""
        if protocol not in (PROTOCOL_P1, PROTOCOL_P2):
            raise ValueError("recover_all applies to protocols p1 and p2")
        with self._lock:
            started = time.perf_counter()
            calls = txs = restored = 0
            drained = []
            for chain_id, entry in self.mapping.entries():
                records, n_calls = self._fetch_entry(chain_id, entry)
                calls += n_calls
                self.store.restore_records(entry.surrogate_id, records)
                restored += len(records)
                drained.append(chain_id)
            for chain_id in drained:
                self.mapping.remove(chain_id)
            if drained:
                self._save_vault()
            if self.config.remove_on_recover:
                for chain_id in drained:
                    self._chain_remove(chain_id)
                    txs += 1
            return RecoveryOutcome(
                protocol=protocol,
                chain_calls=calls,
                chain_txs=txs,
                records_restored=restored,
                records_exported=0,
                elapsed_ms=(time.perf_counter() - started) * 1000.0,
            )

    def export_filtered(self, flt: RetrievalFilter | None = None) -> ExportFile:
        """Write the filtered anchored set to a JSON document.

        Reads the chain, touches neither the store nor the mapping, and
        issues no state-mutating transaction.
        """
        flt = flt or RetrievalFilter()
        flt.validate()
        with self._lock:
            started = time.perf_counter()
            calls = 0
            matched: list[rec.VehicleRecord] = []
            for chain_id, entry in self.mapping.entries():
                records, n_calls = self._fetch_entry(chain_id, entry)
                calls += n_calls
                matched.extend(r for r in records if flt.matches(r))
            matched.sort(key=lambda r: (r.captured_at, r.plate))
            document = {
                "generated_at": self._now().replace(microsecond=0).strftime(
                    "%Y-%m-%dT%H:%M:%SZ"
                ),
                "filter": flt.to_dict(),
                "records": [
                    {
                        "plate": r.plate,
                        "device_id": r.device_id,
                        "captured_at": r.captured_at_iso,
                    }
                    for r in matched
                ],
            }
            content = _canonical_json(document)
            outcome = RecoveryOutcome(
                protocol=PROTOCOL_P3,
                chain_calls=calls,
                chain_txs=0,
                records_restored=0,
                records_exported=len(matched),
                elapsed_ms=(time.perf_counter() - started) * 1000.0,
            )
            return ExportFile(content=content, document=document, outcome=outcome)

    def recover_filtered(self, flt: RetrievalFilter | None = None) -> RecoveryOutcome:
        """Restore only the matching records; the rest stays anchored.

        A partially matched payload is re-keyed: its remainder is stored
        under a fresh chain ID and a fresh surrogate, and the old chain key
        is dropped per configuration.
        """
        flt = flt or RetrievalFilter()
        flt.validate()
        with self._lock:
            started = time.perf_counter()
            calls = txs = restored = 0
            removals = []
            mutations = []  # applied to the mapping after the chain+store work
            now = self._now().replace(microsecond=0)
            for chain_id, entry in self.mapping.entries():
                records, n_calls = self._fetch_entry(chain_id, entry)
                calls += n_calls
                matched = [r for r in records if flt.matches(r)]
                if not matched:
                    continue
                if len(matched) == len(records):
                    self.store.restore_records(entry.surrogate_id, matched)
                    mutations.append((chain_id, None, None))
                else:
                    remainder = [r for r in records if not flt.matches(r)]
                    new_chain_id = self._new_chain_id()
                    new_surrogate = self._new_surrogate_id()
                    remainder_payload = rec.encode_payload(
                        [rec.encode_record(r) for r in remainder]
                    )
                    self._chain_store(new_chain_id, remainder_payload.text)
                    txs += 1
                    self.store.restore_records_partial(
                        entry.surrogate_id,
                        matched,
                        new_surrogate,
                        len(remainder),
                        now,
                    )
                    mutations.append(
                        (
                            chain_id,
                            new_chain_id,
                            MappingEntry(
                                record_count=len(remainder),
                                anchored_at=now,
                                protocol=PROTOCOL_P2,
                                surrogate_id=new_surrogate,
                            ),
                        )
                    )
                restored += len(matched)
                removals.append(chain_id)
            for chain_id, new_chain_id, new_entry in mutations:
                self.mapping.remove(chain_id)
                if new_chain_id is not None:
                    self.mapping.put(new_chain_id, new_entry)
            if mutations:
                self._save_vault()
            if self.config.remove_on_recover:
                for chain_id in removals:
                    self._chain_remove(chain_id)
                    txs += 1
            return RecoveryOutcome(
                protocol=PROTOCOL_P4,
                chain_calls=calls,
                chain_txs=txs,
                records_restored=restored,
                records_exported=0,
                elapsed_ms=(time.perf_counter() - started) * 1000.0,
            )

    # -- observability ---------------------------------------------------

    def status(self) -> dict:
        counters = self._chain_counters()
        return {
            "real_rows": self.store.count_real(),
            "placeholders": self.store.count_placeholders(),
            "mapping_entries": len(self.mapping),
            "chain_counters": {
                "tx_count": counters.tx_count,
                "call_count": counters.call_count,
                "bytes_stored": counters.bytes_stored,
                "total_gas": counters.total_gas,
            },
        }

    def anchored_record_count(self) -> int:
        return sum(entry.record_count for _, entry in self.mapping.entries())

    # -- internals -----------------------------------------------------------

    def _fetch_entry(self, chain_id: str, entry: MappingEntry):
        """Read and decode one anchored payload, checking the vault accounting."""
        payload_text = self._chain_get(chain_id)
        try:
            units = rec.decode_payload(payload_text)
        except rec.MalformedPayload as exc:
            raise PayloadMismatch(
                f"chain payload for {chain_id} has invalid length {len(payload_text)}"
            ) from exc
        if len(units) != entry.record_count:
            raise PayloadMismatch(
                f"chain payload for {chain_id} holds {len(units)} records, "
                f"vault says {entry.record_count}"
            )
        try:
            decoded = [rec.decode_record(u) for u in units]
        except rec.MalformedRecord as exc:
            raise PayloadMismatch(f"undecodable record in {chain_id}: {exc}") from exc
        return decoded, 1

    def _chain_store(self, chain_id: str, text: str):
        try:
            return self.chain.store_data(self.contract_address, chain_id, text)
        except GasLimitExceeded:
            raise
        except ChainError as exc:
            raise ChainUnavailable(str(exc)) from exc

    def _chain_get(self, chain_id: str) -> str:
        try:
            return self.chain.get_data(self.contract_address, chain_id)
        except ChainError as exc:
            raise ChainUnavailable(str(exc)) from exc

    def _chain_remove(self, chain_id: str) -> None:
        try:
            self.chain.remove_data(self.contract_address, chain_id)
        except ChainError as exc:
            raise ChainUnavailable(str(exc)) from exc

    def _chain_counters(self):
        try:
            return self.chain.counters(self.contract_address)
        except ChainError as exc:
            raise ChainUnavailable(str(exc)) from exc

    def _save_vault(self) -> None:
        vault_save(
            self.mapping, self.vault_path, self._passphrase, self.config.vault_kdf
        )

    def _new_chain_id(self) -> str:
        while True:
            chain_id = CHAIN_ID_PREFIX + self._new_hex128()
            if chain_id not in self.mapping:
                return chain_id

    def _new_surrogate_id(self) -> str:
        return SURROGATE_PREFIX + self._new_hex128()

    def _new_hex128(self) -> str:
        return f"{self._rng.getrandbits(128):032x}"


def _canonical_json(document: dict) -> bytes:
    return (json.dumps(document, indent=2, ensure_ascii=False) + "\n").encode("utf-8")
