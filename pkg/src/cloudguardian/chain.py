"""Deterministic in-process chain backend with key-value contract semantics.

The simulated contract is a ``mapping(string => string)``: ``store_data``
overwrites, ``get_data`` reads (absent keys read as the empty string), and
``remove_data`` deletes the key while emitting an event either way. Every
mined transaction occupies its own block, gas is charged per stored byte on
top of a configurable base cost, and a transaction whose gas would exceed
the block gas limit is rejected before touching state.

``ChainBackend`` is the five-operation surface a remote JSON-RPC node
adapter must satisfy; ``SimChain`` is the only in-repo implementation.
"""

from __future__ import annotations

import abc
import json
import os
import random
import tempfile
import threading
import time
from dataclasses import dataclass, field

from .gas import GasModel, gas_cost_for_text

EVENT_DATA_STORED = "dataStored"
EVENT_DATA_REMOVED = "dataRemoved"

MODE_INSTANT = "instant"
MODE_LATENCY = "latency"


class ChainError(Exception):
    """Base class for chain backend failures."""


class UnknownContract(ChainError):
    """No contract is deployed at the given address."""


class GasLimitExceeded(ChainError):
    """Transaction gas would exceed the block gas limit; nothing was mined."""


@dataclass(frozen=True)
class ChainEvent:
    """One log entry, totally ordered by (block, index)."""

    kind: str
    id: str
    value: str
    block: int
    index: int


@dataclass(frozen=True)
class TxReceipt:
    tx_hash: str
    status: str
    block: int
    gas_used: int
    events: tuple[ChainEvent, ...]


@dataclass(frozen=True)
class ChainCounters:
    """Monotonic per-contract usage counters since deployment."""

    tx_count: int = 0
    call_count: int = 0
    bytes_stored: int = 0
    total_gas: int = 0


@dataclass(frozen=True)
class ChainConfig:
    gas_model: GasModel = field(default_factory=lambda: GasModel(price_per_byte=1))
    block_gas_limit: int = 30_000_000
    base_tx_gas: int = 0
    mode: str = MODE_INSTANT
    tx_latency_ms: float = 0.0
    call_latency_ms: float = 0.0
    rng_seed: int | None = None

    def __post_init__(self) -> None:
        if self.block_gas_limit <= 0:
            raise ValueError("block_gas_limit must be positive")
        if self.mode not in (MODE_INSTANT, MODE_LATENCY):
            raise ValueError(f"unknown chain mode {self.mode!r}")


class ChainBackend(abc.ABC):
    """Operations a chain node must expose to the sync engine."""

    @abc.abstractmethod
    def deploy_contract(self) -> str: ...

    @abc.abstractmethod
    def store_data(self, address: str, id: str, payload: str) -> TxReceipt: ...

    @abc.abstractmethod
    def get_data(self, address: str, id: str) -> str: ...

    @abc.abstractmethod
    def remove_data(self, address: str, id: str) -> TxReceipt: ...

    @abc.abstractmethod
    def events(self, address: str, from_block: int = 0) -> list[ChainEvent]: ...

    @abc.abstractmethod
    def counters(self, address: str) -> ChainCounters: ...


class _Contract:
    __slots__ = ("data", "events", "tx_count", "call_count", "bytes_stored", "total_gas")

    def __init__(self) -> None:
        self.data: dict[str, str] = {}
        self.events: list[ChainEvent] = []
        self.tx_count = 0
        self.call_count = 0
        self.bytes_stored = 0
        self.total_gas = 0


class SimChain(ChainBackend):
    """Single-writer chain simulator; state transitions apply in arrival order.

    With ``mode="instant"`` and a fixed operation sequence the receipts,
    events, and counters are bit-identical across runs for the same seed.
    ``mode="latency"`` sleeps ``tx_latency_ms`` per transaction and
    ``call_latency_ms`` per read to emulate mining and confirmation delay;
    the sleeps happen outside the state lock so reads never serialize
    behind a mining delay.
    """

    def __init__(self, config: ChainConfig | None = None, state_path: str | None = None):
        self.config = config or ChainConfig()
        self._rng = random.Random(self.config.rng_seed)
        self._lock = threading.Lock()
        self._contracts: dict[str, _Contract] = {}
        self._height = 0
        self._state_path = state_path
        self.default_contract: str | None = None
        if state_path and os.path.exists(state_path):
            self._load_state(state_path)

    # -- lifecycle -----------------------------------------------------

    def deploy_contract(self) -> str:
        self._simulate_tx_delay()
        with self._lock:
            address = "0x" + self._hex(20)
            while address in self._contracts:
                address = "0x" + self._hex(20)
            self._contracts[address] = _Contract()
            self._height += 1
            self._persist()
        return address

    def ensure_default_contract(self) -> str:
        """Deploy once and remember the address across snapshot reloads."""
        with self._lock:
            if self.default_contract is not None:
                return self.default_contract
        address = self.deploy_contract()
        with self._lock:
            if self.default_contract is None:
                self.default_contract = address
                self._persist()
            return self.default_contract

    # -- transactions ----------------------------------------------------

    def store_data(self, address: str, id: str, payload: str) -> TxReceipt:
        self._simulate_tx_delay()
        with self._lock:
            contract = self._contract(address)
            gas = gas_cost_for_text(payload, self.config.gas_model) + self.config.base_tx_gas
            if gas > self.config.block_gas_limit:
                raise GasLimitExceeded(
                    f"tx needs {gas} gas, block gas limit is {self.config.block_gas_limit}"
                )
            self._height += 1
            event = ChainEvent(
                kind=EVENT_DATA_STORED, id=id, value=payload, block=self._height, index=0
            )
            contract.data[id] = payload
            contract.events.append(event)
            contract.tx_count += 1
            contract.bytes_stored += self.config.gas_model.bytes_per_char * len(payload)
            contract.total_gas += gas
            receipt = TxReceipt(
                tx_hash="0x" + self._hex(32),
                status="mined",
                block=self._height,
                gas_used=gas,
                events=(event,),
            )
            self._persist()
        return receipt

    def remove_data(self, address: str, id: str) -> TxReceipt:
        self._simulate_tx_delay()
        with self._lock:
            contract = self._contract(address)
            self._height += 1
            event = ChainEvent(
                kind=EVENT_DATA_REMOVED, id=id, value="", block=self._height, index=0
            )
            contract.data.pop(id, None)
            contract.events.append(event)
            contract.tx_count += 1
            contract.total_gas += self.config.base_tx_gas
            receipt = TxReceipt(
                tx_hash="0x" + self._hex(32),
                status="mined",
                block=self._height,
                gas_used=self.config.base_tx_gas,
                events=(event,),
            )
            self._persist()
        return receipt

    # -- calls -------------------------------------------------------------

    def get_data(self, address: str, id: str) -> str:
        self._simulate_call_delay()
        with self._lock:
            contract = self._contract(address)
            contract.call_count += 1
            return contract.data.get(id, "")

    def events(self, address: str, from_block: int = 0) -> list[ChainEvent]:
        with self._lock:
            contract = self._contract(address)
            return [e for e in contract.events if e.block >= from_block]

    def counters(self, address: str) -> ChainCounters:
        with self._lock:
            contract = self._contract(address)
            return ChainCounters(
                tx_count=contract.tx_count,
                call_count=contract.call_count,
                bytes_stored=contract.bytes_stored,
                total_gas=contract.total_gas,
            )

    # -- internals -----------------------------------------------------------

    def _contract(self, address: str) -> _Contract:
        try:
            return self._contracts[address]
        except KeyError:
            raise UnknownContract(f"no contract at {address}") from None

    def _hex(self, nbytes: int) -> str:
        return f"{self._rng.getrandbits(nbytes * 8):0{nbytes * 2}x}"

    def _simulate_tx_delay(self) -> None:
        if self.config.mode == MODE_LATENCY and self.config.tx_latency_ms > 0:
            time.sleep(self.config.tx_latency_ms / 1000.0)

    def _simulate_call_delay(self) -> None:
        if self.config.mode == MODE_LATENCY and self.config.call_latency_ms > 0:
            time.sleep(self.config.call_latency_ms / 1000.0)

    # Snapshot persistence lets the CLI reuse one simulated chain across
    # separate process invocations. Called with the lock held.

    def _persist(self) -> None:
        if not self._state_path:
            return
        rng_state = self._rng.getstate()
        state = {
            "height": self._height,
            "default_contract": self.default_contract,
            "rng_state": [rng_state[0], list(rng_state[1]), rng_state[2]],
            "contracts": {
                addr: {
                    "data": c.data,
                    "events": [
                        [e.kind, e.id, e.value, e.block, e.index] for e in c.events
                    ],
                    "tx_count": c.tx_count,
                    "call_count": c.call_count,
                    "bytes_stored": c.bytes_stored,
                    "total_gas": c.total_gas,
                }
                for addr, c in self._contracts.items()
            },
        }
        directory = os.path.dirname(os.path.abspath(self._state_path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".chain-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(state, fh)
            os.replace(tmp, self._state_path)
        except OSError:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _load_state(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            state = json.load(fh)
        self._height = state["height"]
        self.default_contract = state.get("default_contract")
        version, internal, gauss = state["rng_state"]
        self._rng.setstate((version, tuple(internal), gauss))
        for addr, raw in state["contracts"].items():
            contract = _Contract()
            contract.data = dict(raw["data"])
            contract.events = [
                ChainEvent(kind=k, id=i, value=v, block=b, index=x)
                for k, i, v, b, x in raw["events"]
            ]
            contract.tx_count = raw["tx_count"]
            contract.call_count = raw["call_count"]
            contract.bytes_stored = raw["bytes_stored"]
            contract.total_gas = raw["total_gas"]
            self._contracts[addr] = contract
