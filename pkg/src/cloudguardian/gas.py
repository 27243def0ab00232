"""Byte and gas arithmetic for on-chain string storage.

Storage cost scales with the volume of data written: each character is
accounted as 4 bytes, one record unit is 36 characters, so a payload of
``y`` records costs ``144 * y * price_per_byte`` gas. All arithmetic is
exact big-integer math; no count in the theoretical range can overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

BYTES_PER_CHAR = 4
RECORD_CHARS = 36
RECORD_BYTES = RECORD_CHARS * BYTES_PER_CHAR  # 144


class ZeroGasPrice(ValueError):
    """Capacity is unbounded when storage costs nothing per byte."""


@dataclass(frozen=True)
class GasModel:
    """Pricing knobs: gas per stored byte, with the fixed 4-byte character."""

    price_per_byte: int
    bytes_per_char: int = BYTES_PER_CHAR

    def __post_init__(self) -> None:
        if self.price_per_byte < 0:
            raise ValueError("price_per_byte must be non-negative")
        if self.bytes_per_char != BYTES_PER_CHAR:
            raise ValueError(f"bytes_per_char is fixed at {BYTES_PER_CHAR}")


def gas_cost(record_count: int, model: GasModel) -> int:
    """Exact storage gas for ``record_count`` packed records: 144 * y * x."""
    if record_count < 0:
        raise ValueError("record_count must be non-negative")
    return RECORD_CHARS * model.bytes_per_char * record_count * model.price_per_byte


def gas_cost_for_text(text: str, model: GasModel) -> int:
    """Storage gas for an arbitrary string, charged per character."""
    return model.bytes_per_char * len(text) * model.price_per_byte


def theoretical_max_packages() -> int:
    """Upper bound on records per transaction from the 2^256 - 1 string limit."""
    return (2**256 - 1) // RECORD_BYTES


def practical_max_packages(block_gas_limit: int, model: GasModel) -> int:
    """Largest record count whose storage gas fits under the block gas limit."""
    if model.price_per_byte == 0:
        raise ZeroGasPrice("per-byte price of zero puts no bound on packages")
    return block_gas_limit // (RECORD_BYTES * model.price_per_byte)
