# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""BLE LE 1M uncoded-PHY frames carrying a tag's PN code.

On air: preamble (8) | access address (32) | PDU (27 bytes) | CRC (24). Bytes go out
LSB first, the CRC goes out MSB first. Whitening is never applied.
"""

import json
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .common import (
    ACCESS_ADDRESS_BITS,
    CODE_BITS,
    CRC_BITS,
    PDU_BYTES,
    PREAMBLE_BITS,
    BitSequence,
    InvalidArgumentError,
)

CRC_POLY = 0x00065B
CRC_INIT = 0x555555
CRC_MASK = 0xFFFFFF


def preamble_for(first_aa_bit: int) -> BitSequence:
    """Alternating preamble whose last bit differs from the first access-address bit."""
    first = first_aa_bit & 1
    return BitSequence([(first + i) & 1 for i in range(PREAMBLE_BITS)])


def bytes_to_bits(data: bytes) -> BitSequence:
    return BitSequence(np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8), bitorder="little"))


def bits_to_bytes(bits: BitSequence) -> bytes:
    if bits.length % 8:
        raise InvalidArgumentError(f"bit count {bits.length} is not a whole number of bytes")
    return np.packbits(bits.bits, bitorder="little").tobytes()


def crc24(pdu: bytes, init: int = CRC_INIT) -> int:
    """BLE CRC-24 over the PDU, bits fed LSB first per byte."""
    crc = init & CRC_MASK
    for bit in bytes_to_bits(pdu):
        fb = ((crc >> 23) & 1) ^ bit
        crc = (crc << 1) & CRC_MASK
        if fb:
            crc ^= CRC_POLY
    return crc


def crc_bits(crc: int) -> BitSequence:
    """CRC register in transmission order (bit 23 first)."""
    return BitSequence([(crc >> (CRC_BITS - 1 - i)) & 1 for i in range(CRC_BITS)])


def _check_code(code248: BitSequence) -> None:
    if code248.length != CODE_BITS:
        raise InvalidArgumentError(f"code must be {CODE_BITS} bits, got {code248.length}")


def build_detect_sequence(code248: BitSequence) -> BitSequence:
    """Preamble followed by the 248 code bits: the 256-bit sequence the correlator looks for."""
    _check_code(code248)
    return BitSequence.concat(preamble_for(code248[0]), code248)


class TagFrame(BaseModel):
    """Structured uncoded-PHY frame."""

    model_config = ConfigDict(frozen=True)

    preamble: str = Field(min_length=PREAMBLE_BITS, max_length=PREAMBLE_BITS)
    access_address: int = Field(ge=0, le=0xFFFFFFFF)
    pdu: bytes = Field(min_length=PDU_BYTES, max_length=PDU_BYTES)
    crc: int = Field(ge=0, le=CRC_MASK)

    @property
    def code(self) -> BitSequence:
        return BitSequence.concat(
            BitSequence.from_int_lsb_first(self.access_address, ACCESS_ADDRESS_BITS),
            bytes_to_bits(self.pdu),
        )

    @property
    def detect_sequence(self) -> BitSequence:
        return BitSequence.concat(BitSequence.from_string(self.preamble), self.code)


def assemble_frame(code248: BitSequence) -> TagFrame:
    _check_code(code248)
    detect = build_detect_sequence(code248)
    aa_bits = code248[:ACCESS_ADDRESS_BITS]
    pdu = bits_to_bytes(code248[ACCESS_ADDRESS_BITS:])
    return TagFrame(
        preamble=detect.prefix(PREAMBLE_BITS).to_string(),
        access_address=aa_bits.to_int_lsb_first(),
        pdu=pdu,
        crc=crc24(pdu),
    )


def flatten_to_bits(frame: TagFrame) -> BitSequence:
    """Full transmission-order bit stream (280 bits)."""
    return BitSequence.concat(frame.detect_sequence, crc_bits(frame.crc))


class FirmwareExport(BaseModel):
    """Register values for a radio peripheral sending the frame with whitening off."""

    model_config = ConfigDict(frozen=True)

    access_address_word: int = Field(ge=0, le=0xFFFFFFFF)
    pdu_bytes: bytes = Field(min_length=PDU_BYTES, max_length=PDU_BYTES)
    crc_init: int = CRC_INIT
    whitening_enabled: bool = False

    @field_validator("whitening_enabled")
    @classmethod
    def _never_whitened(cls, value: bool) -> bool:
        if value:
            raise ValueError("whitening would destroy the PN structure and is not supported")
        return value

    def to_json(self) -> str:
        doc = {
            "access_address": f"0x{self.access_address_word:08X}",
            "pdu_hex": self.pdu_bytes.hex().upper(),
            "crc_init": f"0x{self.crc_init:06X}",
            "whitening": self.whitening_enabled,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FirmwareExport":
        try:
            doc = json.loads(text)
            return cls(
                access_address_word=int(doc["access_address"], 16),
                pdu_bytes=bytes.fromhex(doc["pdu_hex"]),
                crc_init=int(doc["crc_init"], 16),
                whitening_enabled=bool(doc["whitening"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidArgumentError(f"malformed firmware export: {e}") from e


def export_firmware(frame: TagFrame) -> FirmwareExport:
    return FirmwareExport(access_address_word=frame.access_address, pdu_bytes=frame.pdu)


def frame_from_firmware(export: FirmwareExport) -> TagFrame:
    if export.crc_init != CRC_INIT:
        raise InvalidArgumentError(f"unsupported CRC init 0x{export.crc_init:06X}")
    code = BitSequence.concat(
        BitSequence.from_int_lsb_first(export.access_address_word, ACCESS_ADDRESS_BITS),
        bytes_to_bits(export.pdu_bytes),
    )
    return assemble_frame(code)


def render_c_header(export: FirmwareExport, tag_id: str) -> str:
    """C header with the access address constant and the PDU byte array."""
    guard = "TAG_" + "".join(ch if ch.isalnum() else "_" for ch in tag_id.upper()) + "_H"
    rows: List[str] = []
    data = export.pdu_bytes
    for start in range(0, len(data), 9):
        rows.append("    " + ", ".join(f"0x{b:02X}" for b in data[start : start + 9]))
    body = ",\n".join(rows)
    return (
        f"/* Tag {tag_id}: BLE 1M uncoded frame, whitening disabled. */\n"
        f"#ifndef {guard}\n#define {guard}\n\n#include <stdint.h>\n\n"
        f"static const uint32_t tag_aa = 0x{export.access_address_word:08X}UL;\n"
        f"static const uint32_t tag_crc_init = 0x{export.crc_init:06X}UL;\n"
        f"static const uint8_t tag_pdu[{len(data)}] = {{\n{body}\n}};\n\n"
        f"#endif /* {guard} */\n"
    )
