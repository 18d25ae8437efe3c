"""Bit-exact binary wire protocol spoken by simulated devices.

Frame layout, big-endian throughout:

    magic        1 byte   0xA7
    version      1 byte   0x01
    frame_type   1 byte   0x01 telemetry, 0x02 command-ack, 0x03 heartbeat,
                          0x81 command
    device_id    4 bytes  u32
    resource_id  2 bytes  u16
    timestamp    8 bytes  u64 tick
    payload_kind 1 byte   0x01 float64, 0x02 bool (0x00/0x01),
                          0x03 UTF-8 text with u16 length prefix
    payload      per kind
    crc          2 bytes  CRC-16/CCITT-FALSE over all preceding bytes
                          (poly 0x1021, init 0xFFFF, no reflection, xorout 0)

decode(encode(f)) == f for every valid frame; any corrupted byte is rejected
with a structural or CRC error, never silently mis-decoded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

MAGIC = 0xA7
VERSION = 0x01

FT_TELEMETRY = 0x01
FT_COMMAND_ACK = 0x02
FT_HEARTBEAT = 0x03
FT_COMMAND = 0x81

PK_FLOAT = 0x01
PK_BOOL = 0x02
PK_TEXT = 0x03

_HEADER = struct.Struct(">BBBIHQB")  # magic..payload_kind


class FrameError(Exception):
    pass


class BadMagic(FrameError):
    pass


class UnsupportedVersion(FrameError):
    pass


class CrcMismatch(FrameError):
    pass


class Truncated(FrameError):
    """Buffer length does not match the frame's declared structure."""


class UnknownPayloadKind(FrameError):
    pass


class PayloadTooLarge(FrameError):
    pass


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE."""
    crc = 0xFFFF
    for b in data:
        crc ^= b << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


@dataclass(frozen=True)
class DeviceFrame:
    frame_type: int
    device_id: int
    resource_id: int
    timestamp: int
    payload_kind: int
    payload: Union[float, bool, str]


def encode_frame(frame: DeviceFrame) -> bytes:
    head = _HEADER.pack(
        MAGIC,
        VERSION,
        frame.frame_type,
        frame.device_id,
        frame.resource_id,
        frame.timestamp,
        frame.payload_kind,
    )
    if frame.payload_kind == PK_FLOAT:
        body = struct.pack(">d", float(frame.payload))
    elif frame.payload_kind == PK_BOOL:
        body = b"\x01" if frame.payload else b"\x00"
    elif frame.payload_kind == PK_TEXT:
        raw = str(frame.payload).encode("utf-8")
        if len(raw) > 0xFFFF:
            raise PayloadTooLarge(f"text payload {len(raw)} bytes > 65535")
        body = struct.pack(">H", len(raw)) + raw
    else:
        raise UnknownPayloadKind(f"0x{frame.payload_kind:02x}")
    buf = head + body
    return buf + struct.pack(">H", crc16(buf))


def decode_frame(data: bytes) -> DeviceFrame:
    if len(data) < _HEADER.size:
        raise Truncated(f"{len(data)} bytes, header needs {_HEADER.size}")
    magic, version, frame_type, device_id, resource_id, timestamp, payload_kind = (
        _HEADER.unpack_from(data)
    )
    if magic != MAGIC:
        raise BadMagic(f"0x{magic:02x}")
    if version != VERSION:
        raise UnsupportedVersion(f"0x{version:02x}")
    start = _HEADER.size
    if payload_kind == PK_FLOAT:
        end = start + 8
    elif payload_kind == PK_BOOL:
        end = start + 1
    elif payload_kind == PK_TEXT:
        if len(data) < start + 2:
            raise Truncated("text length cut short")
        (length,) = struct.unpack_from(">H", data, start)
        end = start + 2 + length
    else:
        raise UnknownPayloadKind(f"0x{payload_kind:02x}")
    if len(data) != end + 2:
        raise Truncated(f"{len(data)} bytes, structure says {end + 2}")
    (crc,) = struct.unpack_from(">H", data, end)
    actual = crc16(data[:end])
    if crc != actual:
        raise CrcMismatch(f"got 0x{crc:04x}, computed 0x{actual:04x}")
    payload: Union[float, bool, str]
    if payload_kind == PK_FLOAT:
        payload = struct.unpack_from(">d", data, start)[0]
    elif payload_kind == PK_BOOL:
        payload = data[start] != 0
    else:
        try:
            payload = data[start + 2 : end].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FrameError(f"text payload is not valid UTF-8: {exc}") from exc
    return DeviceFrame(frame_type, device_id, resource_id, timestamp, payload_kind, payload)
