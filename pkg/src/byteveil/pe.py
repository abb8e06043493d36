"""Minimal PE structure handling: header validation and overlay appending.

Parses just enough of the on-disk format to certify that a file is a
structurally valid PE and to verify that appending overlay bytes leaves
every declared header field untouched. All multi-byte fields are
little-endian. Optional-header contents beyond the declared size are
never interpreted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

DOS_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"

E_LFANEW_OFFSET = 0x3C
DOS_HEADER_SIZE = 0x40
COFF_HEADER_SIZE = 20
SECTION_ENTRY_SIZE = 40


class PeFormatError(ValueError):
    """Base class for structural PE parsing failures."""


class MalformedDosHeader(PeFormatError):
    """Missing or wrong DOS magic."""


class MalformedPeHeader(PeFormatError):
    """Unreadable e_lfanew, bad PE signature, or truncated COFF header."""


class TruncatedSectionTable(PeFormatError):
    """Section table or declared section data extends past end of file."""


@dataclass(frozen=True)
class RawBinary:
    """An executable's on-disk bytes. `length` is the informative byte count."""

    data: bytes

    @property
    def length(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class SectionEntry:
    name: bytes  # raw 8-byte field, not NUL-stripped
    raw_offset: int
    raw_size: int
    virtual_address: int
    virtual_size: int


@dataclass(frozen=True)
class PeMetadata:
    dos_magic: bytes
    e_lfanew: int
    pe_signature: bytes
    num_sections: int
    optional_header_size: int
    sections: tuple[SectionEntry, ...]


def _u16(data: bytes, off: int) -> int:
    return struct.unpack_from("<H", data, off)[0]


def _u32(data: bytes, off: int) -> int:
    return struct.unpack_from("<I", data, off)[0]


def parse_pe(binary: RawBinary) -> PeMetadata:
    """Parse DOS header, PE signature, COFF header and section table.

    Raises MalformedDosHeader, MalformedPeHeader or TruncatedSectionTable;
    never returns partial metadata.
    """
    data = binary.data
    if len(data) < len(DOS_MAGIC) or data[:2] != DOS_MAGIC:
        raise MalformedDosHeader("missing MZ magic")
    if len(data) < DOS_HEADER_SIZE:
        raise MalformedPeHeader("file ends before the e_lfanew field")
    e_lfanew = _u32(data, E_LFANEW_OFFSET)
    if e_lfanew + len(PE_SIGNATURE) > len(data):
        raise MalformedPeHeader(f"e_lfanew {e_lfanew:#x} points past end of file")
    signature = data[e_lfanew : e_lfanew + 4]
    if signature != PE_SIGNATURE:
        raise MalformedPeHeader("missing PE signature at e_lfanew")

    coff_off = e_lfanew + 4
    if coff_off + COFF_HEADER_SIZE > len(data):
        raise MalformedPeHeader("COFF header truncated")
    num_sections = _u16(data, coff_off + 2)
    optional_header_size = _u16(data, coff_off + 16)

    table_off = coff_off + COFF_HEADER_SIZE + optional_header_size
    table_end = table_off + num_sections * SECTION_ENTRY_SIZE
    if table_end > len(data):
        raise TruncatedSectionTable(
            f"section table needs {table_end} bytes, file has {len(data)}"
        )

    sections = []
    for i in range(num_sections):
        off = table_off + i * SECTION_ENTRY_SIZE
        name = data[off : off + 8]
        virtual_size = _u32(data, off + 8)
        virtual_address = _u32(data, off + 12)
        raw_size = _u32(data, off + 16)
        raw_offset = _u32(data, off + 20)
        if raw_size > 0 and raw_offset + raw_size > len(data):
            raise TruncatedSectionTable(
                f"section {i} declares data [{raw_offset}, {raw_offset + raw_size}) "
                f"past end of file ({len(data)} bytes)"
            )
        sections.append(
            SectionEntry(
                name=name,
                raw_offset=raw_offset,
                raw_size=raw_size,
                virtual_address=virtual_address,
                virtual_size=virtual_size,
            )
        )

    return PeMetadata(
        dos_magic=bytes(data[:2]),
        e_lfanew=e_lfanew,
        pe_signature=bytes(signature),
        num_sections=num_sections,
        optional_header_size=optional_header_size,
        sections=tuple(sections),
    )


def append_overlay(binary: RawBinary, padding: bytes) -> RawBinary:
    """Append bytes verbatim after end of file.

    The input must parse as a PE; headers and section table are left
    untouched, so parse_pe yields identical metadata afterwards.
    """
    parse_pe(binary)
    return RawBinary(binary.data + bytes(padding))


def informative_length(binary: RawBinary) -> int:
    """Number of bytes the file actually contains (0 for an empty file)."""
    return binary.length


def read_binary(path: str | Path) -> RawBinary:
    return RawBinary(Path(path).read_bytes())


def write_binary(path: str | Path, binary: RawBinary) -> None:
    Path(path).write_bytes(binary.data)
