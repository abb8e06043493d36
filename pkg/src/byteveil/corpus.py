"""Synthetic labeled corpus of structurally valid minimal PE files.

Each file carries a real DOS header, PE signature, COFF header, optional
header and a single-section table; everything the parser reads is
consistent with the file's bytes. Malware files additionally contain a
planted byte motif, benign files are guaranteed motif-free, so the corpus
is perfectly separable by construction. Per-file RNG streams are derived
from (seed, label, index), making generation deterministic and
order-independent.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pe import DOS_MAGIC, PE_SIGNATURE, RawBinary

log = logging.getLogger(__name__)

MIN_FILE_LEN = 512
HEADER_SIZE = 512          # fixed skeleton size; section data starts here
_E_LFANEW = 0x80
_OPT_HEADER_SIZE = 224     # PE32 optional header
_SECTION_TABLE_OFF = _E_LFANEW + 4 + 20 + _OPT_HEADER_SIZE  # 0x178
_STUB_REGION = (0x40, 0x80)          # DOS stub: filler
_DOS_SLACK = (0x02, 0x3C)            # unused DOS header fields: early motif slot
_PAD_REGION = (_SECTION_TABLE_OFF + 40, HEADER_SIZE)

EARLY, UNIFORM = "early", "uniform"
MALWARE_LABEL, BENIGN_LABEL = "malware", "benign"

DEFAULT_MOTIF = bytes(range(0xD0, 0xF0))  # 32 distinct byte values


@dataclass(frozen=True)
class CorpusSpec:
    n_malware: int
    n_benign: int
    min_len: int = 1024
    max_len: int = 4096
    motif: bytes = DEFAULT_MOTIF
    motif_region: str = EARLY
    seed: int = 0

    def __post_init__(self):
        if self.n_malware < 0 or self.n_benign < 0:
            raise ValueError("file counts must be non-negative")
        if self.min_len < MIN_FILE_LEN:
            raise ValueError(f"min_len must be at least {MIN_FILE_LEN}")
        if self.max_len < self.min_len:
            raise ValueError("max_len must be >= min_len")
        if not self.motif:
            raise ValueError("motif must be non-empty")
        if len(self.motif) >= self.min_len:
            raise ValueError("motif must be shorter than min_len")
        if self.motif_region not in (EARLY, UNIFORM):
            raise ValueError(f"unknown motif_region {self.motif_region!r}")
        if self.motif_region == EARLY:
            lo, hi = _DOS_SLACK
            if len(self.motif) > hi - lo:
                raise ValueError(
                    f"early motif must fit the {hi - lo}-byte DOS slack region"
                )
        else:
            if self.min_len < HEADER_SIZE + len(self.motif):
                raise ValueError(
                    "uniform motif placement needs min_len >= "
                    f"{HEADER_SIZE + len(self.motif)}"
                )


def _skeleton(length: int) -> bytearray:
    """Header skeleton for a single-section file of the given total length."""
    data = bytearray(length)
    data[0:2] = DOS_MAGIC
    struct.pack_into("<I", data, 0x3C, _E_LFANEW)
    data[_E_LFANEW : _E_LFANEW + 4] = PE_SIGNATURE
    coff = _E_LFANEW + 4
    struct.pack_into("<H", data, coff, 0x014C)       # machine: i386
    struct.pack_into("<H", data, coff + 2, 1)        # one section
    struct.pack_into("<H", data, coff + 16, _OPT_HEADER_SIZE)
    struct.pack_into("<H", data, coff + 18, 0x0102)  # executable, 32-bit
    struct.pack_into("<H", data, coff + 20, 0x10B)   # optional header magic
    sec = _SECTION_TABLE_OFF
    raw_size = length - HEADER_SIZE
    data[sec : sec + 8] = b".data\x00\x00\x00"
    struct.pack_into("<I", data, sec + 8, raw_size)   # virtual_size
    struct.pack_into("<I", data, sec + 12, 0x1000)    # virtual_address
    struct.pack_into("<I", data, sec + 16, raw_size)
    struct.pack_into("<I", data, sec + 20, HEADER_SIZE if raw_size > 0 else 0)
    return data


def build_pe_bytes(
    length: int,
    rng: np.random.Generator,
    motif: bytes | None = None,
    motif_region: str = EARLY,
) -> bytes:
    """One synthetic PE of exactly `length` bytes; plants `motif` if given."""
    if length < MIN_FILE_LEN:
        raise ValueError(f"length must be at least {MIN_FILE_LEN}")
    data = _skeleton(length)
    for lo, hi in (_STUB_REGION, _PAD_REGION, (HEADER_SIZE, length)):
        if hi > lo:
            data[lo:hi] = rng.integers(0, 256, size=hi - lo, dtype=np.uint8).tobytes()
    if motif:
        if motif_region == EARLY:
            # Fixed slot: convolution windows see the motif at one phase, so a
            # single filter can key on it.  A jittered offset would smear the
            # signal across phases and the detector would have to memorise
            # per-file noise instead.
            off = _DOS_SLACK[0]
        else:
            off = int(rng.integers(HEADER_SIZE, length - len(motif) + 1))
        data[off : off + len(motif)] = motif
    return bytes(data)


def _draw_length(spec: CorpusSpec, rng: np.random.Generator) -> int:
    # Log-uniform over [min_len, max_len].
    u = rng.uniform(math.log(spec.min_len), math.log(spec.max_len))
    return int(min(spec.max_len, max(spec.min_len, round(math.exp(u)))))


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> list[dict]:
    """Write corpus files and manifest.json; return the manifest entries.

    Entries are dicts {"file", "label", "length"} with malware first.
    Benign files are redrawn until motif-free (vanishingly rare for the
    default 32-byte motif, but guaranteed either way).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    jobs = [(MALWARE_LABEL, 0, i, f"malware_{i:04d}.bin") for i in range(spec.n_malware)]
    jobs += [(BENIGN_LABEL, 1, i, f"benign_{i:04d}.bin") for i in range(spec.n_benign)]
    for label, label_code, idx, name in jobs:
        rng = np.random.default_rng([spec.seed, label_code, idx])
        length = _draw_length(spec, rng)
        if label == MALWARE_LABEL:
            data = build_pe_bytes(length, rng, spec.motif, spec.motif_region)
        else:
            data = build_pe_bytes(length, rng)
            while spec.motif in data:
                log.info("redrawing benign file %s: filler contained the motif", name)
                data = build_pe_bytes(length, rng)
        (out / name).write_bytes(data)
        entries.append({"file": name, "label": label, "length": length})
    manifest = {"seed": spec.seed, "files": entries}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return entries


def load_manifest(corpus_dir: str | Path) -> list[dict]:
    """Read manifest.json entries for a generated corpus directory."""
    path = Path(corpus_dir) / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8"))
    return manifest["files"]


def load_labeled(corpus_dir: str | Path, entries: list[dict]) -> list[tuple[RawBinary, int]]:
    """Materialize (RawBinary, label int) pairs for manifest entries."""
    out_dir = Path(corpus_dir)
    labeled = []
    for entry in entries:
        data = (out_dir / entry["file"]).read_bytes()
        labeled.append((RawBinary(data), 1 if entry["label"] == MALWARE_LABEL else 0))
    return labeled
