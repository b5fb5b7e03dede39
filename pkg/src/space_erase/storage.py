"""Weight bundle containers and storage / sparsity accounting.

Two little-endian container formats share one layout::

    magic (4s) | version (u32) | manifest length (u32) | manifest (UTF-8 JSON) | data

``byte_offset`` in the manifest is relative to the start of the data
section.  A DENSE entry is ``rows*cols`` f32 values in row-major order.  A
CSR entry is a 24-byte record header followed by ``row_ptr`` (u32 x rows+1),
``col_idx`` (u32 x nnz) and ``values`` (f32 x nnz).  Files written with only
dense entries use magic ``SPMX``; any file holding a CSR entry uses ``SPCR``.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import zipfile
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import FormatError, InvalidInputError
from .matrix import STORAGE_DTYPE, CsrMatrix, csr_to_dense, dense_to_csr, sparsity_fraction

VERSION = 1
MAGIC_DENSE = b"SPMX"
MAGIC_CSR = b"SPCR"
DEFAULT_BLOCKS = ("down", "mid", "up")
KINDS = ("K", "V")
DENSE, CSR = "DENSE", "CSR"

_PREAMBLE = struct.Struct("<4sII")
_CSR_HEADER = struct.Struct("<IIIBBxxQ")
CSR_HEADER_BYTES = _CSR_HEADER.size
_DTYPE_CODES = {"f32": 0}

assert CSR_HEADER_BYTES == 24


def csr_size_bytes(rows: int, nnz: int) -> int:
    """Serialized size of one CSR record."""
    return CSR_HEADER_BYTES + 4 * (rows + 1) + 8 * nnz


def dense_size_bytes(rows: int, cols: int) -> int:
    return 4 * rows * cols


@dataclass
class LayerTensor:
    """A named projection matrix held either dense (f32 array) or as CSR."""

    name: str
    block: str
    kind: str
    data: Union[np.ndarray, CsrMatrix]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"{self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        if not isinstance(self.data, CsrMatrix):
            self.data = np.asarray(self.data)
            if self.data.ndim != 2:
                raise InvalidInputError(f"{self.name}: weights must be 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.data.shape)

    @property
    def is_csr(self) -> bool:
        return isinstance(self.data, CsrMatrix)

    def dense(self) -> np.ndarray:
        if self.is_csr:
            return csr_to_dense(self.data)
        return np.asarray(self.data, dtype=STORAGE_DTYPE)

    def csr(self) -> CsrMatrix:
        return self.data if self.is_csr else dense_to_csr(self.data)

    def nnz(self) -> int:
        return self.data.nnz if self.is_csr else int(np.count_nonzero(self.dense()))


@dataclass
class ManifestEntry:
    name: str
    block: str
    kind: str
    rows: int
    cols: int
    dtype: str
    format: str
    byte_offset: int
    byte_length: int


@dataclass
class TensorManifest:
    entries: list[ManifestEntry]
    blocks: list[str] = field(default_factory=lambda: list(DEFAULT_BLOCKS))

    def to_json(self) -> bytes:
        doc = {"blocks": list(self.blocks), "entries": [asdict(e) for e in self.entries]}
        return json.dumps(doc, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json(cls, raw: bytes) -> "TensorManifest":
        try:
            doc = json.loads(raw.decode("utf-8"))
            entries = [ManifestEntry(**e) for e in doc["entries"]]
            blocks = [str(b) for b in doc["blocks"]]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc
        return cls(entries, blocks)

    def validate(self, data_length: int) -> None:
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise FormatError("duplicate tensor names in manifest")
        spans = []
        for e in self.entries:
            if e.block not in self.blocks:
                raise FormatError(f"{e.name}: block {e.block!r} not declared")
            if e.kind not in KINDS or e.dtype not in _DTYPE_CODES or e.format not in (DENSE, CSR):
                raise FormatError(f"{e.name}: bad kind/dtype/format")
            if min(e.rows, e.cols, e.byte_offset, e.byte_length) < 0:
                raise FormatError(f"{e.name}: negative size or offset")
            if e.format == DENSE and e.byte_length != dense_size_bytes(e.rows, e.cols):
                raise FormatError(f"{e.name}: dense byte_length inconsistent with shape")
            if e.byte_offset + e.byte_length > data_length:
                raise FormatError(f"{e.name}: entry extends past end of file (truncated?)")
            spans.append((e.byte_offset, e.byte_offset + e.byte_length))
        spans.sort()
        for (_, end), (start, _) in zip(spans, spans[1:]):
            if start < end:
                raise FormatError("manifest entries overlap")


def _check_blocks(tensors: Sequence[LayerTensor], blocks: Sequence[str]) -> None:
    for t in tensors:
        if t.block not in blocks:
            raise InvalidInputError(f"{t.name}: unknown block label {t.block!r} (declared: {list(blocks)})")
    names = [t.name for t in tensors]
    if len(set(names)) != len(names):
        raise InvalidInputError("tensor names must be unique")


def _encode_dense(t: LayerTensor) -> bytes:
    return np.ascontiguousarray(t.dense(), dtype="<f4").tobytes()


def _encode_csr(S: CsrMatrix) -> bytes:
    header = _CSR_HEADER.pack(S.rows, S.cols, S.nnz, _DTYPE_CODES["f32"], 0, 0)
    return b"".join((header, S.row_ptr.tobytes(), S.col_idx.tobytes(), S.values.tobytes()))


def deployment_format(rows: int, cols: int, nnz: int) -> str:
    """DENSE unless the CSR record is strictly smaller."""
    return CSR if csr_size_bytes(rows, nnz) < dense_size_bytes(rows, cols) else DENSE


def write_bundle(tensors: Iterable[LayerTensor], path, fmt: str = "auto",
                 blocks: Sequence[str] = DEFAULT_BLOCKS) -> TensorManifest:
    """Write ``tensors`` in order.  ``fmt`` is ``"dense"``, ``"csr"`` or ``"auto"``.

    ``auto`` picks the smaller encoding per tensor.
    """
    tensors = list(tensors)
    _check_blocks(tensors, blocks)
    if fmt not in ("dense", "csr", "auto"):
        raise InvalidInputError(f"unknown format {fmt!r}")
    entries, chunks, offset = [], [], 0
    for t in tensors:
        rows, cols = t.shape
        if fmt == "dense":
            kind = DENSE
        elif fmt == "csr":
            kind = CSR
        else:
            kind = deployment_format(rows, cols, t.nnz())
        payload = _encode_dense(t) if kind == DENSE else _encode_csr(t.csr())
        entries.append(ManifestEntry(t.name, t.block, t.kind, rows, cols, "f32", kind,
                                     offset, len(payload)))
        chunks.append(payload)
        offset += len(payload)
    manifest = TensorManifest(entries, list(blocks))
    raw = manifest.to_json()
    magic = MAGIC_CSR if any(e.format == CSR for e in entries) else MAGIC_DENSE
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(magic, VERSION, len(raw)))
        fh.write(raw)
        for chunk in chunks:
            fh.write(chunk)
    return manifest


def write_dense(tensors, path, blocks=DEFAULT_BLOCKS) -> TensorManifest:
    return write_bundle(tensors, path, "dense", blocks)


def write_csr(tensors, path, blocks=DEFAULT_BLOCKS) -> TensorManifest:
    return write_bundle(tensors, path, "csr", blocks)


def _read_raw(path) -> tuple[bytes, TensorManifest, memoryview]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _PREAMBLE.size:
        raise FormatError("file too short for container header")
    magic, version, mlen = _PREAMBLE.unpack_from(buf)
    if magic not in (MAGIC_DENSE, MAGIC_CSR):
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    start = _PREAMBLE.size + mlen
    if start > len(buf):
        raise FormatError("manifest truncated")
    manifest = TensorManifest.from_json(buf[_PREAMBLE.size:start])
    data = memoryview(buf)[start:]
    manifest.validate(len(data))
    if magic == MAGIC_DENSE and any(e.format == CSR for e in manifest.entries):
        raise FormatError("SPMX container holds a CSR entry")
    if sum(e.byte_length for e in manifest.entries) != len(data):
        raise FormatError("data section length does not match manifest")
    return magic, manifest, data


def _decode_csr(e: ManifestEntry, chunk: memoryview) -> CsrMatrix:
    if len(chunk) < CSR_HEADER_BYTES:
        raise FormatError(f"{e.name}: CSR record truncated")
    rows, cols, nnz, dtype, flags, _ = _CSR_HEADER.unpack_from(chunk)
    if (rows, cols) != (e.rows, e.cols):
        raise FormatError(f"{e.name}: record header shape disagrees with manifest")
    if dtype != _DTYPE_CODES["f32"] or flags != 0:
        raise FormatError(f"{e.name}: unsupported dtype/flags")
    if e.byte_length != csr_size_bytes(rows, nnz):
        raise FormatError(f"{e.name}: CSR byte_length inconsistent with header")
    pos = CSR_HEADER_BYTES
    row_ptr = np.frombuffer(chunk, "<u4", rows + 1, pos)
    pos += 4 * (rows + 1)
    col_idx = np.frombuffer(chunk, "<u4", nnz, pos)
    pos += 4 * nnz
    values = np.frombuffer(chunk, "<f4", nnz, pos)
    return CsrMatrix(rows, cols, row_ptr.copy(), col_idx.copy(), values.copy())


def read_manifest(path) -> TensorManifest:
    return _read_raw(path)[1]


def read_bundle(path) -> list[LayerTensor]:
    """Read a container; each tensor keeps its stored encoding."""
    _, manifest, data = _read_raw(path)
    out = []
    for e in manifest.entries:
        chunk = data[e.byte_offset:e.byte_offset + e.byte_length]
        if e.format == DENSE:
            arr = np.frombuffer(chunk, "<f4", e.rows * e.cols).reshape(e.rows, e.cols).copy()
            payload = arr.astype(STORAGE_DTYPE, copy=False)
        else:
            payload = _decode_csr(e, chunk)
        out.append(LayerTensor(e.name, e.block, e.kind, payload))
    return out


def read_dense(path) -> list[LayerTensor]:
    return [LayerTensor(t.name, t.block, t.kind, t.dense()) for t in read_bundle(path)]


def read_csr(path) -> list[LayerTensor]:
    return [LayerTensor(t.name, t.block, t.kind, t.csr()) for t in read_bundle(path)]


def zip_bytes_size(data: bytes, arcname: str = "data.bin") -> int:
    """Size of a single-member DEFLATE ZIP archive (default level) holding ``data``."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(arcname, data)
    return buf.getbuffer().nbytes


def zip_compressed_size(path) -> int:
    with open(path, "rb") as fh:
        data = fh.read()
    return zip_bytes_size(data, os.path.basename(os.fspath(path)))


@dataclass
class LayerStorage:
    name: str
    block: str
    kind: str
    rows: int
    cols: int
    nnz: int
    sparsity: float
    dense_bytes: int
    csr_bytes: int
    deployment_bytes: int
    deployment_format: str
    zip_bytes: int
    gain_bytes: int


@dataclass
class StorageReport:
    layers: list[LayerStorage]
    block_sparsity: dict[str, float]
    block_parameters: dict[str, int]
    global_sparsity: float
    dense_bytes: int
    csr_bytes: int
    deployment_bytes: int
    zip_bytes: int
    gain_bytes: int
    file_bytes: int | None = None
    file_zip_bytes: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    CSV_FIELDS = tuple(LayerStorage.__dataclass_fields__)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for layer in self.layers:
            writer.writerow(asdict(layer))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def layer_storage(t: LayerTensor, with_zip: bool = True) -> LayerStorage:
    rows, cols = t.shape
    dense = t.dense()
    nnz = int(np.count_nonzero(dense))
    dense_b = dense_size_bytes(rows, cols)
    csr_b = csr_size_bytes(rows, nnz)
    fmt = deployment_format(rows, cols, nnz)
    deploy = csr_b if fmt == CSR else dense_b
    zipped = 0
    if with_zip:
        payload = _encode_csr(dense_to_csr(dense)) if fmt == CSR else _encode_dense(t)
        zipped = zip_bytes_size(payload, t.name)
    return LayerStorage(t.name, t.block, t.kind, rows, cols, nnz, sparsity_fraction(dense),
                        dense_b, csr_b, deploy, fmt, zipped, dense_b - deploy)


def block_sparsity_report(tensors: Sequence[LayerTensor], blocks: Sequence[str] = DEFAULT_BLOCKS,
                          *, with_zip: bool = True, path=None) -> StorageReport:
    """Per-layer storage numbers plus parameter-weighted sparsity per block.

    ``path`` optionally names the container the tensors came from; its
    on-disk and zipped sizes are then added to the report.
    """
    tensors = list(tensors)
    _check_blocks(tensors, blocks)
    layers = [layer_storage(t, with_zip) for t in tensors]
    zeros: "OrderedDict[str, int]" = OrderedDict()
    params: "OrderedDict[str, int]" = OrderedDict()
    for lay in layers:
        size = lay.rows * lay.cols
        params[lay.block] = params.get(lay.block, 0) + size
        zeros[lay.block] = zeros.get(lay.block, 0) + size - lay.nnz
    block_sparsity = {b: (zeros[b] / params[b] if params[b] else 0.0) for b in params}
    total = sum(params.values())
    report = StorageReport(
        layers=layers,
        block_sparsity=block_sparsity,
        block_parameters=dict(params),
        global_sparsity=(sum(zeros.values()) / total) if total else 0.0,
        dense_bytes=sum(x.dense_bytes for x in layers),
        csr_bytes=sum(x.csr_bytes for x in layers),
        deployment_bytes=sum(x.deployment_bytes for x in layers),
        zip_bytes=sum(x.zip_bytes for x in layers),
        gain_bytes=sum(x.gain_bytes for x in layers),
    )
    if path is not None:
        report.file_bytes = os.path.getsize(path)
        report.file_zip_bytes = zip_compressed_size(path)
    return report
