"""
Binary artifact formats and run-directory helpers.

Both formats share one envelope: a 4-byte magic, a little-endian ``uint16``
format version, a ``uint32`` header length, a UTF-8 JSON header (sorted keys,
compact separators) and a raw little-endian payload described by the header.

- ``HPCK`` checkpoints carry named parameter tensors (``<f4``), optional
  optimizer moments (``<f8``), the config digest and resume metadata.
- ``HPTK`` token files carry one or two branches of ``uint16`` code streams,
  stream-major ([branch][section][codebook][frame]).

Files are written to a temporary sibling and renamed into place, so an
interrupted run never leaves a half-written ``latest.hpck`` behind.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.models.base import CorruptFileError, DigestMismatchError, ValidationError
from src.models.tokens import Section, TokenSequence
from src.utils.logging import get_logger, log_artifact

logger = get_logger(__name__)

CHECKPOINT_MAGIC = b'HPCK'
TOKEN_MAGIC = b'HPTK'
FORMAT_VERSION = 1
_PREFIX = struct.Struct('<4sHI')


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(',', ':')).encode('utf-8')


def _atomic_write(path: Path, blob: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    tmp.write_bytes(blob)
    tmp.replace(path)
    return path


def _pack(magic: bytes, header: Dict[str, Any], payload: bytes) -> bytes:
    header = dict(header, payload_sha256=hashlib.sha256(payload).hexdigest(), payload_bytes=len(payload))
    head = _canonical_json(header)
    return _PREFIX.pack(magic, FORMAT_VERSION, len(head)) + head + payload


def _unpack(path: Path, magic: bytes) -> Tuple[Dict[str, Any], bytes]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise CorruptFileError(f"{path}: truncated before the header")
    found, version, head_len = _PREFIX.unpack_from(blob)
    if found != magic:
        raise CorruptFileError(f"{path}: bad magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size + head_len
    if len(blob) < start:
        raise CorruptFileError(f"{path}: truncated inside the header")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError(f"{path}: unreadable header ({e})") from None
    payload = blob[start:]
    if len(payload) != header.get('payload_bytes'):
        raise CorruptFileError(f"{path}: payload is {len(payload)} bytes, header says {header.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != header.get('payload_sha256'):
        raise CorruptFileError(f"{path}: payload checksum mismatch")
    return header, payload


# ---------------------------------------------------------------------- checkpoints
@dataclass
class Checkpoint:
    """In-memory checkpoint: parameters, optional optimizer state and metadata."""
    digest: str
    tensors: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    table, chunks, offset = [], [], 0
    for group, dtype, tensors in (('param', '<f4', ckpt.tensors), ('optim', '<f8', ckpt.optimizer)):
        for name, value in tensors.items():
            data = np.ascontiguousarray(np.asarray(value), dtype=dtype).tobytes()
            table.append({'name': name, 'group': group, 'dtype': dtype,
                          'shape': list(np.shape(value)), 'offset': offset, 'nbytes': len(data)})
            chunks.append(data)
            offset += len(data)
    header = {'digest': ckpt.digest, 'meta': ckpt.meta, 'tensors': table}
    path = _atomic_write(path, _pack(CHECKPOINT_MAGIC, header, b''.join(chunks)))
    log_artifact('checkpoint', path)
    return path


def load_checkpoint(path: Path, expected_digest: Optional[str] = None,
                    allow_mismatch: bool = False) -> Checkpoint:
    """
    Read an HPCK file.

    Raises:
        CorruptFileError: truncation, bad magic/version or checksum mismatch
        DigestMismatchError: config digest differs and ``allow_mismatch`` is off
    """
    header, payload = _unpack(path, CHECKPOINT_MAGIC)
    ckpt = Checkpoint(header['digest'], {}, {}, header.get('meta', {}))
    for entry in header['tensors']:
        raw = payload[entry['offset']:entry['offset'] + entry['nbytes']]
        if len(raw) != entry['nbytes']:
            raise CorruptFileError(f"{path}: tensor {entry['name']} is truncated")
        value = np.frombuffer(raw, dtype=entry['dtype']).reshape(entry['shape'])
        target = ckpt.tensors if entry['group'] == 'param' else ckpt.optimizer
        target[entry['name']] = value.astype(value.dtype.newbyteorder('='))
    if expected_digest is not None and ckpt.digest != expected_digest:
        message = f"{path}: config digest {ckpt.digest[:12]} does not match this run ({expected_digest[:12]})"
        if not allow_mismatch:
            raise DigestMismatchError(message)
        logger.warning(message + " (loading anyway)")
    return ckpt


# ---------------------------------------------------------------------- token files
def save_tokens(path: Path, sequences: Sequence[TokenSequence], extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write one (LF) or two (LF, HF) aligned token sequences."""
    if not sequences:
        raise ValidationError("nothing to write", "sequences")
    for seq in sequences:
        if seq.codebook_size > 65536:
            raise ValidationError("codebook_size exceeds uint16 storage", "codebook_size")
    header = {'branches': [seq.to_dict() for seq in sequences], 'extra': extra or {}}
    payload = b''.join(np.ascontiguousarray(seq.codes, dtype='<u2').tobytes() for seq in sequences)
    path = _atomic_write(path, _pack(TOKEN_MAGIC, header, payload))
    log_artifact('tokens', path)
    return path


def load_tokens(path: Path) -> List[TokenSequence]:
    header, payload = _unpack(path, TOKEN_MAGIC)
    out, offset = [], 0
    for b in header['branches']:
        count = len(b['sections']) * b['n_codebooks'] * b['n_frames']
        raw = payload[offset:offset + 2 * count]
        if len(raw) != 2 * count:
            raise CorruptFileError(f"{path}: stream block of branch {b['branch']} is truncated")
        codes = np.frombuffer(raw, dtype='<u2').reshape(len(b['sections']), b['n_codebooks'], b['n_frames'])
        out.append(TokenSequence(b['branch'], tuple(Section(s) for s in b['sections']), codes.astype(np.int64),
                                 tuple(b['active']), b['frame_rate'], b['sample_rate'], b['length'],
                                 b['codebook_size']))
        offset += 2 * count
    return out


# ---------------------------------------------------------------------- run directories
def run_directory(config: Dict[str, Any], command: str, explicit: Optional[str] = None) -> Path:
    """``--run-dir`` when given, otherwise ``<run_root>/<command>``."""
    path = Path(explicit) if explicit else Path(config['run_root']) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_frame(path: Path, frame: pd.DataFrame) -> Path:
    """CSV with UTF-8, LF line endings and full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator='\n', float_format='%.10g')
    log_artifact('csv', path)
    return path


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as fh:
        for block in iter(lambda: fh.read(1 << 20), b''):
            h.update(block)
    return h.hexdigest()
