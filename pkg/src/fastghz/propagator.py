"""Exact time evolution on a Dicke space from cached Hermitian factorizations.

A :class:`SpectralCache` stores ``H = U diag(lam) U^H`` with ``U = F V P``:
``F`` is an optional unit-modulus diagonal "frame" (used to make a complex
generator real), ``V`` is unitary (real whenever possible) and ``P`` is a
diagonal of column phases that puts the largest entry of every column of
``U`` on the positive real axis.  ``evolve`` applies ``exp(-i H t)`` with two
matrix-vector products, so every evolution time reuses one factorization.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .dicke import DickeSpace, DickeVector, build_collective_ops
from .errors import NumericError

CACHE_MAGIC = b"SPCH"
CACHE_FORMAT_VERSION = 2


@dataclass(frozen=True, eq=False)
class SpectralCache:
    """Eigendecomposition of one Hermitian generator.

    Diagonal generators keep ``diagonal`` and leave ``eigenvectors`` as None;
    evolution under them is a pointwise phase.  ``phase`` cancels in any
    evolution and only affects eigenbasis coefficients and ``unitary()``.
    """

    label: str
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    frame: np.ndarray | None = None
    diagonal: np.ndarray | None = None
    phase: np.ndarray | None = None

    def __post_init__(self):
        for name in ("eigenvalues", "eigenvectors", "frame", "diagonal", "phase"):
            arr = getattr(self, name)
            if arr is not None:
                arr.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.diagonal is not None

    def unitary(self) -> np.ndarray:
        """Eigenvector matrix ``U`` with ``H = U diag(eigenvalues) U^H``."""
        if self.is_diagonal:
            order = np.argsort(self.diagonal, kind="stable")
            u = np.zeros((self.dim, self.dim))
            u[order, np.arange(self.dim)] = 1.0
            return u
        u = self.eigenvectors
        if self.frame is not None:
            u = self.frame[:, None] * u
        if self.phase is not None:
            u = u * self.phase[None, :]
        return u

    def row(self, k: int) -> np.ndarray:
        """``<D_k|u_m>`` for all eigenvectors m (row k of ``unitary()``)."""
        r = self.eigenvectors[k]
        if self.frame is not None:
            r = self.frame[k] * r
        if self.phase is not None:
            r = r * self.phase
        return r

    def reconstruct(self) -> np.ndarray:
        u = self.unitary()
        return (u * self.eigenvalues) @ u.conj().T

    def reconstruction_error(self, h) -> float:
        h = h.toarray() if sp.issparse(h) else np.asarray(h)
        # relative for ordinary generators, absolute for (near-)zero ones such
        # as X^2 - Z^2 at N = 1
        err = np.linalg.norm(self.reconstruct() - h)
        return float(err / max(np.linalg.norm(h), 1.0))

    def unitarity_error(self) -> float:
        u = self.unitary()
        return float(np.linalg.norm(u.conj().T @ u - np.eye(self.dim)))


def _real_matmul(m: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``m @ w`` for real ``m`` and complex ``w`` without upcasting ``m``."""
    return m @ w.real + 1j * (m @ w.imag)


def to_eigenbasis(cache: SpectralCache, psi: np.ndarray) -> np.ndarray:
    """Coefficients of ``psi`` (vector or column batch) in the cache's eigenbasis."""
    if cache.is_diagonal:
        raise ValueError("diagonal generators have no stored eigenbasis")
    w = psi
    if cache.frame is not None:
        f = cache.frame.conj()
        w = f[:, None] * w if w.ndim == 2 else f * w
    v = cache.eigenvectors
    c = _real_matmul(v.T, w) if np.isrealobj(v) else v.conj().T @ w
    if cache.phase is not None:
        p = cache.phase.conj()
        c = p[:, None] * c if c.ndim == 2 else p * c
    return c


def from_eigenbasis(cache: SpectralCache, coeffs: np.ndarray) -> np.ndarray:
    if cache.phase is not None:
        p = cache.phase
        coeffs = p[:, None] * coeffs if coeffs.ndim == 2 else p * coeffs
    v = cache.eigenvectors
    out = _real_matmul(v, coeffs) if np.isrealobj(v) else v @ coeffs
    if cache.frame is not None:
        f = cache.frame
        out = f[:, None] * out if out.ndim == 2 else f * out
    return out


def _phases(values: np.ndarray, t: float, batch: bool) -> np.ndarray:
    ph = np.exp(-1j * t * values)
    return ph[:, None] if batch else ph


def evolve(cache: SpectralCache, t: float, state):
    """Apply ``exp(-i H t)``.

    ``state`` may be a :class:`DickeVector`, a 1-D amplitude array, or a 2-D
    array whose columns are independent states; the return type matches.
    ``t == 0`` returns the input object unchanged.
    """
    if isinstance(state, DickeVector):
        if state.space.dim != cache.dim:
            raise ValueError(f"state dimension {state.space.dim} != generator dimension {cache.dim}")
        if t == 0:
            return state
        return DickeVector(state.space, evolve(cache, t, state.amplitudes))
    psi = np.asarray(state)
    if psi.shape[0] != cache.dim:
        raise ValueError(f"state dimension {psi.shape[0]} != generator dimension {cache.dim}")
    if t == 0:
        return state
    batch = psi.ndim == 2
    if cache.is_diagonal:
        return _phases(cache.diagonal, t, batch) * psi
    c = to_eigenbasis(cache, psi.astype(complex, copy=False))
    return from_eigenbasis(cache, _phases(cache.eigenvalues, t, batch) * c)


def _fix_phases(v: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column real and positive."""
    idx = np.argmax(np.abs(v), axis=0)
    pivot = v[idx, np.arange(v.shape[1])]
    return v * (np.abs(pivot) / pivot)[None, :]


def _check_hermitian(h: np.ndarray, tol: float = 1e-12) -> float:
    scale = float(np.max(np.abs(h))) if h.size else 0.0
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"generator must be square, got shape {h.shape}")
    if np.max(np.abs(h - h.conj().T), initial=0.0) > tol * max(scale, 1.0):
        raise ValueError("generator is not Hermitian")
    return scale


def _diagonal_cache(label: str, diag: np.ndarray) -> SpectralCache:
    diag = np.asarray(diag, dtype=float).copy()
    return SpectralCache(label, np.sort(diag, kind="stable"), diagonal=diag)


def diagonalize(h, label: str = "custom", frame: np.ndarray | None = None) -> SpectralCache:
    """Factorize a dense (or sparse) Hermitian generator.

    Eigenvalues come back ascending.  When ``frame`` is given, the factorization
    is of ``F^H H F``; if that matrix is real the cheaper real solver is used.
    """
    h = h.toarray() if sp.issparse(h) else np.array(h)
    scale = _check_hermitian(h)
    offdiag = h - np.diag(np.diag(h))
    if not np.any(offdiag):
        return _diagonal_cache(label, np.diag(h).real)
    if frame is not None:
        frame = np.asarray(frame, dtype=complex)
        h = frame.conj()[:, None] * h * frame[None, :]
    if np.max(np.abs(h.imag)) <= 1e-14 * scale:
        h = h.real
    h = 0.5 * (h + h.conj().T)
    try:
        lam, v = la.eigh(h)
    except la.LinAlgError as exc:
        raise NumericError(f"eigensolver failed for generator {label!r} (dim {h.shape[0]}): {exc}") from exc
    return _make_cache(label, lam, v, frame)


def _make_cache(label: str, lam: np.ndarray, v: np.ndarray, frame) -> SpectralCache:
    """Cache with the largest entry of every column of ``F V P`` real-positive."""
    v = _fix_phases(v)
    phase = None
    if frame is not None:
        lead = np.argmax(np.abs(v), axis=0)
        phase = frame[lead].conj()
    return SpectralCache(label, lam, v, frame=frame, phase=phase)


def _tridiagonal_eig(d: np.ndarray, e: np.ndarray, label: str):
    if d.size == 1:
        return d.copy(), np.ones((1, 1))
    try:
        return la.eigh_tridiagonal(d, e)
    except la.LinAlgError as exc:
        raise NumericError(f"tridiagonal eigensolver failed for {label!r}: {exc}") from exc


def factorize_parity_banded(diag: np.ndarray, off2: np.ndarray, label: str,
                            frame: np.ndarray | None = None) -> SpectralCache:
    """Factorize a real symmetric matrix with nonzeros only at offsets 0 and +-2.

    Such a matrix decouples into even-k and odd-k blocks, each tridiagonal,
    so the eigenproblem costs two tridiagonal solves.
    """
    dim = diag.size
    lam_parts, cols = [], []
    v = np.zeros((dim, dim))
    for parity in (0, 1):
        idx = np.arange(parity, dim, 2)
        if idx.size == 0:
            continue
        lam, w = _tridiagonal_eig(diag[idx], off2[idx[:-1]], label)
        lam_parts.append(lam)
        cols.append((idx, w))
    lam_all = np.concatenate(lam_parts)
    order = np.argsort(lam_all, kind="stable")
    offset = 0
    pos = np.empty_like(order)
    pos[order] = np.arange(dim)
    for idx, w in cols:
        n_block = w.shape[1]
        v[np.ix_(idx, pos[offset:offset + n_block])] = w
        offset += n_block
    return _make_cache(label, lam_all[order], v, frame)


def save_cache(cache: SpectralCache, path) -> None:
    """Write a cache to ``path`` (magic, N, label, arrays, SHA-256 checksum)."""
    label = cache.label.encode()
    complex_vectors = cache.eigenvectors is not None and np.iscomplexobj(cache.eigenvectors)
    flags = ((cache.frame is not None) | (cache.is_diagonal << 1) | (cache.phase is not None) << 2
             | complex_vectors << 3)
    parts = [CACHE_MAGIC, struct.pack("<IIIH", CACHE_FORMAT_VERSION, cache.dim - 1, flags, len(label)), label,
             np.ascontiguousarray(cache.eigenvalues, "<f8").tobytes()]
    if cache.is_diagonal:
        parts.append(np.ascontiguousarray(cache.diagonal, "<f8").tobytes())
    else:
        parts.append(np.ascontiguousarray(cache.eigenvectors, "<c16" if complex_vectors else "<f8").tobytes())
        for extra in (cache.frame, cache.phase):
            if extra is not None:
                parts.append(np.ascontiguousarray(extra, "<c16").tobytes())
    body = b"".join(parts)
    tmp = Path(path).with_suffix(".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)


def load_cache(path) -> SpectralCache:
    blob = Path(path).read_bytes()
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError(f"{path}: checksum mismatch")
    if body[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a spectral cache file")
    version, n, flags, label_len = struct.unpack("<IIIH", body[4:18])
    if version != CACHE_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    pos = 18
    label = body[pos:pos + label_len].decode()
    pos += label_len
    dim = n + 1

    def take(count, dtype):
        nonlocal pos
        width = np.dtype(dtype).itemsize * count
        arr = np.frombuffer(body[pos:pos + width], dtype=dtype).copy()
        pos += width
        return arr

    lam = take(dim, "<f8")
    if flags & 2:
        return SpectralCache(label, lam, diagonal=take(dim, "<f8"))
    v = take(dim * dim, "<c16" if flags & 8 else "<f8").reshape(dim, dim)
    frame = take(dim, "<c16") if flags & 1 else None
    phase = take(dim, "<c16") if flags & 4 else None
    return SpectralCache(label, lam, v, frame=frame, phase=phase)


def _offsets(mat, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Main diagonal and the +2 diagonal (zero padded to ``dim``) of a sparse matrix."""
    m = sp.csr_array(mat)
    d = m.diagonal(0)
    off2 = np.zeros(dim)
    if dim > 2:
        off2[:dim - 2] = m.diagonal(2).real
    return d.real, off2


class GeneratorBank:
    """Lazily factorized generators for one Dicke space.

    Labels: ``X``, ``Z``, ``Z2``, ``H_TAT``, ``Y2``, ``TILTED`` (``AB+BA`` with
    ``A, B = (X +- Z)/sqrt 2``, which equals ``X^2 - Z^2``).  Each label is
    factorized at most once per bank; ``diagonalizations`` counts the
    factorizations actually performed and ``requests`` counts lookups.
    With ``cache_dir`` set, factorizations are read from and written to disk.
    """

    LABELS = ("X", "Z", "Z2", "H_TAT", "Y2", "TILTED")

    def __init__(self, space: DickeSpace | int, cache_dir=None):
        self.space = space if isinstance(space, DickeSpace) else DickeSpace(space)
        self.ops = build_collective_ops(self.space)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._caches: dict[str, SpectralCache] = {}
        self._lock = threading.Lock()
        self.diagonalizations = 0
        self.requests = 0

    @property
    def n_qubits(self) -> int:
        return self.space.n_qubits

    def get(self, label: str) -> SpectralCache:
        if label not in self.LABELS:
            raise ValueError(f"unknown generator {label!r}; choose from {self.LABELS}")
        with self._lock:
            self.requests += 1
            cache = self._caches.get(label)
            if cache is None:
                cache = self._load_or_build(label)
                self._caches[label] = cache
            return cache

    def __getitem__(self, label: str) -> SpectralCache:
        return self.get(label)

    def _path(self, label: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{label}_N{self.n_qubits}.spc"

    def _load_or_build(self, label: str) -> SpectralCache:
        path = self._path(label)
        if path is not None and path.exists():
            try:
                cache = load_cache(path)
                if cache.dim == self.space.dim and cache.label == label:
                    return cache
            except (ValueError, struct.error):
                pass
        cache = self._build(label)
        if path is not None and not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            save_cache(cache, path)
        return cache

    def _build(self, label: str) -> SpectralCache:
        space, ops = self.space, self.ops
        dim = space.dim
        z = space.z_eigenvalues
        if label == "Z":
            return _diagonal_cache(label, z)
        if label == "Z2":
            return _diagonal_cache(label, z * z)
        self.diagonalizations += 1
        if label == "X":
            lam, v = _tridiagonal_eig(np.zeros(dim), ops.ladder, label)
            return SpectralCache(label, lam, _fix_phases(v))
        if label == "H_TAT":
            # F^H (XY+YX) F is real with F_k = exp(i pi k / 4)
            off2 = np.zeros(dim)
            off2[:dim - 2] = 2.0 * ops.tat_band
            frame = np.exp(0.25j * np.pi * np.arange(dim))
            return factorize_parity_banded(np.zeros(dim), off2, label, frame=frame)
        if label == "Y2":
            d, off2 = _offsets(ops.Y @ ops.Y, dim)
        else:  # TILTED
            d, off2 = _offsets(ops.X @ ops.X - ops.z_squared, dim)
        return factorize_parity_banded(d, off2, label)


_BANKS: dict[tuple[int, str | None], GeneratorBank] = {}
_BANKS_LOCK = threading.Lock()


def generator_bank(n_qubits: int, cache_dir=None) -> GeneratorBank:
    """Process-wide shared :class:`GeneratorBank` for ``n_qubits``."""
    key = (int(n_qubits), str(cache_dir) if cache_dir is not None else None)
    with _BANKS_LOCK:
        bank = _BANKS.get(key)
        if bank is None:
            bank = _BANKS[key] = GeneratorBank(int(n_qubits), cache_dir)
        return bank
