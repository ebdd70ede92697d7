"""Complex linear-algebra and random-sampling primitives."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NotHermitianError, NotPSDError

HERMITIAN_TOL = 1e-10
EIG_CLIP_TOL = 1e-10


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(base_seed, stream_id)``.

    Streams are derived by hashing a context label and an index, so Monte Carlo
    trials can be drawn in any order (or in parallel) and still reproduce the
    same numbers.
    """

    base_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence([self.base_seed & 0xFFFFFFFFFFFFFFFF,
                                      self.stream_id & 0xFFFFFFFFFFFFFFFF])
        return np.random.Generator(np.random.Philox(seq))

    def spawn(self, label: str, index: int = 0) -> "RngStream":
        payload = f"{self.stream_id}|{label}|{index}".encode()
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        return RngStream(self.base_seed, int.from_bytes(digest, "little"))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _check_square(A: np.ndarray, name: str = "matrix") -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")


def check_hermitian(A: np.ndarray, tol: float = HERMITIAN_TOL, name: str = "matrix") -> None:
    _check_square(A, name)
    scale = np.max(np.abs(A)) if A.size else 0.0
    if np.max(np.abs(A - A.conj().T), initial=0.0) > tol * max(scale, np.finfo(float).tiny):
        raise NotHermitianError(f"{name} is not Hermitian")


def hermitian_eig(A: np.ndarray, name: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian PSD matrix with small negatives clipped."""
    A = np.asarray(A)
    check_hermitian(A, name=name)
    lam, U = np.linalg.eigh((A + A.conj().T) / 2)
    lam_max = max(lam[-1], 0.0) if lam.size else 0.0
    if lam.size and lam[0] < -EIG_CLIP_TOL * lam_max:
        raise NotPSDError(f"{name} has eigenvalue {lam[0]:.3e} below -{EIG_CLIP_TOL}*lambda_max")
    return np.clip(lam, 0.0, None), U


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Return B = U diag(sqrt(lambda)) with B @ B^H == A.

    Uses an eigendecomposition rather than Cholesky so that rank-deficient
    covariance matrices are accepted.
    """
    lam, U = hermitian_eig(A)
    return U * np.sqrt(lam)


def numerical_rank(A: np.ndarray, rtol: float = 1e-10) -> int:
    lam, _ = hermitian_eig(A)
    if not lam.size or lam[-1] == 0:
        return 0
    return int(np.sum(lam > rtol * lam[-1]))


def standard_cgauss(gen: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) entries."""
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / np.sqrt(2.0)


def sample_cgauss(R: np.ndarray, n: int, rng, *, sqrt: np.ndarray | None = None) -> np.ndarray:
    """Draw ``n`` vectors from CN(0, R); returns an array of shape (n, M).

    ``sqrt`` may carry a precomputed factor from :func:`psd_sqrt` to avoid
    repeated eigendecompositions inside Monte Carlo loops.
    """
    R = np.asarray(R)
    B = psd_sqrt(R) if sqrt is None else sqrt
    gen = as_generator(rng)
    g = standard_cgauss(gen, (n, B.shape[1]))
    return g @ B.T


def hadamard(A: np.ndarray, B: np.ndarray, C: np.ndarray | None = None) -> np.ndarray:
    A, B = np.asarray(A), np.asarray(B)
    if A.shape != B.shape or (C is not None and np.shape(C) != A.shape):
        raise DimensionError("hadamard operands must have equal shapes")
    out = A * B
    return out if C is None else out * np.asarray(C)


def trace_prod(A: np.ndarray, B: np.ndarray) -> complex:
    """tr(A @ B) without forming the product."""
    A, B = np.asarray(A), np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0] or A.shape[0] != B.shape[1]:
        raise DimensionError(f"cannot form tr(AB) for shapes {A.shape} and {B.shape}")
    return np.einsum("ij,ji->", A, B)


def random_psd(M: int, rng, rank: int | None = None, scale: float = 1.0) -> np.ndarray:
    """Random Hermitian PSD test matrix (complex Wishart-like)."""
    gen = as_generator(rng)
    X = standard_cgauss(gen, (M, rank or M))
    R = X @ X.conj().T
    R = (R + R.conj().T) / 2
    return scale * R / np.real(np.trace(R)) * M
