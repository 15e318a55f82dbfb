"""Mask-driven covariance estimation and multichannel Wiener filtering.

Covariances are accumulated in double precision per frequency bin as
``phi_ss(f) = 1/T sum_t M^2 x x^H`` and ``phi_nn(f) = 1/T sum_t (1-M)^2 x x^H``.
The full MWF is ``w = (phi_ss + phi_nn)^{-1} phi_ss e_1``; the GEVD variant
first replaces ``phi_ss`` by its principal generalized eigen-component
relative to ``phi_nn``.
"""

from dataclasses import dataclass, field

import numpy as np

from foa_unet import linalg
from foa_unet.errors import NotPositiveDefiniteError, ShapeError
from foa_unet.masks import validate_mask
from foa_unet.stft import Spectrogram

LOADING = 1e-6


@dataclass
class CovariancePair:
    phi_ss: np.ndarray  # (F, 4, 4) complex128
    phi_nn: np.ndarray
    frame_count: int


@dataclass
class FilterWeights:
    """Per-bin filter ``w[f]`` applied as ``y = w^H x``."""

    w: np.ndarray  # (F, C) complex128
    variant: str
    passthrough: np.ndarray = field(default=None)  # bins that fell back to e_1

    def __post_init__(self):
        if self.passthrough is None:
            self.passthrough = np.zeros(self.w.shape[0], dtype=bool)


def masked_covariances(mix, mask):
    data = mix.data if isinstance(mix, Spectrogram) else np.asarray(mix)
    if data.ndim != 3 or data.shape[1] == 0:
        raise ShapeError("mixture spectrogram is empty")
    m = validate_mask(mask, data.shape[1:]).astype(np.float64)
    x = data.astype(np.complex128)
    n_frames = x.shape[1]
    ws = m**2
    wn = (1.0 - m) ** 2
    phi_ss = np.einsum("tf,atf,btf->fab", ws, x, x.conj()) / n_frames
    phi_nn = np.einsum("tf,atf,btf->fab", wn, x, x.conj()) / n_frames
    return CovariancePair(
        phi_ss=0.5 * (phi_ss + linalg.hermitian(phi_ss)),
        phi_nn=0.5 * (phi_nn + linalg.hermitian(phi_nn)),
        frame_count=n_frames,
    )


def _trace(m):
    return np.trace(m, axis1=-2, axis2=-1).real


def _loaded_solve(a, b):
    """Solve ``a x = b`` per bin, diagonally loading bins that are ill conditioned.

    Bins whose reciprocal condition number is below LOADING receive
    ``LOADING * trace(a) / n * I``; all-zero bins are reported as singular.
    """
    n = a.shape[-1]
    rc = linalg.rcond(a)
    tr = _trace(a)
    singular = ~(tr > 0)
    load = np.where((rc < LOADING) & ~singular, LOADING * tr / n, 0.0)
    a = a + load[:, None, None] * np.eye(n)
    a[singular] = np.eye(n)
    x = linalg.solve_hermitian(a, b)
    return x, singular


def mwf_filter(cov):
    """Full-rank MWF ``(phi_ss + phi_nn)^{-1} phi_ss e_1`` for every bin."""
    a = cov.phi_ss + cov.phi_nn
    rhs = cov.phi_ss[:, :, 0]
    w, singular = _loaded_solve(a, rhs)
    w[singular] = 0.0
    w[singular, 0] = 1.0
    return FilterWeights(w=w, variant="full_mwf", passthrough=singular)


def rank1_target_covariance(cov):
    """Principal generalized eigen-component of ``phi_ss`` against ``phi_nn``.

    ``phi_nn`` is loaded with ``1e-6 * trace / 4`` (or, when it is identically
    zero, with the same fraction of ``phi_ss``'s trace) and whitened by its
    Cholesky factor ``L``; the principal eigenpair ``(lam, u)`` of
    ``L^{-1} phi_ss L^{-H}`` gives ``max(lam, 0) (L u)(L u)^H``.
    """
    phi_ss, phi_nn = cov.phi_ss, cov.phi_nn
    n = phi_nn.shape[-1]
    tr_nn = _trace(phi_nn)
    tr_ss = _trace(phi_ss)
    load = LOADING * np.where(tr_nn > 0, tr_nn, tr_ss) / n
    silent = ~(load > 0)
    loaded = phi_nn + load[:, None, None] * np.eye(n)
    loaded[silent] = np.eye(n)
    try:
        chol = linalg.cholesky(loaded)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            "noise covariance not positive definite after loading", exc.pivot, exc.index
        ) from None

    tmp = linalg.solve_lower(chol, phi_ss)  # L^{-1} phi_ss
    whitened = linalg.hermitian(linalg.solve_lower(chol, linalg.hermitian(tmp)))
    lam, vecs = linalg.eigh(whitened)
    principal = chol @ vecs[:, :, :1]  # (F, n, 1)
    gain = np.maximum(lam[:, 0], 0.0)
    gain[silent] = 0.0
    return gain[:, None, None] * (principal @ linalg.hermitian(principal))


def gevd_rank1_filter(cov):
    """Rank-1 GEVD approximation of the MWF (see :func:`rank1_target_covariance`)."""
    phi1 = rank1_target_covariance(cov)
    weights = mwf_filter(CovariancePair(phi1, cov.phi_nn, cov.frame_count))
    # bins with no target estimate keep w = 0 instead of passing the mixture through
    zero_target = ~(_trace(phi1) > 0)
    weights.w[zero_target] = 0.0
    weights.passthrough &= ~zero_target
    weights.variant = "gevd_rank1"
    return weights


def apply_filter(mix, weights):
    """``y(t, f) = w(f)^H x(t, f)`` as a single-channel Spectrogram."""
    data = mix.data
    if data.shape[0] != weights.w.shape[1] or data.shape[2] != weights.w.shape[0]:
        raise ShapeError(
            f"filter shape {weights.w.shape} does not match mixture {data.shape}"
        )
    y = np.einsum("fc,ctf->tf", weights.w.conj(), data.astype(np.complex128))
    return Spectrogram(y[None].astype(data.dtype), mix.config)
