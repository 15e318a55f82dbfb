"""Direct complex linear algebra for the tiny matrices of FOA processing.

All functions accept a single matrix ``(n, n)`` or a stack ``(..., n, n)`` and
operate on every matrix of the stack at once; the per-frequency 4x4 problems
of the Wiener filter are solved as one batch. Algorithms are deliberately
simple (cyclic Jacobi, unblocked Cholesky, normal-equation pseudo-inverse) and
fully deterministic.
"""

import numpy as np

from foa_unet.errors import IllConditionedError, NotPositiveDefiniteError, NumericalError

HERMITIAN_TOL = 1e-10
RCOND_MIN = 1e-12
JACOBI_TOL = 1e-12
MAX_SWEEPS = 50


class NotHermitianError(NumericalError):
    pass


def hermitian(m):
    return np.conj(np.swapaxes(m, -1, -2))


def _fro(m):
    return np.sqrt(np.sum(np.abs(m) ** 2, axis=(-2, -1)))


def symmetrize(m, tol=HERMITIAN_TOL):
    """Return ``(m + m^H) / 2`` after checking the asymmetry is round-off."""
    m = np.asarray(m, dtype=np.complex128)
    mh = hermitian(m)
    scale = _fro(m)
    asym = _fro(m - mh)
    bad = asym > tol * np.where(scale > 0, scale, 1.0)
    if np.any(bad):
        worst = float(np.max(asym / np.where(scale > 0, scale, 1.0)))
        raise NotHermitianError(f"matrix is not Hermitian (relative asymmetry {worst:.2e})")
    return 0.5 * (m + mh)


def _first_bad_index(mask):
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if idx.size else None


def cholesky(m):
    """Lower-triangular ``L`` with ``L @ L^H == m`` for Hermitian positive definite ``m``.

    Raises NotPositiveDefiniteError naming the first failing pivot.
    """
    a = symmetrize(m)
    n = a.shape[-1]
    lower = np.zeros_like(a)
    for j in range(n):
        d = a[..., j, j].real - np.sum(np.abs(lower[..., j, :j]) ** 2, axis=-1)
        bad = ~(d > 0)
        if np.any(bad):
            index = _first_bad_index(bad) if bad.ndim else None
            raise NotPositiveDefiniteError("Cholesky factorization failed", j, index)
        ljj = np.sqrt(d)
        lower[..., j, j] = ljj
        for i in range(j + 1, n):
            s = a[..., i, j] - np.sum(lower[..., i, :j] * np.conj(lower[..., j, :j]), axis=-1)
            lower[..., i, j] = s / ljj
    return lower


def solve_lower(lower, b):
    """Forward substitution ``L x = b`` for lower-triangular ``L``; ``b`` is ``(..., n, k)``."""
    lower = np.asarray(lower)
    b = np.asarray(b, dtype=np.result_type(lower, b, np.complex128))
    n = lower.shape[-1]
    x = np.zeros(np.broadcast_shapes(lower.shape[:-2], b.shape[:-2]) + b.shape[-2:], b.dtype)
    for i in range(n):
        acc = b[..., i, :] - np.einsum("...j,...jk->...k", lower[..., i, :i], x[..., :i, :])
        x[..., i, :] = acc / lower[..., i, i][..., None]
    return x


def solve_upper(upper, b):
    """Back substitution ``U x = b`` for upper-triangular ``U``."""
    upper = np.asarray(upper)
    b = np.asarray(b, dtype=np.result_type(upper, b, np.complex128))
    n = upper.shape[-1]
    x = np.zeros(np.broadcast_shapes(upper.shape[:-2], b.shape[:-2]) + b.shape[-2:], b.dtype)
    for i in range(n - 1, -1, -1):
        acc = b[..., i, :] - np.einsum(
            "...j,...jk->...k", upper[..., i, i + 1 :], x[..., i + 1 :, :]
        )
        x[..., i, :] = acc / upper[..., i, i][..., None]
    return x


def eigh(m):
    """Eigen-decomposition of Hermitian matrices by cyclic complex Jacobi sweeps.

    Returns ``(eigenvalues, eigenvectors)``: real eigenvalues sorted in
    descending order along the last axis and the matching orthonormal
    eigenvectors as columns.
    """
    a = symmetrize(m).copy()
    n = a.shape[-1]
    v = np.broadcast_to(np.eye(n, dtype=np.complex128), a.shape).copy()
    scale = _fro(a)
    tol = JACOBI_TOL * scale
    offdiag = ~np.eye(n, dtype=bool)

    for _ in range(MAX_SWEEPS):
        off = np.sqrt(np.sum(np.abs(a[..., offdiag]) ** 2, axis=-1))
        if np.all(off <= tol):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                _rotate(a, v, p, q, scale)
    else:
        raise NumericalError("Jacobi eigensolver did not converge")

    w = np.diagonal(a, axis1=-2, axis2=-1).real.copy()
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return w, v


def _rotate(a, v, p, q, scale):
    apq = a[..., p, q]
    r = np.abs(apq)
    # entries this small are dropped outright; they sit far below the convergence tolerance
    active = r > np.maximum(1e-20 * scale, np.finfo(float).tiny)
    r_safe = np.where(active, r, 1.0)
    phase = np.where(active, apq / r_safe, 1.0)
    tau = (a[..., q, q].real - a[..., p, p].real) / (2.0 * r_safe)
    sign = np.where(tau >= 0, 1.0, -1.0)
    t = np.where(active, sign / (np.abs(tau) + np.hypot(1.0, tau)), 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c

    # G = diag(1, conj(phase)) @ [[c, s], [-s, c]] acting on coordinates (p, q)
    g = np.empty(a.shape[:-2] + (2, 2), dtype=np.complex128)
    g[..., 0, 0] = c
    g[..., 0, 1] = s
    g[..., 1, 0] = -s * np.conj(phase)
    g[..., 1, 1] = c * np.conj(phase)
    cols = [p, q]
    a[..., :, cols] = a[..., :, cols] @ g
    a[..., cols, :] = hermitian(g) @ a[..., cols, :]
    a[..., p, q] = 0.0
    a[..., q, p] = 0.0
    v[..., :, cols] = v[..., :, cols] @ g


def rcond(m):
    """Reciprocal spectral condition number of Hermitian matrices (0 when singular)."""
    w, _ = eigh(m)
    top = np.abs(w).max(axis=-1)
    low = np.abs(w).min(axis=-1)
    return np.where(top > 0, low / np.where(top > 0, top, 1.0), 0.0)


def solve_hermitian(a, b):
    """Solve ``a x = b`` for Hermitian ``a``; ``b`` may be a vector or a matrix.

    Raises IllConditionedError when the reciprocal condition number drops
    below ``1e-12``. Callers that can regularize (the Wiener filter) catch it
    or pre-check :func:`rcond`.
    """
    b = np.asarray(b)
    vector = b.ndim == np.ndim(a) - 1
    if vector:
        b = b[..., None]
    w, vecs = eigh(a)
    top = np.abs(w).max(axis=-1)
    low = np.abs(w).min(axis=-1)
    rc = np.where(top > 0, low / np.where(top > 0, top, 1.0), 0.0)
    if np.any(rc < RCOND_MIN):
        worst = float(np.min(rc))
        raise IllConditionedError(
            "Hermitian system is numerically singular",
            np.inf if worst == 0 else 1.0 / worst,
        )
    x = vecs @ ((hermitian(vecs) @ b) / w[..., :, None])
    return x[..., 0] if vector else x


def pinv(m):
    """Moore-Penrose pseudo-inverse of a full-rank matrix via the normal equations.

    Tall or square input uses ``(m^H m)^{-1} m^H``, wide input uses
    ``m^H (m m^H)^{-1}``. Rank deficiency raises IllConditionedError carrying
    the condition estimate of ``m``.
    """
    m = np.asarray(m, dtype=np.complex128)
    rows, cols = m.shape[-2:]
    mh = hermitian(m)
    tall = rows >= cols
    gram = mh @ m if tall else m @ mh
    try:
        if tall:
            return solve_hermitian(gram, mh)
        return hermitian(solve_hermitian(gram, m))
    except IllConditionedError as exc:
        raise IllConditionedError(
            "matrix is rank deficient", np.sqrt(exc.condition)
        ) from None


def condition_number(m):
    """2-norm condition number of a (possibly rectangular) matrix."""
    m = np.asarray(m, dtype=np.complex128)
    rows, cols = m.shape[-2:]
    gram = hermitian(m) @ m if rows >= cols else m @ hermitian(m)
    rc = rcond(gram)
    return np.where(rc > 0, 1.0 / np.sqrt(np.where(rc > 0, rc, 1.0)), np.inf)
