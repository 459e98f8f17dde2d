"""Compiled inner loops (numba, nogil so evaluator threads overlap).

Sparse LDL^T follows the classic up-looking scheme: an elimination-tree
symbolic pass sizes every column of L, then each row k of L is obtained
from a sparse triangular solve whose pattern is read off the tree.
Input matrices are given as *lower* CSR rows (row k holds columns <= k),
which is the same thing as upper CSC columns.
"""

import numpy as np
from numba import njit

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def spmv_upper(n, indptr, indices, data, x, y):
    """y = A @ x where only the upper triangle (with diagonal) is stored."""
    for i in range(n):
        y[i] = 0.0
    for i in range(n):
        xi = x[i]
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            acc += v * x[j]
            if j != i:
                y[j] += v * xi
        y[i] += acc


@njit(**_OPTS)
def spmm_upper(n, indptr, indices, data, X, Y):
    m = X.shape[1]
    for i in range(n):
        for c in range(m):
            Y[i, c] = 0.0
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            for c in range(m):
                Y[i, c] += v * X[j, c]
            if j != i:
                for c in range(m):
                    Y[j, c] += v * X[i, c]


@njit(**_OPTS)
def ldl_symbolic(n, Ap, Ai):
    """Elimination tree and column counts of L for lower-CSR pattern (Ap, Ai)."""
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i < k:
                while flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    Lp = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        Lp[k + 1] = Lp[k] + lnz[k]
    return parent, Lp


@njit(**_OPTS)
def ldl_numeric(n, Ap, Ai, Ax, Lp, parent, Li, Lx, D, rel_zero):
    """Numeric LDL^T without pivoting.

    Returns -1 on success, else the row whose pivot fell below
    ``rel_zero * max(|D| so far, |A_kk|)``.
    """
    y = np.zeros(n)
    pattern = np.empty(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    dmax = 0.0
    for k in range(n):
        top = n
        flag[k] = k
        akk = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i > k:
                continue
            y[i] += Ax[p]
            if i == k:
                akk = Ax[p]
            ln = 0
            while flag[i] != k:
                pattern[ln] = i
                ln += 1
                flag[i] = k
                i = parent[i]
            while ln > 0:
                top -= 1
                ln -= 1
                pattern[top] = pattern[ln]
        dk = y[k]
        y[k] = 0.0
        for t in range(top, n):
            i = pattern[t]
            yi = y[i]
            y[i] = 0.0
            p2 = Lp[i] + lnz[i]
            for p in range(Lp[i], p2):
                y[Li[p]] -= Lx[p] * yi
            lki = yi / D[i]
            dk -= lki * yi
            Li[p2] = k
            Lx[p2] = lki
            lnz[i] += 1
        D[k] = dk
        scale = max(dmax, abs(akk))
        if abs(dk) <= rel_zero * scale or dk == 0.0:
            return k
        if abs(dk) > dmax:
            dmax = abs(dk)
    return -1


@njit(**_OPTS)
def ldl_solve_inplace(n, Lp, Li, Lx, D, B):
    """Overwrite the columns of B with (L D L^T)^{-1} B."""
    m = B.shape[1]
    for j in range(n):
        for p in range(Lp[j], Lp[j + 1]):
            r = Li[p]
            v = Lx[p]
            for c in range(m):
                B[r, c] -= v * B[j, c]
    for j in range(n):
        dj = D[j]
        for c in range(m):
            B[j, c] /= dj
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j], Lp[j + 1]):
            r = Li[p]
            v = Lx[p]
            for c in range(m):
                B[j, c] -= v * B[r, c]


@njit(**_OPTS)
def ldl_solve_vec(n, Lp, Li, Lx, D, b):
    for j in range(n):
        bj = b[j]
        if bj != 0.0:
            for p in range(Lp[j], Lp[j + 1]):
                b[Li[p]] -= Lx[p] * bj
    for j in range(n):
        b[j] /= D[j]
    for j in range(n - 1, -1, -1):
        acc = b[j]
        for p in range(Lp[j], Lp[j + 1]):
            acc -= Lx[p] * b[Li[p]]
        b[j] = acc


@njit(**_OPTS)
def ldl_lower_solve(n, Lp, Li, Lx, B):
    """B <- L^{-1} B (unit lower), column block."""
    m = B.shape[1]
    for j in range(n):
        for p in range(Lp[j], Lp[j + 1]):
            r = Li[p]
            v = Lx[p]
            for c in range(m):
                B[r, c] -= v * B[j, c]


@njit(**_OPTS)
def ldl_upper_solve(n, Lp, Li, Lx, B):
    """B <- L^{-T} B (unit upper), column block."""
    m = B.shape[1]
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j], Lp[j + 1]):
            r = Li[p]
            v = Lx[p]
            for c in range(m):
                B[j, c] -= v * B[r, c]


@njit(**_OPTS)
def jacobi_eigh(A, tol, max_sweeps):
    """Cyclic Jacobi for a dense symmetric matrix; returns (values, vectors, sweeps)."""
    n = A.shape[0]
    A = A.copy()
    V = np.eye(n)
    sweeps = 0
    for sweep in range(max_sweeps):
        off = 0.0
        tot = 0.0
        for i in range(n):
            for j in range(n):
                tot += A[i, j] * A[i, j]
                if i != j:
                    off += A[i, j] * A[i, j]
        if off <= tol * tol * tot:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = A[i, i]
    return w, V, sweeps
