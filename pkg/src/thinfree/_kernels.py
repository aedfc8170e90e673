"""Compiled PSOR sweeps on the half grid.

Arrays are indexed ``u[i, j, k]`` (n = 2) or ``u[i, k]`` (n = 1) with ``k = 0``
the thin plane.  Plane nodes see their reflected neighbour twice.  Boundary
layers (first/last thin index, last normal index) are never written.
"""

import numba


@numba.njit(cache=True, nogil=True)
def sweep_lex3(u, phi, omega):
    nx, ny, nz = u.shape
    dmax = 0.0
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            old = u[i, j, 0]
            gs = (u[i - 1, j, 0] + u[i + 1, j, 0] + u[i, j - 1, 0] + u[i, j + 1, 0]
                  + 2.0 * u[i, j, 1]) / 6.0
            new = old + omega * (gs - old)
            if new < phi[i, j]:
                new = phi[i, j]
            d = abs(new - old)
            if d > dmax:
                dmax = d
            u[i, j, 0] = new
            for k in range(1, nz - 1):
                old = u[i, j, k]
                gs = (u[i - 1, j, k] + u[i + 1, j, k] + u[i, j - 1, k] + u[i, j + 1, k]
                      + u[i, j, k - 1] + u[i, j, k + 1]) / 6.0
                new = old + omega * (gs - old)
                d = abs(new - old)
                if d > dmax:
                    dmax = d
                u[i, j, k] = new
    return dmax


@numba.njit(cache=True, nogil=True)
def sweep_lex2(u, phi, omega):
    nx, nz = u.shape
    dmax = 0.0
    for i in range(1, nx - 1):
        old = u[i, 0]
        gs = (u[i - 1, 0] + u[i + 1, 0] + 2.0 * u[i, 1]) / 4.0
        new = old + omega * (gs - old)
        if new < phi[i]:
            new = phi[i]
        d = abs(new - old)
        if d > dmax:
            dmax = d
        u[i, 0] = new
        for k in range(1, nz - 1):
            old = u[i, k]
            gs = (u[i - 1, k] + u[i + 1, k] + u[i, k - 1] + u[i, k + 1]) / 4.0
            new = old + omega * (gs - old)
            d = abs(new - old)
            if d > dmax:
                dmax = d
            u[i, k] = new
    return dmax


@numba.njit(cache=True, nogil=True)
def color_slab3(u, phi, omega, color, i0, i1):
    """Update nodes with ``(i + j + k) % 2 == color`` for ``i0 <= i < i1``."""
    nx, ny, nz = u.shape
    dmax = 0.0
    for i in range(max(i0, 1), min(i1, nx - 1)):
        for j in range(1, ny - 1):
            k0 = (color + i + j) % 2
            for k in range(k0, nz - 1, 2):
                old = u[i, j, k]
                if k == 0:
                    gs = (u[i - 1, j, 0] + u[i + 1, j, 0] + u[i, j - 1, 0] + u[i, j + 1, 0]
                          + 2.0 * u[i, j, 1]) / 6.0
                    new = old + omega * (gs - old)
                    if new < phi[i, j]:
                        new = phi[i, j]
                else:
                    gs = (u[i - 1, j, k] + u[i + 1, j, k] + u[i, j - 1, k] + u[i, j + 1, k]
                          + u[i, j, k - 1] + u[i, j, k + 1]) / 6.0
                    new = old + omega * (gs - old)
                d = abs(new - old)
                if d > dmax:
                    dmax = d
                u[i, j, k] = new
    return dmax


@numba.njit(cache=True, nogil=True)
def color_slab2(u, phi, omega, color, i0, i1):
    nx, nz = u.shape
    dmax = 0.0
    for i in range(max(i0, 1), min(i1, nx - 1)):
        k0 = (color + i) % 2
        for k in range(k0, nz - 1, 2):
            old = u[i, k]
            if k == 0:
                gs = (u[i - 1, 0] + u[i + 1, 0] + 2.0 * u[i, 1]) / 4.0
                new = old + omega * (gs - old)
                if new < phi[i]:
                    new = phi[i]
            else:
                gs = (u[i - 1, k] + u[i + 1, k] + u[i, k - 1] + u[i, k + 1]) / 4.0
                new = old + omega * (gs - old)
            d = abs(new - old)
            if d > dmax:
                dmax = d
            u[i, k] = new
    return dmax
