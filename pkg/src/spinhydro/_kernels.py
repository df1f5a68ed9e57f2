"""Numba kernels shared by the rate builder and the random walk."""
import numba as nb
import numpy as np

NV = 0


@nb.njit(cache=True, inline="always")
def _pair(pos, delta, species, i, j, J0, gamma_pp, gamma_nv):
    dx = pos[j, 0] - pos[i, 0]
    dy = pos[j, 1] - pos[i, 1]
    dz = pos[j, 2] - pos[i, 2]
    r2 = dx * dx + dy * dy + dz * dz
    nz2 = dz * dz / r2
    si = species[i] == NV
    sj = species[j] == NV
    if si and sj:
        return 0.0, r2
    r3 = r2 * np.sqrt(r2)
    if si or sj:
        coef = 3.0 * (1.0 - nz2) / (2.0 * np.sqrt(2.0))
        g = gamma_nv
    else:
        coef = (1.0 - 3.0 * nz2) / 4.0
        g = gamma_pp
    J = J0 * coef / r3
    dd = delta[i] - delta[j]
    return J * J * 2.0 * g / (g * g + dd * dd), r2


@nb.njit(cache=True)
def pair_rate_ij(pos, delta, species, i, j, J0, gamma_pp, gamma_nv):
    return _pair(pos, delta, species, i, j, J0, gamma_pp, gamma_nv)[0]


@nb.njit(cache=True)
def build_split(pos, delta, species, J0, gamma_pp, gamma_nv, floor, near_r2):
    """CSR rows of pairs within the near radius plus exact far totals.

    Returns indptr, indices, data (rates), far_totals.
    """
    n = pos.shape[0]
    counts = np.zeros(n, np.int64)
    far = np.zeros(n)
    for i in range(n):
        for j in range(i + 1, n):
            rate, r2 = _pair(pos, delta, species, i, j, J0, gamma_pp, gamma_nv)
            if rate < floor or rate == 0.0:
                continue
            if r2 <= near_r2:
                counts[i] += 1
                counts[j] += 1
            else:
                far[i] += rate
                far[j] += rate
    indptr = np.zeros(n + 1, np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + counts[i]
    nnz = indptr[n]
    indices = np.empty(nnz, np.int32)
    data = np.empty(nnz)
    fill = indptr[:-1].copy()
    for i in range(n):
        for j in range(i + 1, n):
            rate, r2 = _pair(pos, delta, species, i, j, J0, gamma_pp, gamma_nv)
            if rate < floor or rate == 0.0 or r2 > near_r2:
                continue
            indices[fill[i]] = j
            data[fill[i]] = rate
            fill[i] += 1
            indices[fill[j]] = i
            data[fill[j]] = rate
            fill[j] += 1
    # rows are filled in increasing column order except for the j<i block,
    # which is written first as i increases, so every row is sorted
    return indptr, indices, data, far


@nb.njit(cache=True)
def row_cumsum(indptr, data):
    cum = np.empty_like(data)
    for i in range(indptr.size - 1):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k]
            cum[k] = s
    return cum


@nb.njit(cache=True)
def _far_hop(pos, delta, species, site, target, J0, gamma_pp, gamma_nv, floor, near_r2):
    n = pos.shape[0]
    acc = 0.0
    last = -1
    for j in range(n):
        if j == site:
            continue
        rate, r2 = _pair(pos, delta, species, site, j, J0, gamma_pp, gamma_nv)
        if rate < floor or rate == 0.0 or r2 <= near_r2:
            continue
        acc += rate
        last = j
        if acc > target:
            return j
    return last


@nb.njit(cache=True)
def walk_sites(indptr, indices, cum, far, pos, delta, species, J0, gamma_pp,
               gamma_nv, floor, near_r2, start, tgrid, rng, out):
    """One kinetic Monte Carlo trajectory recorded as the occupied site
    at every grid time (last-event carry-forward). Returns the hop count."""
    nt = tgrid.size
    site = start
    t = 0.0
    k = 0
    hops = 0
    while k < nt:
        a, b = indptr[site], indptr[site + 1]
        near_tot = cum[b - 1] if b > a else 0.0
        tot = near_tot + far[site]
        if tot <= 0.0:
            break
        t += rng.standard_exponential() / tot
        while k < nt and tgrid[k] < t:
            out[k] = site
            k += 1
        if k == nt:
            return hops
        u = rng.random() * tot
        if u < near_tot:
            lo, hi = a, b - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if cum[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            site = indices[lo]
        else:
            site = _far_hop(pos, delta, species, site, u - near_tot, J0,
                            gamma_pp, gamma_nv, floor, near_r2)
        hops += 1
    while k < nt:
        out[k] = site
        k += 1
    return hops
