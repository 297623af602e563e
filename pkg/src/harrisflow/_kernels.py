"""Numba kernels for the Monte Carlo production paths.

Two structural facts keep these kernels linear-ish per step where the naive
approach is cubic:

* For the exact kernel with ``alpha == 1`` the spatial covariance
  ``exp(-beta |x - y|)`` is Markov in space, so a field increment at sorted
  positions is an AR(1) scan: ``z[i] = rho_i z[i-1] + sqrt(1-rho_i^2) w_i``
  with ``rho_i = exp(-beta gap_i)``.  This is the exact joint law, including
  perfectly correlated duplicates (``rho == 1``).

* For mollified kernels the covariance factors as ``c * (q * q * phi)`` with
  an explicit convolution square root ``q`` (Gaussian or triangle), so the
  field is a base AR(1) field on a uniform auxiliary grid convolved with
  ``q``; evaluating scattered particles costs one small tap dot-product each.
  The discretisation tolerance of this fast path is documented and tested in
  ``montecarlo``.

Replicas are independent: each prange iteration seeds the thread-local RNG
with its own replica seed, which makes results independent of the thread
count and schedule.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

INF = np.inf


@njit(cache=True, inline="always")
def _find(parent, x):
    r = x
    while parent[r] != r:
        r = parent[r]
    while parent[x] != r:
        nxt = parent[x]
        parent[x] = r
        x = nxt
    return r


@njit(cache=True)
def _merge_sweep(pos, buf, rootid, k, thr, parent, pre_scratch, post_scratch,
                 rid_scratch):
    """Collapse crossing/touching neighbours; returns the new live count.

    ``pos`` holds sorted pre-step positions, ``buf`` the raw post-step ones.
    Crossing pairs merge at the interpolated meeting point, touching pairs at
    the midpoint; lineages are united in ``parent``.
    """
    m = 0
    for i in range(k):
        cpre = pos[i]
        cpost = buf[i]
        crid = rootid[i]
        while m > 0 and cpost - post_scratch[m - 1] <= thr:
            m -= 1
            d0 = cpre - pre_scratch[m]
            d1 = cpost - post_scratch[m]
            if d1 < 0.0 and d0 > 0.0:
                theta = d0 / (d0 - d1)
                v = pre_scratch[m] + theta * (post_scratch[m] - pre_scratch[m])
            else:
                v = 0.5 * (post_scratch[m] + cpost)
            r1 = _find(parent, rid_scratch[m])
            r2 = _find(parent, crid)
            if r1 != r2:
                parent[r2] = r1
            crid = r1
            cpre = v
            cpost = v
        pre_scratch[m] = cpre
        post_scratch[m] = cpost
        rid_scratch[m] = crid
        m += 1
    for i in range(m):
        pos[i] = post_scratch[i]
        rootid[i] = rid_scratch[i]
    return m


@njit(cache=True)
def _ou_increment(pos, buf, k, beta, rt):
    """Write ``pos + sqrt(dt) * z`` into ``buf`` with the exact AR(1) draw."""
    zprev = 0.0
    for i in range(k):
        if i == 0:
            z = np.random.standard_normal()
        else:
            gap = pos[i] - pos[i - 1]
            rho = math.exp(-beta * gap)
            z = rho * zprev + math.sqrt(max(0.0, 1.0 - rho * rho)) * \
                np.random.standard_normal()
        zprev = z
        buf[i] = pos[i] + rt * z
    return 0


@njit(cache=True)
def _harris_dyadic_replica(seed, inj_step, inj_flat, inj_off, n_steps, dt,
                           beta, thr, snap_step, inv_x, track_ids,
                           measure_wave, cap,
                           inv_out, track_out, meas_out, snap_count,
                           dump, dump_pos, dump_term, dump_n):
    total = inj_off[len(inj_off) - 1]
    n_snap = len(snap_step)
    n_track = len(track_ids)
    parent = np.empty(total, dtype=np.int32)
    for i in range(total):
        parent[i] = i
    pos = np.empty(cap)
    buf = np.empty(cap)
    rootid = np.empty(cap, dtype=np.int32)
    s_pre = np.empty(cap)
    s_post = np.empty(cap)
    s_rid = np.empty(cap, dtype=np.int32)
    snap_pos = np.empty((n_snap, cap))
    snap_root = np.empty((n_snap, cap), dtype=np.int32)
    snap_n = np.zeros(n_snap, dtype=np.int64)
    k = 0
    w = 0
    sq = 0
    rt = math.sqrt(dt)
    np.random.seed(seed)
    for step in range(n_steps + 1):
        while w < len(inj_step) and inj_step[w] == step:
            lo, hi = inj_off[w], inj_off[w + 1]
            nw = hi - lo
            if k + nw > cap:
                return 1
            # merge sorted wave into sorted live arrays, from the back
            i = k - 1
            j = nw - 1
            out = k + nw - 1
            while j >= 0:
                if i >= 0 and pos[i] > inj_flat[lo + j]:
                    pos[out] = pos[i]
                    rootid[out] = rootid[i]
                    i -= 1
                else:
                    pos[out] = inj_flat[lo + j]
                    rootid[out] = lo + j
                    j -= 1
                out -= 1
            k += nw
            w += 1
        while sq < n_snap and snap_step[sq] == step:
            for i in range(k):
                snap_pos[sq, i] = pos[i]
                snap_root[sq, i] = rootid[i]
            snap_n[sq] = k
            snap_count[sq] = k
            for j in range(n_track):
                r = _find(parent, track_ids[j])
                for i in range(k):
                    if rootid[i] == r:
                        track_out[sq, j] = pos[i]
                        break
            sq += 1
        if step == n_steps or k == 0:
            continue
        _ou_increment(pos, buf, k, beta, rt)
        k = _merge_sweep(pos, buf, rootid, k, thr, parent, s_pre, s_post, s_rid)

    # terminal value per surviving lineage root
    term_of_root = np.empty(total)
    for i in range(k):
        term_of_root[rootid[i]] = pos[i]
    n_q = inv_x.shape[1]
    for s in range(n_snap):
        for q in range(n_q):
            x = inv_x[s, q]
            if math.isnan(x):
                inv_out[s, q] = np.nan
                continue
            best = INF
            for j in range(snap_n[s]):
                t = term_of_root[_find(parent, snap_root[s, j])]
                if t >= x and snap_pos[s, j] < best:
                    best = snap_pos[s, j]
            inv_out[s, q] = best
    if measure_wave >= 0:
        lo, hi = inj_off[measure_wave], inj_off[measure_wave + 1]
        for a in range(lo, hi):
            meas_out[a - lo] = term_of_root[_find(parent, a)]
    if dump != 0:
        for s in range(n_snap):
            for j in range(snap_n[s]):
                dump_pos[s, j] = snap_pos[s, j]
                dump_term[s, j] = term_of_root[_find(parent, snap_root[s, j])]
            dump_n[s] = snap_n[s]
    return 0


@njit(cache=True, parallel=True)
def harris_dyadic_ensemble(seeds, inj_step, inj_flat, inj_off, n_steps, dt,
                           beta, thr, snap_step, inv_x, track_ids,
                           measure_wave, cap,
                           inv_out, track_out, meas_out, snap_count, err,
                           dump, dump_pos, dump_term, dump_n):
    for r in prange(len(seeds)):
        err[r] = _harris_dyadic_replica(
            seeds[r], inj_step, inj_flat, inj_off, n_steps, dt, beta, thr,
            snap_step, inv_x, track_ids, measure_wave, cap,
            inv_out[r], track_out[r], meas_out[r], snap_count[r],
            dump, dump_pos[r], dump_term[r], dump_n[r])


@njit(cache=True)
def _smooth_dyadic_replica(seed, inj_step, inj_flat, inj_off, n_steps, dt,
                           grid_lo, du, n_grid, rho, taps, half,
                           snap_step, inv_x, track_idx, measure_wave,
                           inv_out, track_out, meas_out,
                           dump, dump_pos, dump_term, dump_n):
    total = inj_off[len(inj_off) - 1]
    n_snap = len(snap_step)
    n_sub = taps.shape[0]
    n_taps = taps.shape[1]
    pos = np.full(total, np.nan)
    alive = 0
    zgrid = np.empty(n_grid)
    snap_pos = np.empty((n_snap, total))
    snap_n = np.zeros(n_snap, dtype=np.int64)
    sig = math.sqrt(max(0.0, 1.0 - rho * rho))
    rt = math.sqrt(dt)
    w = 0
    sq = 0
    np.random.seed(seed)
    for step in range(n_steps + 1):
        while w < len(inj_step) and inj_step[w] == step:
            lo, hi = inj_off[w], inj_off[w + 1]
            for a in range(lo, hi):
                pos[a] = inj_flat[a]
            alive = hi
            w += 1
        while sq < n_snap and snap_step[sq] == step:
            for i in range(alive):
                snap_pos[sq, i] = pos[i]
            snap_n[sq] = alive
            for j in range(len(track_idx)):
                track_out[sq, j] = pos[track_idx[j]]
            sq += 1
        if step == n_steps or alive == 0:
            continue
        z = np.random.standard_normal()
        zgrid[0] = z
        for g in range(1, n_grid):
            z = rho * z + sig * np.random.standard_normal()
            zgrid[g] = z
        for i in range(alive):
            c = (pos[i] - grid_lo) / du
            cell = int(c)
            sub = int((c - cell) * n_sub + 0.5)
            if sub >= n_sub:
                cell += 1
                sub = 0
            base = cell - half
            if base < 0:
                base = 0
            elif base + n_taps > n_grid:
                base = n_grid - n_taps
            acc = 0.0
            for m in range(n_taps):
                acc += taps[sub, m] * zgrid[base + m]
            pos[i] += rt * acc

    for s in range(n_snap):
        for q in range(inv_x.shape[1]):
            x = inv_x[s, q]
            if math.isnan(x):
                inv_out[s, q] = np.nan
                continue
            best = INF
            for j in range(snap_n[s]):
                if pos[j] >= x and snap_pos[s, j] < best:
                    best = snap_pos[s, j]
            inv_out[s, q] = best
    if measure_wave >= 0:
        lo, hi = inj_off[measure_wave], inj_off[measure_wave + 1]
        for a in range(lo, hi):
            meas_out[a - lo] = pos[a]
    if dump != 0:
        for s in range(n_snap):
            for j in range(snap_n[s]):
                dump_pos[s, j] = snap_pos[s, j]
                dump_term[s, j] = pos[j]
            dump_n[s] = snap_n[s]
    return 0


@njit(cache=True, parallel=True)
def smooth_dyadic_ensemble(seeds, inj_step, inj_flat, inj_off, n_steps, dt,
                           grid_lo, du, n_grid, rho, taps, half,
                           snap_step, inv_x, track_idx, measure_wave,
                           inv_out, track_out, meas_out, err,
                           dump, dump_pos, dump_term, dump_n):
    for r in prange(len(seeds)):
        err[r] = _smooth_dyadic_replica(
            seeds[r], inj_step, inj_flat, inj_off, n_steps, dt,
            grid_lo, du, n_grid, rho, taps, half,
            snap_step, inv_x, track_idx, measure_wave,
            inv_out[r], track_out[r], meas_out[r],
            dump, dump_pos[r], dump_term[r], dump_n[r])


@njit(cache=True)
def _harris_smalln_replica(seed, x0, n_steps, dt, beta, thr, marg_steps,
                           cov_i, cov_j, marg_out, cov_out):
    n = len(x0)
    pos = np.empty(n)
    buf = np.empty(n)
    labels = np.empty(n, dtype=np.int32)
    slot_pre = np.empty(n)
    slot_post = np.empty(n)
    slot_members_lo = np.empty(n, dtype=np.int32)
    coord = np.empty(n)
    for i in range(n):
        pos[i] = x0[i]
        labels[i] = i
        coord[i] = x0[i]
    k = n
    rt = math.sqrt(dt)
    realized = 0.0
    predicted = 0.0
    mq = 0
    np.random.seed(seed)
    for step in range(n_steps + 1):
        while mq < len(marg_steps) and marg_steps[mq] == step:
            for i in range(n):
                marg_out[mq, i] = coord[i]
            mq += 1
        if step == n_steps:
            break
        if cov_i >= 0:
            predicted += math.exp(-beta * abs(coord[cov_i] - coord[cov_j])) * dt
        _ou_increment(pos, buf, k, beta, rt)
        # stack merge over slots, remapping labels
        m = 0
        for i in range(k):
            cpre = pos[i]
            cpost = buf[i]
            lo_slot = i
            while m > 0 and cpost - slot_post[m - 1] <= thr:
                m -= 1
                d0 = cpre - slot_pre[m]
                d1 = cpost - slot_post[m]
                if d1 < 0.0 and d0 > 0.0:
                    theta = d0 / (d0 - d1)
                    v = slot_pre[m] + theta * (slot_post[m] - slot_pre[m])
                else:
                    v = 0.5 * (slot_post[m] + cpost)
                lo_slot = slot_members_lo[m]
                cpre = v
                cpost = v
            slot_pre[m] = cpre
            slot_post[m] = cpost
            slot_members_lo[m] = lo_slot
            m += 1
        # remap: slot s covered old slots [members_lo[s], members_lo[s+1])
        for c in range(n):
            old = labels[c]
            for s in range(m):
                hi = slot_members_lo[s + 1] if s + 1 < m else k
                if slot_members_lo[s] <= old < hi:
                    labels[c] = s
                    break
        for s in range(m):
            pos[s] = slot_post[s]
        k = m
        old_i = coord[cov_i] if cov_i >= 0 else 0.0
        old_j = coord[cov_j] if cov_i >= 0 else 0.0
        for c in range(n):
            coord[c] = pos[labels[c]]
        if cov_i >= 0:
            realized += (coord[cov_i] - old_i) * (coord[cov_j] - old_j)
    cov_out[0] = realized
    cov_out[1] = predicted
    return k


@njit(cache=True, parallel=True)
def harris_smalln_ensemble(seeds, x0, n_steps, dt, beta, thr, marg_steps,
                           cov_i, cov_j, marg_out, cov_out, n_class_out):
    for r in prange(len(seeds)):
        n_class_out[r] = _harris_smalln_replica(
            seeds[r], x0, n_steps, dt, beta, thr, marg_steps,
            cov_i, cov_j, marg_out[r], cov_out[r])


@njit(cache=True, inline="always")
def _phi_lookup(tab, dx, x):
    a = abs(x)
    c = a / dx
    idx = int(c)
    if idx >= len(tab) - 1:
        return tab[len(tab) - 1]
    f = c - idx
    return tab[idx] * (1.0 - f) + tab[idx + 1] * f


@njit(cache=True)
def _smooth_smalln_replica(seed, x0, n_steps, dt, phi_tab, dx_tab, marg_steps,
                           cov_i, cov_j, occ_gap, marg_out, cov_out, diag_out):
    n = len(x0)
    pos = np.empty(n)
    inc = np.empty(n)
    chol = np.empty((n, n))
    g = np.empty((n, n))
    z = np.empty(n)
    for i in range(n):
        pos[i] = x0[i]
    rt = math.sqrt(dt)
    realized = 0.0
    predicted = 0.0
    occ = 0
    inversions = 0
    mq = 0
    np.random.seed(seed)
    for step in range(n_steps + 1):
        while mq < len(marg_steps) and marg_steps[mq] == step:
            for i in range(n):
                marg_out[mq, i] = pos[i]
            mq += 1
        if step == n_steps:
            break
        if cov_i >= 0:
            gap = abs(pos[cov_i] - pos[cov_j])
            predicted += _phi_lookup(phi_tab, dx_tab, gap) * dt
            if gap <= occ_gap:
                occ += 1
        for i in range(n):
            g[i, i] = 1.0
            for j in range(i):
                v = _phi_lookup(phi_tab, dx_tab, pos[i] - pos[j])
                if v > 1.0:
                    v = 1.0
                g[i, j] = v
                g[j, i] = v
        # in-place lower Cholesky with a tiny fixed jitter
        for i in range(n):
            for j in range(i + 1):
                acc = g[i, j]
                for m in range(j):
                    acc -= chol[i, m] * chol[j, m]
                if i == j:
                    chol[i, i] = math.sqrt(max(acc + 1e-12, 1e-18))
                else:
                    chol[i, j] = acc / chol[j, j]
        for i in range(n):
            z[i] = np.random.standard_normal()
        o_i = pos[cov_i] if cov_i >= 0 else 0.0
        o_j = pos[cov_j] if cov_i >= 0 else 0.0
        for i in range(n):
            acc = 0.0
            for m in range(i + 1):
                acc += chol[i, m] * z[m]
            inc[i] = rt * acc
        for i in range(n):
            pos[i] += inc[i]
        for i in range(1, n):
            if pos[i] < pos[i - 1]:
                inversions += 1
        if cov_i >= 0:
            realized += (pos[cov_i] - o_i) * (pos[cov_j] - o_j)
    cov_out[0] = realized
    cov_out[1] = predicted
    diag_out[0] = occ
    diag_out[1] = inversions
    return 0


@njit(cache=True, parallel=True)
def smooth_smalln_ensemble(seeds, x0, n_steps, dt, phi_tab, dx_tab, marg_steps,
                           cov_i, cov_j, occ_gap, marg_out, cov_out, diag_out):
    for r in prange(len(seeds)):
        _smooth_smalln_replica(
            seeds[r], x0, n_steps, dt, phi_tab, dx_tab, marg_steps,
            cov_i, cov_j, occ_gap, marg_out[r], cov_out[r], diag_out[r])
