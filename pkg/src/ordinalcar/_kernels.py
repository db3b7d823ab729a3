"""Compiled Metropolis-within-Gibbs sweep.

Everything here works on plain arrays so that numba can compile it.  The
state is a tuple of arrays that are updated in place; scalar parameters live
in length-1 arrays.  Cached quantities (``kappa``, ``theta``, ``psi``,
``eta``) are kept consistent with the primary parameters after every
accepted move.

Update groups, in sweep order (indices into ``active`` and the acceptance
counters):

    0 cut points   1 alpha   2 phi   3 mixing   4 rho
    5 sigma        6 sigma_M 7 ire rows  8 ire mixing  9 sigma_Mtilde
"""

import numpy as np
from numba import njit

NUM_GROUPS = 10
GROUP_NAMES = (
    "cutpoints", "alpha", "phi", "mixing", "rho",
    "sigma", "sigma_M", "ire_phi", "ire_mixing", "sigma_Mtilde",
)
LOG_SCALE_MIN, LOG_SCALE_MAX = -12.0, 4.0


@njit(cache=True)
def seed(value):
    np.random.seed(value)


@njit(cache=True, inline="always")
def log_expit(x):
    if x >= 0.0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@njit(cache=True)
def logp_obs(y, eta, kappa_row, J):
    """log P(Y = y) for a single observation; y in 1..J."""
    if y == 1:
        return log_expit(kappa_row[0] + eta)
    if y == J:
        return log_expit(-(kappa_row[J - 2] + eta))
    a = kappa_row[y - 1] + eta
    b = kappa_row[y - 2] + eta
    return log_expit(a) + log_expit(-b) + np.log(-np.expm1(b - a))


@njit(cache=True)
def block_target(dim, scalar_target):
    if dim <= 1:
        return scalar_target
    if dim == 2:
        return 0.35
    if dim == 3:
        return 0.31
    if dim == 4:
        return 0.28
    return 0.234


@njit(cache=True, inline="always")
def adapt(log_scale, accepted, target, gamma):
    v = log_scale + gamma * ((1.0 if accepted else 0.0) - target)
    if v < LOG_SCALE_MIN:
        return LOG_SCALE_MIN
    if v > LOG_SCALE_MAX:
        return LOG_SCALE_MAX
    return v


@njit(cache=True)
def accept(log_ratio):
    if not np.isfinite(log_ratio):
        return False
    if log_ratio >= 0.0:
        return True
    return np.log(np.random.random()) < log_ratio


@njit(cache=True)
def kappa_from_delta(delta_row, out):
    cum = 0.0
    for j in range(delta_row.shape[0] - 1):
        cum += delta_row[j]
        c = min(max(cum, 1e-300), 1.0 - 1e-16)
        out[j] = np.log(c) - np.log1p(-c)


@njit(cache=True)
def delta_from_kappa(kappa_row, out):
    prev = 0.0
    J = out.shape[0]
    for j in range(J - 1):
        c = 1.0 / (1.0 + np.exp(-kappa_row[j]))
        out[j] = c - prev
        prev = c
    out[J - 1] = 1.0 - prev


@njit(cache=True)
def lcar_parts(col, nb_ptr, nb_idx):
    """Return (col' (D - W) col, col' col)."""
    q_lap = 0.0
    q_id = 0.0
    for m in range(col.shape[0]):
        x = col[m]
        q_id += x * x
        for e in range(nb_ptr[m], nb_ptr[m + 1]):
            j = nb_idx[e]
            if j > m:
                d = x - col[j]
                q_lap += d * d
    return q_lap, q_id


@njit(cache=True)
def rho_logdens(rho, q_lap, q_id, sigma2, eig):
    ld = 0.0
    for v in eig:
        ld += np.log(rho * v + 1.0 - rho)
    return 0.5 * ld - 0.5 * (rho * q_lap + (1.0 - rho) * q_id) / sigma2


# ----------------------------------------------------------------------------
# individual update groups


@njit(cache=True)
def update_cutpoints(data, st, ls, acc, att, adapting, gamma, scalar_target):
    y, cell, area, group, area_ptr, area_resp, grp_ptr, grp_resp, cell_ptr, cell_resp, area_w = data[:11]
    delta, kappa, eta = st[0], st[1], st[12]
    G, K, J = delta.shape
    dim = J - 1
    target = block_target(dim, scalar_target)
    u_new = np.empty(dim)
    d_new = np.empty(J)
    k_new = np.empty(dim)
    for g in range(G):
        for k in range(K):
            s = np.exp(ls[g, k])
            last = np.log(delta[g, k, J - 1])
            mx = 0.0
            for j in range(dim):
                u_new[j] = np.log(delta[g, k, j]) - last + s * np.random.standard_normal()
                if u_new[j] > mx:
                    mx = u_new[j]
            tot = np.exp(-mx)
            for j in range(dim):
                tot += np.exp(u_new[j] - mx)
            ok = True
            for j in range(dim):
                d_new[j] = np.exp(u_new[j] - mx) / tot
                if not d_new[j] > 0.0:
                    ok = False
            d_new[J - 1] = np.exp(-mx) / tot
            if not d_new[J - 1] > 0.0:
                ok = False
            accepted = False
            if ok:
                kappa_from_delta(d_new, k_new)
                for j in range(dim - 1):
                    if not k_new[j + 1] > k_new[j]:
                        ok = False
            if ok:
                # Jacobian of the additive log-ratio map: prod_j delta_j
                lr = 0.0
                for j in range(J):
                    lr += np.log(d_new[j]) - np.log(delta[g, k, j])
                for e in range(grp_ptr[g], grp_ptr[g + 1]):
                    i = grp_resp[e]
                    yi = y[i, k]
                    if yi == 0:
                        continue
                    lr += logp_obs(yi, eta[i, k], k_new, J) - logp_obs(yi, eta[i, k], kappa[g, k], J)
                accepted = accept(lr)
            if accepted:
                for j in range(J):
                    delta[g, k, j] = d_new[j]
                for j in range(dim):
                    kappa[g, k, j] = k_new[j]
            acc[0] += accepted
            att[0] += 1
            if adapting:
                ls[g, k] = adapt(ls[g, k], accepted, target, gamma)


@njit(cache=True)
def update_alpha(data, st, ls, acc, att, adapting, gamma, target):
    y, cell, area, group, area_ptr, area_resp, grp_ptr, grp_resp, cell_ptr, cell_resp = data[:10]
    kappa, alpha, eta = st[1], st[2], st[12]
    Z, K = alpha.shape
    J = kappa.shape[2] + 1
    for z in range(1, Z):
        for k in range(K):
            step = np.exp(ls[z, k]) * np.random.standard_normal()
            lr = 0.0
            for e in range(cell_ptr[z], cell_ptr[z + 1]):
                i = cell_resp[e]
                yi = y[i, k]
                if yi == 0:
                    continue
                g = group[i]
                lr += logp_obs(yi, eta[i, k] + step, kappa[g, k], J) - logp_obs(yi, eta[i, k], kappa[g, k], J)
            accepted = accept(lr)
            if accepted:
                alpha[z, k] += step
                for e in range(cell_ptr[z], cell_ptr[z + 1]):
                    eta[cell_resp[e], k] += step
            acc[1] += accepted
            att[1] += 1
            if adapting:
                ls[z, k] = adapt(ls[z, k], accepted, target, gamma)


@njit(cache=True)
def update_phi(data, graph, st, ls, acc, att, adapting, gamma, target, indep):
    y, cell, area, group, area_ptr, area_resp = data[:6]
    nb_ptr, nb_idx, degrees = graph[0], graph[1], graph[2]
    kappa, phi, mix, theta, rho, sigma, eta = st[1], st[3], st[4], st[5], st[6], st[7], st[12]
    M, K = phi.shape
    J = kappa.shape[2] + 1
    for k in range(K):
        r = rho[k]
        s2 = sigma[k] * sigma[k] if indep else 1.0
        for m in range(M):
            step = np.exp(ls[m, k]) * np.random.standard_normal()
            old = phi[m, k]
            new = old + step
            nbsum = 0.0
            for e in range(nb_ptr[m], nb_ptr[m + 1]):
                nbsum += phi[nb_idx[e], k]
            prec = r * degrees[m] + 1.0 - r
            lr = -(prec * (new * new - old * old) - 2.0 * r * nbsum * step) / (2.0 * s2)
            for e in range(area_ptr[m], area_ptr[m + 1]):
                i = area_resp[e]
                g = group[i]
                for l in range(K):
                    w = mix[k, l]
                    yi = y[i, l]
                    if w == 0.0 or yi == 0:
                        continue
                    lr += logp_obs(yi, eta[i, l] + step * w, kappa[g, l], J) - logp_obs(yi, eta[i, l], kappa[g, l], J)
            accepted = accept(lr)
            if accepted:
                phi[m, k] = new
                for l in range(K):
                    w = mix[k, l]
                    if w == 0.0:
                        continue
                    theta[m, l] += step * w
                    for e in range(area_ptr[m], area_ptr[m + 1]):
                        eta[area_resp[e], l] += step * w
            acc[2] += accepted
            att[2] += 1
            if adapting:
                ls[m, k] = adapt(ls[m, k], accepted, target, gamma)


@njit(cache=True)
def update_mixing(data, st, ls, acc, att, adapting, gamma, target):
    y, cell, area, group = data[:4]
    kappa, phi, mix, theta, scal, eta = st[1], st[3], st[4], st[5], st[8], st[12]
    K = mix.shape[0]
    n = y.shape[0]
    J = kappa.shape[2] + 1
    s2 = scal[0] * scal[0]
    for k in range(K):
        for l in range(K):
            step = np.exp(ls[k, l]) * np.random.standard_normal()
            old = mix[k, l]
            new = old + step
            lr = -(new * new - old * old) / (2.0 * s2)
            for i in range(n):
                yi = y[i, l]
                if yi == 0:
                    continue
                d = phi[area[i], k] * step
                g = group[i]
                lr += logp_obs(yi, eta[i, l] + d, kappa[g, l], J) - logp_obs(yi, eta[i, l], kappa[g, l], J)
            accepted = accept(lr)
            if accepted:
                mix[k, l] = new
                for m in range(phi.shape[0]):
                    theta[m, l] += phi[m, k] * step
                for i in range(n):
                    eta[i, l] += phi[area[i], k] * step
            acc[3] += accepted
            att[3] += 1
            if adapting:
                ls[k, l] = adapt(ls[k, l], accepted, target, gamma)


@njit(cache=True)
def update_rho(graph, st, ls, acc, att, adapting, gamma, target, indep):
    nb_ptr, nb_idx, degrees, eig = graph
    phi, rho, sigma = st[3], st[6], st[7]
    K = phi.shape[1]
    for k in range(K):
        s2 = sigma[k] * sigma[k] if indep else 1.0
        q_lap, q_id = lcar_parts(phi[:, k], nb_ptr, nb_idx)
        old = rho[k]
        v = np.log(old) - np.log1p(-old) + np.exp(ls[k]) * np.random.standard_normal()
        new = 1.0 / (1.0 + np.exp(-v))
        accepted = False
        if 0.0 < new < 1.0:
            lr = rho_logdens(new, q_lap, q_id, s2, eig) - rho_logdens(old, q_lap, q_id, s2, eig)
            lr += np.log(new) + np.log1p(-new) - np.log(old) - np.log1p(-old)
            accepted = accept(lr)
        if accepted:
            rho[k] = new
        acc[4] += accepted
        att[4] += 1
        if adapting:
            ls[k] = adapt(ls[k], accepted, target, gamma)


@njit(cache=True)
def _scale_step(old, log_step, count, sumsq, upper):
    """Log-scale RW for a scale with ``count`` N(0, s^2) children."""
    new = old * np.exp(log_step)
    if not (0.0 < new <= upper):
        return old, False
    lr = -count * (np.log(new) - np.log(old)) - 0.5 * sumsq * (1.0 / (new * new) - 1.0 / (old * old))
    lr += np.log(new) - np.log(old)
    if accept(lr):
        return new, True
    return old, False


@njit(cache=True)
def update_sigma(graph, st, ls, acc, att, adapting, gamma, target, upper):
    nb_ptr, nb_idx = graph[0], graph[1]
    phi, rho, sigma = st[3], st[6], st[7]
    M, K = phi.shape
    for k in range(K):
        q_lap, q_id = lcar_parts(phi[:, k], nb_ptr, nb_idx)
        quad = rho[k] * q_lap + (1.0 - rho[k]) * q_id
        step = np.exp(ls[k]) * np.random.standard_normal()
        sigma[k], accepted = _scale_step(sigma[k], step, M, quad, upper)
        acc[5] += accepted
        att[5] += 1
        if adapting:
            ls[k] = adapt(ls[k], accepted, target, gamma)


@njit(cache=True)
def update_matrix_scale(mat, scal, idx, ls, acc, att, slot, adapting, gamma, target, upper):
    sumsq = 0.0
    for v in mat.ravel():
        sumsq += v * v
    step = np.exp(ls[0]) * np.random.standard_normal()
    scal[idx], accepted = _scale_step(scal[idx], step, mat.size, sumsq, upper)
    acc[slot] += accepted
    att[slot] += 1
    if adapting:
        ls[0] = adapt(ls[0], accepted, target, gamma)


@njit(cache=True)
def update_ire_rows(data, st, ls, acc, att, adapting, gamma, scalar_target):
    y, cell, area, group = data[:4]
    kappa, iphi, imix, psi, eta = st[1], st[9], st[10], st[11], st[12]
    n, K = iphi.shape
    J = kappa.shape[2] + 1
    target = block_target(K, scalar_target)
    prop = np.empty(K)
    dpsi = np.empty(K)
    for i in range(n):
        s = np.exp(ls[i])
        lr = 0.0
        for k in range(K):
            prop[k] = iphi[i, k] + s * np.random.standard_normal()
            lr -= 0.5 * (prop[k] * prop[k] - iphi[i, k] * iphi[i, k])
        g = group[i]
        for l in range(K):
            d = 0.0
            for k in range(K):
                d += (prop[k] - iphi[i, k]) * imix[k, l]
            dpsi[l] = d
            yi = y[i, l]
            if yi == 0:
                continue
            lr += logp_obs(yi, eta[i, l] + d, kappa[g, l], J) - logp_obs(yi, eta[i, l], kappa[g, l], J)
        accepted = accept(lr)
        if accepted:
            for k in range(K):
                iphi[i, k] = prop[k]
                psi[i, k] += dpsi[k]
                eta[i, k] += dpsi[k]
        acc[7] += accepted
        att[7] += 1
        if adapting:
            ls[i] = adapt(ls[i], accepted, target, gamma)


@njit(cache=True)
def update_ire_mixing(data, st, ls, acc, att, adapting, gamma, target):
    y, cell, area, group = data[:4]
    kappa, scal, iphi, imix, psi, eta = st[1], st[8], st[9], st[10], st[11], st[12]
    n, K = iphi.shape
    J = kappa.shape[2] + 1
    s2 = scal[1] * scal[1]
    for k in range(K):
        for l in range(K):
            step = np.exp(ls[k, l]) * np.random.standard_normal()
            old = imix[k, l]
            new = old + step
            lr = -(new * new - old * old) / (2.0 * s2)
            for i in range(n):
                yi = y[i, l]
                if yi == 0:
                    continue
                g = group[i]
                lr += logp_obs(yi, eta[i, l] + iphi[i, k] * step, kappa[g, l], J) - logp_obs(yi, eta[i, l], kappa[g, l], J)
            accepted = accept(lr)
            if accepted:
                imix[k, l] = new
                for i in range(n):
                    psi[i, l] += iphi[i, k] * step
                    eta[i, l] += iphi[i, k] * step
            acc[8] += accepted
            att[8] += 1
            if adapting:
                ls[k, l] = adapt(ls[k, l], accepted, target, gamma)


@njit(cache=True)
def center(data, st):
    """Weighted zero-sum centering of Phi with exact cut-point compensation."""
    area_w = data[10]
    delta, kappa, phi, mix, theta, eta = st[0], st[1], st[3], st[4], st[5], st[12]
    M, K = phi.shape
    G = kappa.shape[0]
    total = 0.0
    for m in range(M):
        total += area_w[m]
    if total <= 0.0:
        return
    c = np.zeros(K)
    for k in range(K):
        s = 0.0
        for m in range(M):
            s += area_w[m] * phi[m, k]
        c[k] = s / total
    shift = np.zeros(K)
    for l in range(K):
        for k in range(K):
            shift[l] += c[k] * mix[k, l]
    for m in range(M):
        for k in range(K):
            phi[m, k] -= c[k]
        for l in range(K):
            theta[m, l] -= shift[l]
    for i in range(eta.shape[0]):
        for l in range(K):
            eta[i, l] -= shift[l]
    for g in range(G):
        for l in range(K):
            for j in range(kappa.shape[2]):
                kappa[g, l, j] += shift[l]
            delta_from_kappa(kappa[g, l], delta[g, l])
            # re-derive kappa from delta so both stay bit-consistent
            kappa_from_delta(delta[g, l], kappa[g, l])


@njit(cache=True)
def advance(num_iter, t0, burn_in, data, graph, st, ls, acc, att, active,
            variant, has_alpha, scalar_target, upper):
    """Run ``num_iter`` sweeps starting at iteration index ``t0``.

    ``ls`` holds the log proposal scales per update group; adaptation is
    Robbins-Monro on those, applied only while the iteration index is below
    ``burn_in``.
    """
    indep = variant == 0
    has_ire = variant == 2
    for t in range(t0, t0 + num_iter):
        adapting = t < burn_in
        gamma = 1.0 / (1.0 + t) ** 0.6
        if active[0]:
            update_cutpoints(data, st, ls[0], acc, att, adapting, gamma, scalar_target)
        if has_alpha and active[1]:
            update_alpha(data, st, ls[1], acc, att, adapting, gamma, scalar_target)
        if active[2]:
            update_phi(data, graph, st, ls[2], acc, att, adapting, gamma, scalar_target, indep)
        if not indep and active[3]:
            update_mixing(data, st, ls[3], acc, att, adapting, gamma, scalar_target)
        if active[4]:
            update_rho(graph, st, ls[4], acc, att, adapting, gamma, scalar_target, indep)
        if indep and active[5]:
            update_sigma(graph, st, ls[5], acc, att, adapting, gamma, scalar_target, upper)
        if not indep and active[6]:
            update_matrix_scale(st[4], st[8], 0, ls[6], acc, att, 6, adapting, gamma, scalar_target, upper)
        if has_ire:
            if active[7]:
                update_ire_rows(data, st, ls[7], acc, att, adapting, gamma, scalar_target)
            if active[8]:
                update_ire_mixing(data, st, ls[8], acc, att, adapting, gamma, scalar_target)
            if active[9]:
                update_matrix_scale(st[10], st[8], 1, ls[9], acc, att, 9, adapting, gamma, scalar_target, upper)
        center(data, st)


@njit(cache=True)
def pointwise_loglik(y, group, eta, kappa, out):
    """Fill ``out`` (n, K) with log P(y_ik); NaN where missing."""
    n, K = y.shape
    J = kappa.shape[2] + 1
    for i in range(n):
        g = group[i]
        for k in range(K):
            yi = y[i, k]
            if yi == 0:
                out[i, k] = np.nan
            else:
                out[i, k] = logp_obs(yi, eta[i, k], kappa[g, k], J)
