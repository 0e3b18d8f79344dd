# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled replay kernels for the online-training inner loop.

Implements the same objective/gradient computation as the tape engine in
``cpsvuln.attack.engine`` for plants with a linear observation map,
fused into C loops with BLAS for the layer products.  The reduced form

    z   = e0 + a            with  e0 = y - h(x_pred)
    err = e0 - (H L) z

avoids materializing the state-space update; it is algebraically
identical to the tape graph.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm, dgemv

cnp.import_array()


cdef void _gemm_nn(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C, double beta) noexcept:
    # row-major C(m,n) = A(m,k) @ B(k,n) + beta*C
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0
    dgemm("N", "N", &n, &m, &k, &alpha, &B[0, 0], &n, &A[0, 0], &k, &beta, &C[0, 0], &n)


cdef void _gemm_tn(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C, double beta) noexcept:
    # row-major C(m,n) = A(k,m)^T @ B(k,n) + beta*C
    cdef int k = A.shape[0], m = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0
    dgemm("N", "T", &n, &m, &k, &alpha, &B[0, 0], &n, &A[0, 0], &m, &beta, &C[0, 0], &n)


cdef void _gemm_nt(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C, double beta) noexcept:
    # row-major C(m,n) = A(m,k) @ B(n,k)^T + beta*C
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[0]
    cdef double alpha = 1.0
    dgemm("T", "N", &n, &m, &k, &alpha, &B[0, 0], &k, &A[0, 0], &k, &beta, &C[0, 0], &n)


cdef double _row_cost_and_dout(
    double[::1] out_row, double[:, ::1] E0, double[:, :, ::1] HL, double[:, :, ::1] Sinv,
    double[::1] mask, double w, double delta, double eps, Py_ssize_t j,
    double[::1] z, double[::1] gz, double[::1] err, double[::1] dout_row,
) noexcept:
    """Per-step cost w*(g - delta*||err||) and its gradient w.r.t. the raw
    network output (before masking)."""
    cdef Py_ssize_t p = E0.shape[1], q, o
    cdef double g = 0.0, nrm = 0.0, acc, dz_q
    for q in range(p):
        z[q] = E0[j, q] + out_row[q] * mask[q]
    for q in range(p):
        acc = 0.0
        for o in range(p):
            acc += Sinv[j, q, o] * z[o]
        gz[q] = acc
        g += z[q] * acc
    for q in range(p):
        acc = 0.0
        for o in range(p):
            acc += HL[j, q, o] * z[o]
        err[q] = E0[j, q] - acc
        nrm += err[q] * err[q]
    nrm = sqrt(nrm + eps)
    cdef double dcoef = -delta * w / nrm
    for q in range(p):
        dz_q = 2.0 * w * gz[q]
        for o in range(p):
            dz_q -= HL[j, o, q] * (dcoef * err[o])
        dout_row[q] = dz_q * mask[q]
    return w * (g - delta * nrm)


def fnn_replay(list Ws, list bs, double[:, ::1] X, double[:, ::1] E0,
               double[:, :, ::1] HL, double[:, :, ::1] Sinv,
               double[::1] mask, double[::1] wgt, double delta, double eps,
               list dWs, list dbs):
    """Batched replay for the feedforward generator; returns the objective
    and accumulates parameter gradients into dWs/dbs."""
    cdef Py_ssize_t N = X.shape[0], p = E0.shape[1]
    cdef Py_ssize_t nlayers = len(Ws), i, j, q
    cdef double total = 0.0

    acts = [np.asarray(X)]
    cdef double[:, ::1] Zin, Zout, W
    cdef double[::1] b
    for i in range(nlayers):
        W = Ws[i]
        b = bs[i]
        Zin = acts[i]
        out_arr = np.empty((N, W.shape[1]))
        Zout = out_arr
        _gemm_nn(Zin, W, Zout, 0.0)
        for j in range(N):
            for q in range(W.shape[1]):
                Zout[j, q] += b[q]
        if i < nlayers - 1:
            for j in range(N):
                for q in range(W.shape[1]):
                    if Zout[j, q] < 0.0:
                        Zout[j, q] = 0.0
        acts.append(out_arr)

    cdef double[:, ::1] out = acts[nlayers]
    dout_arr = np.empty((N, p))
    cdef double[:, ::1] dout = dout_arr
    zbuf = np.empty(p)
    gzbuf = np.empty(p)
    errbuf = np.empty(p)
    cdef double[::1] z = zbuf, gz = gzbuf, err = errbuf
    for j in range(N):
        total += _row_cost_and_dout(out[j], E0, HL, Sinv, mask, wgt[j], delta, eps, j, z, gz, err, dout[j])

    # backward through the layers
    cdef double[:, ::1] dZ = dout, dZ_prev, dW, act_out, act_in
    cdef double[::1] db
    for i in range(nlayers - 1, -1, -1):
        W = Ws[i]
        dW = dWs[i]
        db = dbs[i]
        act_in = acts[i]
        if i < nlayers - 1:
            act_out = acts[i + 1]
            for j in range(N):
                for q in range(W.shape[1]):
                    if act_out[j, q] <= 0.0:
                        dZ[j, q] = 0.0
        _gemm_tn(act_in, dZ, dW, 0.0)
        for q in range(W.shape[1]):
            db[q] = 0.0
        for j in range(N):
            for q in range(W.shape[1]):
                db[q] += dZ[j, q]
        if i > 0:
            prev_arr = np.empty((N, W.shape[0]))
            dZ_prev = prev_arr
            _gemm_nt(dZ, W, dZ_prev, 0.0)
            dZ = dZ_prev
    return total


def dfnn_replay(list Ws, list bs, double[:, ::1] Wout, double[:, ::1] Yn,
                double[:, ::1] E0, double[:, :, ::1] HL, double[:, :, ::1] Sinv,
                double[::1] mask, double[::1] wgt, double delta, double eps,
                double[::1] r0, list dWs, list dbs, double[:, ::1] dWout):
    """Sequential replay for the latent generator: the latent chain is
    rebuilt from r0 under the current parameters, gradients via
    backpropagation through time.

    Parameters and activations are packed into flat buffers so the hot
    per-step loop runs without Python-level indexing."""
    cdef Py_ssize_t N = Yn.shape[0], p = Yn.shape[1]
    cdef Py_ssize_t l = Wout.shape[0], nlayers = len(Ws)
    cdef Py_ssize_t i, j, q, k
    cdef double total = 0.0, acc

    sizes = [np.asarray(Ws[0]).shape[0]] + [np.asarray(Ws[i]).shape[1] for i in range(nlayers)]
    cdef Py_ssize_t[::1] dims = np.asarray(sizes, dtype=np.intp)
    # flat parameter/gradient buffers with per-layer offsets
    wflat_arr = np.concatenate([np.asarray(W).ravel() for W in Ws])
    bflat_arr = np.concatenate([np.asarray(b) for b in bs])
    cdef double[::1] wflat = wflat_arr, bflat = bflat_arr
    dwflat_arr = np.zeros_like(wflat_arr)
    dbflat_arr = np.zeros_like(bflat_arr)
    cdef double[::1] dwflat = dwflat_arr, dbflat = dbflat_arr
    woff_arr = np.zeros(nlayers + 1, dtype=np.intp)
    boff_arr = np.zeros(nlayers + 1, dtype=np.intp)
    aoff_arr = np.zeros(nlayers + 2, dtype=np.intp)
    cdef Py_ssize_t[::1] woff = woff_arr, boff = boff_arr, aoff = aoff_arr
    for i in range(nlayers):
        woff[i + 1] = woff[i] + dims[i] * dims[i + 1]
        boff[i + 1] = boff[i] + dims[i + 1]
    for i in range(nlayers + 1):
        aoff[i + 1] = aoff[i] + dims[i]
    cdef Py_ssize_t awidth = aoff[nlayers + 1]

    # activations for every step (needed for BPTT), flat rows
    acts_arr = np.empty((N, awidth))
    cdef double[:, ::1] acts = acts_arr
    zs_arr = np.empty((N, p))
    gzs_arr = np.empty((N, p))
    errs_arr = np.empty((N, p))
    nrms_arr = np.empty(N)
    cdef double[:, ::1] zs = zs_arr, gzs = gzs_arr, errs = errs_arr
    cdef double[::1] nrms = nrms_arr
    arow_arr = np.empty(p)
    cdef double[::1] arow = arow_arr
    cdef double nrm, g_val
    cdef int one = 1, din_i, dout_i
    cdef double alpha = 1.0, beta0 = 0.0
    cdef Py_ssize_t rbase = aoff[nlayers]  # latent (output) column offset

    # forward pass over steps
    for j in range(N):
        for q in range(p):
            acts[j, q] = Yn[j, q]
        if j == 0:
            for q in range(l):
                acts[j, p + q] = r0[q]
        else:
            for q in range(l):
                acts[j, p + q] = acts[j - 1, rbase + q]
        for i in range(nlayers):
            din_i = <int> dims[i]
            dout_i = <int> dims[i + 1]
            dgemv("N", &dout_i, &din_i, &alpha, &wflat[woff[i]], &dout_i,
                  &acts[j, aoff[i]], &one, &beta0, &acts[j, aoff[i + 1]], &one)
            if i < nlayers - 1:
                for q in range(dout_i):
                    acc = acts[j, aoff[i + 1] + q] + bflat[boff[i] + q]
                    acts[j, aoff[i + 1] + q] = acc if acc > 0.0 else 0.0
            else:
                for q in range(dout_i):
                    acts[j, aoff[i + 1] + q] += bflat[boff[i] + q]
        # attack, residue, cost terms
        for q in range(p):
            acc = 0.0
            for k in range(l):
                acc += acts[j, rbase + k] * Wout[k, q]
            arow[q] = acc * mask[q]
            zs[j, q] = E0[j, q] + arow[q]
        g_val = 0.0
        for q in range(p):
            acc = 0.0
            for k in range(p):
                acc += Sinv[j, q, k] * zs[j, k]
            gzs[j, q] = acc
            g_val += zs[j, q] * acc
        nrm = 0.0
        for q in range(p):
            acc = 0.0
            for k in range(p):
                acc += HL[j, q, k] * zs[j, k]
            errs[j, q] = E0[j, q] - acc
            nrm += errs[j, q] * errs[j, q]
        nrms[j] = sqrt(nrm + eps)
        total += wgt[j] * (g_val - delta * nrms[j])

    # backward pass (reverse time)
    da_arr = np.empty(p)
    dr_arr = np.zeros(l)
    dcur_arr = np.empty(awidth)
    dprev_arr = np.empty(awidth)
    cdef double[::1] da = da_arr, dr_carry = dr_arr, dcur = dcur_arr, dprev = dprev_arr
    cdef double w, dcoef, dz_q
    for j in range(N - 1, -1, -1):
        w = wgt[j]
        dcoef = -delta * w / nrms[j]
        for q in range(p):
            dz_q = 2.0 * w * gzs[j, q]
            for k in range(p):
                dz_q -= HL[j, k, q] * (dcoef * errs[j, k])
            da[q] = dz_q * mask[q]
        # read-out gradient and latent gradient
        for k in range(l):
            acc = 0.0
            for q in range(p):
                dWout[k, q] += acts[j, rbase + k] * da[q]
                acc += Wout[k, q] * da[q]
            dcur[k] = acc + dr_carry[k]
        # backprop through the latent network for this step
        for i in range(nlayers - 1, -1, -1):
            din_i = <int> dims[i]
            dout_i = <int> dims[i + 1]
            if i < nlayers - 1:
                for q in range(dout_i):
                    if acts[j, aoff[i + 1] + q] <= 0.0:
                        dcur[q] = 0.0
            for k in range(din_i):
                acc = acts[j, aoff[i] + k]
                for q in range(dout_i):
                    dwflat[woff[i] + k * dout_i + q] += acc * dcur[q]
            for q in range(dout_i):
                dbflat[boff[i] + q] += dcur[q]
            # dprev(din) = W(din,dout) @ dcur(dout)
            dgemv("T", &dout_i, &din_i, &alpha, &wflat[woff[i]], &dout_i,
                  &dcur[0], &one, &beta0, &dprev[0], &one)
            for k in range(din_i):
                dcur[k] = dprev[k]
        for k in range(l):
            dr_carry[k] = dcur[p + k]

    # unpack flat gradients into the caller's per-layer arrays
    for i in range(nlayers):
        gw = np.asarray(dWs[i])
        gw += dwflat_arr[woff[i]:woff[i + 1]].reshape(gw.shape)
        gb = np.asarray(dbs[i])
        gb += dbflat_arr[boff[i]:boff[i + 1]]
    return total
