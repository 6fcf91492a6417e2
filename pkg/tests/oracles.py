"""Independent reference implementations used by the tests."""

import math

import numpy as np
from scipy import integrate


def brute_energy(state, params):
    """Energy by explicit loops over site pairs and the block definitions."""
    topo = params.topology
    V, N = state.shape
    disc = [voice.discrete for voice in topo.voices]
    e = 0.0
    for v in range(V):
        for n in range(N):
            z = state[v, n]
            if disc[v]:
                e += params.field(v)[int(z)]
            else:
                e += params.self_coefficient(v) * z * z + params.field(v) * z
    for blk in params.layout.blocks:
        if not blk.coupling:
            continue
        J = params.block(blk.key)
        for n in range(N - blk.offset):
            zl, zr = state[blk.left, n], state[blk.right, n + blk.offset]
            if disc[blk.left] and disc[blk.right]:
                e += J[int(zl), int(zr)]
            elif disc[blk.left]:
                e += J[int(zl)] * zr
            elif disc[blk.right]:
                e += zl * J[int(zr)]
            else:
                e += J * zl * zr
    return e


def precision_matrix(params, N):
    """Joint precision P and linear term h of an all-continuous model: E = y'Py/2 + h'y."""
    topo = params.topology
    V = topo.n_voices
    P = np.zeros((V * N, V * N))
    h = np.zeros(V * N)
    idx = lambda v, n: v * N + n
    for v in range(V):
        for n in range(N):
            P[idx(v, n), idx(v, n)] = 2 * params.self_coefficient(v)
            h[idx(v, n)] = params.field(v)
    for blk in params.layout.blocks:
        if not blk.coupling:
            continue
        for n in range(N - blk.offset):
            i, j = idx(blk.left, n), idx(blk.right, n + blk.offset)
            P[i, j] += params.block(blk.key)
            P[j, i] += params.block(blk.key)
    return P, h


def brute_force(seqs, topo):
    """Reference statistics by explicit loops over tunes and note positions."""
    out = {}
    V = topo.n_voices
    total_notes = sum(s.shape[1] for s in seqs)
    for v, voice in enumerate(topo.voices):
        if voice.discrete:
            for q in range(voice.Q):
                c = 0
                for s in seqs:
                    for n in range(s.shape[1]):
                        c += s[v, n] == q
                out[f"freq:v{v}:{q}"] = c / total_notes
        else:
            acc = 0.0
            for s in seqs:
                for n in range(s.shape[1]):
                    acc += s[v, n]
            mean = acc / total_notes
            ss = 0.0
            for s in seqs:
                for n in range(s.shape[1]):
                    ss += (s[v, n] - mean) ** 2
            out[f"mean:v{v}"] = mean
            out[f"sd:v{v}"] = math.sqrt(ss / total_notes)

    def pair(label, a, b, k):
        da, db = topo.voices[a].discrete, topo.voices[b].discrete
        count = sum(max(s.shape[1] - k, 0) for s in seqs)

        def mean_of(f):
            acc = 0.0
            for s in seqs:
                for n in range(s.shape[1] - k):
                    acc += f(s[a, n], s[b, n + k])
            return acc / count if count else math.nan

        if da and db:
            for i in range(topo.voices[a].Q):
                for j in range(topo.voices[b].Q):
                    out[f"{label}:{i}:{j}"] = mean_of(lambda x, y: float(x == i and y == j))
        elif da:
            for i in range(topo.voices[a].Q):
                out[f"{label}:{i}"] = mean_of(lambda x, y: y if x == i else 0.0)
        elif db:
            for j in range(topo.voices[b].Q):
                out[f"{label}:{j}"] = mean_of(lambda x, y: x if y == j else 0.0)
        else:
            out[label] = mean_of(lambda x, y: x * y)

    def kind(a, b):
        return ("d" if topo.voices[a].discrete else "c") + ("d" if topo.voices[b].discrete else "c")

    for v in range(V):
        for k in range(1, topo.k_hor + 1):
            pair(f"hor.{kind(v, v)}:v{v}:k{k}", v, v, k)
    for a in range(V):
        for b in range(a + 1, V):
            pair(f"vert.{kind(a, b)}:v{a}:v{b}", a, b, 0)
    for a in range(V):
        for b in range(V):
            if a != b:
                for k in range(1, topo.k_diag + 1):
                    pair(f"diag.{kind(a, b)}:v{a}:v{b}:k{k}", a, b, k)
    return out


def window_state(window_values, v, z):
    s = np.array(window_values, dtype=float)
    s[v, s.shape[1] // 2] = z
    return s


def reference_site_nll(params, window_values, v):
    """-log P(center of voice v | rest of window), normalized by enumeration or quadrature.

    Only energy differences matter, so the window's total energy serves as the
    unnormalized log weight of each candidate center value.
    """
    voice = params.topology.voices[v]
    z0 = window_values[v, window_values.shape[1] // 2]
    e0 = brute_energy(window_state(window_values, v, z0), params)
    if voice.discrete:
        es = np.array([brute_energy(window_state(window_values, v, q), params) for q in range(voice.Q)])
        m = es.min()
        return e0 - m + math.log(np.sum(np.exp(-(es - m))))
    a = params.self_coefficient(v)
    # energy is quadratic in z: find its minimum from three evaluations, then integrate around it
    e1 = brute_energy(window_state(window_values, v, z0 + 1.0), params)
    b = (e1 - e0) - a * (2 * z0 + 1)
    zmin = -b / (2 * a)
    emin = brute_energy(window_state(window_values, v, zmin), params)
    width = 12 / math.sqrt(2 * a)
    f = lambda z: math.exp(-(brute_energy(window_state(window_values, v, z), params) - emin))
    Z, _ = integrate.quad(f, zmin - width, zmin + width, epsabs=0, epsrel=1e-13, limit=200)
    return e0 - emin + math.log(Z)


def reference_loss(params, windows, l2=0.0):
    """Summed per-voice mean negative log conditionals plus the L2 penalty."""
    loss = 0.0
    for v in range(params.topology.n_voices):
        loss += np.mean([reference_site_nll(params, w, v) for w in windows.values])
    mask = params.layout.regularization_mask()
    return loss + l2 * float(params.theta[mask] @ params.theta[mask])


def central_differences(f, theta, h=1e-5):
    g = np.empty(theta.size)
    for i in range(theta.size):
        tp = np.array(theta)
        tm = np.array(theta)
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2 * h)
    return g
