"""Compiled inner loops for the lattice samplers.

All randomness is supplied by the caller as pre-drawn uniforms so that the
compiled code is a pure function of its inputs.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True, nogil=True)
def _union(parent, rank, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    if rank[ra] < rank[rb]:
        parent[ra] = rb
    elif rank[ra] > rank[rb]:
        parent[rb] = ra
    else:
        parent[rb] = ra
        rank[ra] += 1


@njit(cache=True, nogil=True)
def sw_sweeps(labels, height, width, k, p_bond, uniforms):
    """Apply ``uniforms.shape[0]`` Swendsen-Wang sweeps in place.

    ``labels`` is the flattened row-major image with values in 1..k.  Each
    row of ``uniforms`` holds 3*N draws: N for horizontal bonds, N for
    vertical bonds and N for cluster relabelling (one per component, in
    raster discovery order).
    """
    n = height * width
    parent = np.empty(n, dtype=np.int64)
    rank = np.empty(n, dtype=np.int64)
    newlab = np.empty(n, dtype=np.int64)
    for s in range(uniforms.shape[0]):
        u = uniforms[s]
        for i in range(n):
            parent[i] = i
            rank[i] = 0
            newlab[i] = 0
        for r in range(height):
            for c in range(width):
                i = r * width + c
                if c + 1 < width and labels[i] == labels[i + 1] and u[i] < p_bond:
                    _union(parent, rank, i, i + 1)
                if r + 1 < height and labels[i] == labels[i + width] and u[n + i] < p_bond:
                    _union(parent, rank, i, i + width)
        used = 0
        for i in range(n):
            root = _find(parent, i)
            if newlab[root] == 0:
                newlab[root] = 1 + int(u[2 * n + used] * k)
                if newlab[root] > k:
                    newlab[root] = k
                used += 1
            labels[i] = newlab[root]


@njit(cache=True, nogil=True)
def gibbs_sweeps(labels, height, width, alphabet, field, coupling, uniforms):
    """Raster-scan single-site Gibbs sweeps in place.

    Full conditional of pixel ``u`` taking value ``c``:
    ``field * c + coupling * #{v ~ u : z_v == c}``.  One uniform per site.
    """
    n = height * width
    nvals = alphabet.shape[0]
    logits = np.empty(nvals)
    for s in range(uniforms.shape[0]):
        u = uniforms[s]
        for r in range(height):
            for c in range(width):
                i = r * width + c
                top = -np.inf
                for a in range(nvals):
                    val = alphabet[a]
                    matches = 0
                    if c > 0 and labels[i - 1] == val:
                        matches += 1
                    if c + 1 < width and labels[i + 1] == val:
                        matches += 1
                    if r > 0 and labels[i - width] == val:
                        matches += 1
                    if r + 1 < height and labels[i + width] == val:
                        matches += 1
                    logits[a] = field * val + coupling * matches
                    if logits[a] > top:
                        top = logits[a]
                total = 0.0
                for a in range(nvals):
                    logits[a] = np.exp(logits[a] - top)
                    total += logits[a]
                target = u[i] * total
                acc = 0.0
                chosen = alphabet[nvals - 1]
                for a in range(nvals):
                    acc += logits[a]
                    if target < acc:
                        chosen = alphabet[a]
                        break
                labels[i] = chosen
    return n


@njit(cache=True, nogil=True)
def pair_matches(labels, height, width):
    total = 0
    for r in range(height):
        for c in range(width):
            i = r * width + c
            if c + 1 < width and labels[i] == labels[i + 1]:
                total += 1
            if r + 1 < height and labels[i] == labels[i + width]:
                total += 1
    return total


@njit(cache=True, nogil=True)
def enumerate_counts(k, height, width, alphabet, with_field, ncodes, base):
    """Histogram of statistic codes over all ``k**(height*width)`` images.

    Code is ``pairs`` (Potts) or ``(sum + n) * base + pairs`` (with field).
    Configurations are visited in odometer order.
    """
    n = height * width
    counts = np.zeros(ncodes, dtype=np.int64)
    digits = np.zeros(n, dtype=np.int64)
    z = np.empty(n, dtype=np.int64)
    total = 1
    for _ in range(n):
        total *= k
    for _ in range(total):
        for j in range(n):
            z[j] = alphabet[digits[j]]
        pairs = pair_matches(z, height, width)
        if with_field:
            counts[(z.sum() + n) * base + pairs] += 1
        else:
            counts[pairs] += 1
        j = 0
        while j < n:
            digits[j] += 1
            if digits[j] < k:
                break
            digits[j] = 0
            j += 1
    return counts
