"""Brute-force references.  Deliberately loop-based and independent of the
package's index structures."""

import math

import numpy as np


def cell(p, edge, shift=0.0):
    return tuple(math.floor((v + shift) / edge) for v in p)


def layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))


def mlp(x, fc1, fc2):
    return gelu(x @ fc1[0] + fc1[1]) @ fc2[0] + fc2[1]


def masked_attention(q, k, v, mask, heads):
    """Per-head, per-query loops over every key, skipping masked-out pairs."""
    nq, c = q.shape
    d = c // heads
    out = np.zeros((nq, c))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for i in range(nq):
            keys = [j for j in range(k.shape[0]) if mask[i][j]]
            scores = [float(q[i, sl] @ k[j, sl]) / math.sqrt(d) for j in keys]
            top = max(scores)
            w = [math.exp(s - top) for s in scores]
            z = sum(w)
            for wj, j in zip(w, keys):
                out[i, sl] += wj / z * v[j, sl]
    return out


def voxel_groups(coords, base, ratio, vox, shift=False):
    """List of voxel keys (window cell, voxel cell) and each point's voxel / window."""
    off = base / 2 if shift else 0.0
    win = [cell(p, ratio * base, off) for p in coords]
    key = [(w, cell(p, vox)) for w, p in zip(win, coords)]
    keys = sorted(set(key))
    return keys, [keys.index(k) for k in key], win


def lin(layer):
    w = layer.weight.data
    return w if layer.bias is None else (w, layer.bias.data)


def mga_branches(mga, feats, coords, base, ratio, vox, shift=False, phi_identity=False):
    """(fine, coarse) outputs recomputed from raw parameters with dense masks."""
    off = base / 2 if shift else 0.0
    f = layer_norm(feats, mga.ln_point.gain.data, mga.ln_point.bias.data)
    bwin = [cell(p, base, off) for p in coords]
    n = len(coords)
    mask = [[bwin[i] == bwin[j] for j in range(n)] for i in range(n)]
    fine = masked_attention(f @ mga.w2q.weight.data, f @ mga.w2k.weight.data, f @ mga.w2v.weight.data,
                            mask, mga.branch_heads)
    if mga.mode == "point_only":
        return fine, None
    keys, vid, win = voxel_groups(coords, base, ratio, vox, shift)
    tokens = np.zeros((len(keys), feats.shape[1]))
    for m in range(len(keys)):
        members = [i for i in range(n) if vid[i] == m]
        tokens[m] = sum(feats[i] for i in members) / len(members)
    if not phi_identity:
        tokens = mlp(tokens, lin(mga.phi.fc1), lin(mga.phi.fc2))
    t = layer_norm(tokens, mga.ln_voxel.gain.data, mga.ln_voxel.bias.data)
    vmask = [[win[i] == keys[m][0] for m in range(len(keys))] for i in range(n)]
    coarse = masked_attention(f @ mga.w1q.weight.data, t @ mga.w1k.weight.data, t @ mga.w1v.weight.data,
                              vmask, mga.branch_heads)
    return fine, coarse


def mga_output(mga, feats, coords, base, ratio, vox, shift=False):
    fine, coarse = mga_branches(mga, feats, coords, base, ratio, vox, shift)
    if coarse is None:
        mixed = fine
    elif mga.shunted == "sum":
        mixed = fine + coarse
    else:
        mixed = np.concatenate([fine, coarse], axis=1)
    if mga.out is not None:
        mixed = mixed @ mga.out.weight.data + mga.out.bias.data
    return mixed


def re_attention(gate, block_input, mga_out):
    logits = mlp(block_input, lin(gate.gamma.fc1), lin(gate.gamma.fc2))
    out = np.empty_like(mga_out)
    n, c = mga_out.shape
    d = c // gate.heads
    for i in range(n):
        for ch in range(c):
            out[i, ch] = mga_out[i, ch] / (1 + math.exp(-logits[i, ch // d]))
    return out
