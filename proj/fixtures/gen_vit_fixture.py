#!/usr/bin/env python3
# Regenerates vit_hand.json: a one-block, width-2 encoder on a 1x2 grayscale
# image with 1x1 patches, evaluated with plain numpy.
import json
import math
from pathlib import Path

import numpy as np

EPS = 1e-6


def ln(x, g, b):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return g * (x - mu) / math.sqrt(var + EPS) + b


def gelu(z):
    return 0.5 * z * (1.0 + math.erf(z / math.sqrt(2.0)))


def forward(w, pixels):
    proj = np.array(w["patch_projection"])
    tokens = [np.array(w["cls_token"])]
    for p in pixels:
        tokens.append(np.array([p]) @ proj + np.array(w["patch_bias"]))
    x = np.array(tokens) + np.array(w["pos_embedding"])
    blk = w["blocks"][0]
    A = lambda k: np.array(blk[k])
    a = np.array([ln(r, np.array(blk["ln1"]["gamma"]), np.array(blk["ln1"]["beta"])) for r in x])
    q = a @ A("wq") + A("bq")
    k = a @ A("wk") + A("bk")
    v = a @ A("wv") + A("bv")
    s = q @ k.T / math.sqrt(q.shape[1])
    s = np.exp(s - s.max(axis=1, keepdims=True))
    s /= s.sum(axis=1, keepdims=True)
    act = x + (s @ v) @ A("wo") + A("bo")
    out = []
    for r in act:
        m = ln(r, np.array(blk["ln2"]["gamma"]), np.array(blk["ln2"]["beta"]))
        u = m @ A("w1") + A("b1")
        h = np.array([gelu(z) for z in u])
        y = r + h @ A("w2") + A("b2")
        out.append(ln(y, np.array(w["norm"]["gamma"]), np.array(w["norm"]["beta"])))
    return act, np.array(out)


def main():
    ln_ = lambda g, b: {"gamma": g, "beta": b, "eps": EPS}
    weights = {
        "version": 1,
        "patch_size": 1,
        "num_heads": 1,
        "patch_projection": [[1.0, -0.5]],
        "patch_bias": [0.1, 0.0],
        "cls_token": [0.2, -0.3],
        "pos_embedding": [[0.0, 0.0], [0.05, -0.05], [-0.1, 0.1]],
        "mask_token": [0.0, 0.0],
        "blocks": [{
            "ln1": ln_([1.0, 0.5], [0.0, 0.1]),
            "wq": [[0.5, -0.25], [0.75, 1.0]],
            "wk": [[1.0, 0.0], [-0.5, 0.5]],
            "wv": [[0.3, 0.6], [-0.2, 0.4]],
            "wo": [[1.0, 0.2], [0.0, 0.8]],
            "bq": [0.0, 0.1], "bk": [0.05, 0.0], "bv": [0.0, -0.1], "bo": [0.01, 0.02],
            "ln2": ln_([0.9, 1.1], [0.0, -0.05]),
            "w1": [[0.4, -0.7], [0.2, 0.5]],
            "b1": [0.1, -0.1],
            "w2": [[0.6, -0.3], [0.25, 0.9]],
            "b2": [0.0, 0.05],
        }],
        "final_norm": True,
        "norm": ln_([1.2, 0.8], [0.1, -0.1]),
    }
    pixels = [0.25, 0.75]
    act, tokens = forward(weights, pixels)
    doc = {
        "version": 1,
        "encoder": weights,
        "image": {"height": 1, "width": 2, "channels": 1, "data": pixels},
        "expected": {"activations": act.tolist(), "tokens": tokens.tolist()},
    }
    Path(__file__).with_name("vit_hand.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
