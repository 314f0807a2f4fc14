"""Plain-numpy reference implementations used as test oracles."""

import numpy as np

SLOPE = 0.2


def mlp(x, p):
    z = x @ np.asarray(p.weight, dtype=np.float64) + np.asarray(p.bias, dtype=np.float64)
    return np.where(z > 0, z, SLOPE * z) if p.activation == "leaky_relu" else z


def attention(features, positions, idx, params):
    """One attention-pooling round over the neighbor rows ``idx``, point by point."""
    out = []
    for i in range(len(positions)):
        rows = []
        for j in idx[i]:
            d = positions[i] - positions[j]
            raw = np.concatenate([positions[i], positions[j], d, [np.sqrt(d @ d)]])
            rows.append(np.concatenate([features[j], mlp(raw, params["rppe"])]))
        con = np.array(rows)
        s = mlp(con, params["score"])
        e = np.exp(s - s.max(axis=0))
        w = e / e.sum(axis=0)
        pooled = (w * mlp(con, params["value"])).sum(axis=0)
        skip = mlp(features[i], params["shortcut"]) if "shortcut" in params else features[i]
        out.append(mlp(pooled, params["out"]) + skip)
    return np.array(out)


def double_attention(features, positions, idx, params):
    """Two full rounds over the whole table: the unsplit baseline."""
    first = attention(features, positions, idx, params["round1"])
    return attention(first, positions, idx, params["round2"])


def randomized(params, rng, spread=0.6):
    """Replace every weight and bias with uniform noise, including zero-initialized layers."""
    from lsnet import autodiff as ad

    return ad.map_params(params, lambda a: rng.uniform(-spread, spread, size=np.shape(a)))
