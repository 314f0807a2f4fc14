"""Relative point position encoding, attention pooling and the two-round LSAP block.

Round one attends over the ``s1`` nearest neighbors; round two re-gathers the
round-one output over every ``s2``-th neighbor of the same sorted table, which
reaches nearly as far as the full table at a fraction of the slots.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import MlpParams, Tensor, init_mlp
from .neighbors import NeighborTable, SplitSpec, split_first, split_stride
from .work import active_counter

RPPE_RAW_WIDTH = 10


def rppe_raw(positions, table: NeighborTable) -> np.ndarray:
    """Per (point, neighbor): ``p_i, p_j, p_i - p_j, |p_i - p_j|`` as a 10-vector."""
    pos = np.asarray(positions, dtype=np.float64)
    idx = table.indices
    if idx.shape[0] != pos.shape[0]:
        raise ValueError(f"table has {idx.shape[0]} rows for {pos.shape[0]} points")
    center = np.broadcast_to(pos[:, None, :], idx.shape + (3,))
    nbr = pos[idx]
    diff = center - nbr
    dist = np.sqrt((diff * diff).sum(axis=-1, keepdims=True))
    return np.concatenate([center, nbr, diff, dist], axis=-1)


def rppe(positions, table: NeighborTable, mlp: MlpParams) -> Tensor:
    raw = rppe_raw(positions, table).astype(ad._val(mlp.weight).dtype)
    return ad.linear_pointwise(Tensor(raw), mlp)


def attention_pool(features, f_con, params: dict) -> Tensor:
    """Softmax-weighted neighbor sum followed by an output MLP and a residual.

    ``params`` holds ``score``, ``value`` and ``out`` MLPs, plus ``shortcut``
    when the input and output widths differ.
    """
    f_con = ad.as_tensor(f_con)
    counter = active_counter()
    if counter is not None:
        counter.neighbor_slots += f_con.shape[0] * f_con.shape[1]
    scores = ad.softmax_neighbor_axis(ad.linear_pointwise(f_con, params["score"]))
    values = ad.linear_pointwise(f_con, params["value"])
    pooled = ad.reduce_sum_neighbor(ad.multiply(scores, values))
    out = ad.linear_pointwise(pooled, params["out"])
    shortcut = params.get("shortcut")
    skip = ad.linear_pointwise(features, shortcut) if shortcut is not None else ad.as_tensor(features)
    return ad.add(out, skip)


def attention_round(features, positions, table: NeighborTable, params: dict) -> Tensor:
    """Gather neighbor features, append their position encoding, attention-pool."""
    pe = rppe(positions, table, params["rppe"])
    gathered = ad.gather_rows(features, table)
    return attention_pool(features, ad.concat_channels(gathered, pe), params)


def lsap_block(features, positions, table: NeighborTable, spec: SplitSpec, params: dict) -> Tensor:
    spec.check(table.k)
    first = attention_round(features, positions, split_first(table, spec.s1), params["round1"])
    return attention_round(first, positions, split_stride(table, spec.s2), params["round2"])


def init_round_params(rng, d_in: int, d_out: int, dtype=np.float32) -> dict:
    # the position encoding matches the gathered feature width
    d_con = 2 * d_in
    params = {
        "rppe": init_mlp(rng, RPPE_RAW_WIDTH, d_in, dtype=dtype),
        "score": init_mlp(rng, d_con, d_con, activation="none", dtype=dtype),
        "value": init_mlp(rng, d_con, d_con, dtype=dtype),
        # residual branch starts silent: the block begins as its shortcut
        "out": init_mlp(rng, d_con, d_out, dtype=dtype, zero=True),
    }
    if d_in != d_out:
        params["shortcut"] = init_mlp(rng, d_in, d_out, activation="none", dtype=dtype)
    return params


def init_lsap_params(rng, d_in: int, d_out: int, dtype=np.float32) -> dict:
    return {
        "round1": init_round_params(rng, d_in, d_out, dtype),
        "round2": init_round_params(rng, d_out, d_out, dtype),
    }


def round_macs(n: int, slots: int, d_in: int, d_out: int) -> int:
    """Closed-form multiply-accumulates of one attention round built by ``init_round_params``."""
    d_con = 2 * d_in
    per_slot = RPPE_RAW_WIDTH * d_in + 2 * d_con * d_con
    macs = n * slots * per_slot + n * d_con * d_out
    if d_in != d_out:
        macs += n * d_in * d_out
    return macs
