"""Empirical extrinsic combination shared by the Stein-divergence denoisers."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateExtrinsicError
from .messages import MeanVarMessage

VAR_FLOOR = 1e-12


def empirical_extrinsic(inp: MeanVarMessage, post: np.ndarray, a: float,
                        power: float | None = None):
    """Return (c, extrinsic mean, extrinsic variance) for ext = c (post - a in).

    c is fitted against the input. Without ``power`` the variance uses the
    Gram-determinant form (|in|^2 |post|^2 - <in, post>^2) / (n |post - a in|^2) - v_in.
    With the known signal power P = |T|^2/n it uses
    P - c <post, in>/n + c a (P + v_in), which only scales errors in v_in by c a.
    Both are floored.
    """
    r = inp.mean
    d = post - a * r
    dd = float(np.vdot(d, d))
    rr = float(np.vdot(r, r))
    scale = max(rr, float(np.vdot(post, post)), 1e-300)
    if dd <= 1e-28 * scale:
        raise DegenerateExtrinsicError("post - a*in vanished; the extrinsic message is undefined")
    c = float(np.vdot(d, r)) / dd
    rp = float(np.vdot(r, post))
    pp = float(np.vdot(post, post))
    if power is None:
        v_ext = (rr * pp - rp * rp) / (r.size * dd) - inp.var
    else:
        v_ext = power - c * rp / r.size + c * a * (power + inp.var)
    return c, c * d, max(v_ext, VAR_FLOOR)
