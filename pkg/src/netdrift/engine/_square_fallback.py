"""Pure-numpy tick loop for square-loss simulation windows.

Same contract as the compiled kernel: advance one learner's weights through
a window of pre-drawn data, recording per-tick quadratic excess risk and
prediction/filtering squared errors against the optimizer trajectory.
Weights are updated in place; returns the in-window tick index of the first
divergence, or -1.
"""

import numpy as np

from .codes import CFG, CONSENSUS, DIFFUSION, THA

BACKEND_NAME = "python"

_LIMIT = 1e12


def run_square_window(variant, w, a1, a2, c, c_identity, a1_identity,
                      a2_identity, mu, feats, labels, wopt, r_h,
                      er_out, pred_out, filt_out):
    horizon = feats.shape[0]
    for t in range(horizon):
        h = feats[t]
        y = labels[t]
        wo = wopt[t]
        mu_t = mu[t]
        if variant == CFG:
            d = wo - w[0]
            pred_out[t, 0] = d @ d
            er_out[t, 0] = d @ r_h @ d
            resid = y - h @ w[0]
            w[0] += (2.0 * mu_t / h.shape[0]) * (resid @ h)
            d = wo - w[0]
            filt_out[t, 0] = d @ d
        elif variant == THA:
            wbar = w.mean(axis=0)
            d = wo - wbar
            pred_out[t, 0] = d @ d
            er_out[t, 0] = d @ r_h @ d
            resid = y - (h * w).sum(axis=1)
            w += (2.0 * mu_t) * resid[:, None] * h
            d = wo - w.mean(axis=0)
            filt_out[t, 0] = d @ d
        else:
            d = wo - w
            pred_out[t] = (d * d).sum(axis=1)
            er_out[t] = np.einsum("nj,jk,nk->n", d, r_h, d)
            if variant == CONSENSUS:
                resid = y - (h * w).sum(axis=1)
                w[:] = a1.T @ w + (2.0 * mu_t) * resid[:, None] * h
            else:  # DIFFUSION
                phi = w if a1_identity else a1.T @ w
                if c_identity:
                    resid = y - (h * phi).sum(axis=1)
                    psi = phi + (2.0 * mu_t) * resid[:, None] * h
                else:
                    resid = y[:, None] - h @ phi.T
                    psi = phi + (2.0 * mu_t) * ((c * resid).T @ h)
                w[:] = psi if a2_identity else a2.T @ psi
            d = wo - w
            filt_out[t] = (d * d).sum(axis=1)
        if not np.isfinite(w).all() or np.abs(w).max() > _LIMIT:
            return t
    return -1
