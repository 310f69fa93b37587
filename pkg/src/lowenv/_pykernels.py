"""Pure numpy/Python implementations of the hot kernels.

These are the reference twins of ``_ckernels.pyx``; both must produce the
same numbers (the advection update bit for bit).
"""

import numpy as np

BACKEND = "python"


def upwind_advect(field, vx, vy, h, dts):
    """First-order upwind transport of one nodal field over the steps ``dts``.

    The upwind difference is the backward one where the velocity component
    is positive and the forward one otherwise; on the first/last node of an
    axis the only available (interior) one-sided difference is used.
    """
    f = np.array(field, dtype=np.float64, order="C")
    vx = np.asarray(vx, dtype=np.float64)
    vy = np.asarray(vy, dtype=np.float64)
    xpos = vx > 0
    ypos = vy > 0
    for dt in np.asarray(dts, dtype=np.float64):
        ex = (f[1:, :] - f[:-1, :]) / h
        ey = (f[:, 1:] - f[:, :-1]) / h
        bx = np.empty_like(f)
        fx = np.empty_like(f)
        bx[1:, :] = ex
        bx[0, :] = ex[0, :]
        fx[:-1, :] = ex
        fx[-1, :] = ex[-1, :]
        by = np.empty_like(f)
        fy = np.empty_like(f)
        by[:, 1:] = ey
        by[:, 0] = ey[:, 0]
        fy[:, :-1] = ey
        fy[:, -1] = ey[:, -1]
        dx = np.where(xpos, bx, fx)
        dy = np.where(ypos, by, fy)
        f = f - dt * (vx * dx + vy * dy)
    return f


def _clip(poly, vals, k, l, strict):
    """Sutherland-Hodgman clip of a polygon to {phi_k - phi_l <= 0} (``< 0`` if strict)."""
    out_p, out_v = [], []
    m = len(poly)
    for i in range(m):
        cp, cv = poly[i], vals[i]
        pp, pv = poly[i - 1], vals[i - 1]
        gc = cv[k] - cv[l]
        gp = pv[k] - pv[l]
        cin = gc < 0 if strict else gc <= 0
        pin = gp < 0 if strict else gp <= 0
        if cin != pin:
            t = gp / (gp - gc)
            out_p.append((pp[0] + t * (cp[0] - pp[0]), pp[1] + t * (cp[1] - pp[1])))
            out_v.append([a + t * (b - a) for a, b in zip(pv, cv)])
        if cin:
            out_p.append(cp)
            out_v.append(cv)
    return out_p, out_v


def _area(poly):
    s = 0.0
    m = len(poly)
    for i in range(m):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        s += x0 * y1 - x1 * y0
    return 0.5 * abs(s)


def cut_fractions(vals, tri, coords):
    """Area fraction of each phase inside each triangle, shape ``(ne, kappa)``.

    ``vals`` holds nodal level-function values ``(kappa, N)``.  On a triangle
    every field is the linear interpolant of its vertex values, so each
    phase occupies a convex polygon obtained by clipping the triangle with
    the half-planes ``phi_k <= phi_l`` (strict for ``l < k``, which gives
    ties to the lowest index).
    """
    vals = np.asarray(vals, dtype=np.float64)
    tri = np.asarray(tri)
    kappa = vals.shape[0]
    ne = tri.shape[0]
    out = np.zeros((ne, kappa))
    vlab = np.argmin(vals, axis=0)[tri]
    uniform = (vlab[:, 0] == vlab[:, 1]) & (vlab[:, 1] == vlab[:, 2])
    out[np.nonzero(uniform)[0], vlab[uniform, 0]] = 1.0
    for e in np.nonzero(~uniform)[0]:
        verts = [tuple(coords[v]) for v in tri[e]]
        vv = [list(vals[:, v]) for v in tri[e]]
        total = _area(verts)
        fr = np.zeros(kappa)
        for k in range(kappa):
            poly, pv = verts, vv
            for l in range(kappa):
                if l == k:
                    continue
                poly, pv = _clip(poly, pv, k, l, l < k)
                if len(poly) < 3:
                    break
            if len(poly) >= 3:
                fr[k] = _area(poly) / total
        out[e] = fr / fr.sum()
    return out
