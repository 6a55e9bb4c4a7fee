"""Compiled inner loop of the RVO velocity selection."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_INF = np.inf


@njit(cache=True)
def _disc_ttc(px, py, vx, vy, radius):
    # time for a point leaving the origin with (vx, vy) to enter the disc of
    # `radius` centred at (px, py)
    a = vx * vx + vy * vy
    b = vx * px + vy * py
    c = px * px + py * py - radius * radius
    if c < 0.0:
        return 0.0 if b > 0.0 else _INF
    disc = b * b - a * c
    if b > 0.0 and disc > 0.0 and a > 0.0:
        return (b - math.sqrt(disc)) / a
    return _INF


@njit(cache=True)
def _segment_ttc(px, py, cx, cy, radius, ax, ay, bx, by):
    sx = bx - ax
    sy = by - ay
    length = math.sqrt(sx * sx + sy * sy)
    ux = sx / length
    uy = sy / length
    nx = -uy
    ny = ux
    wx = px - ax
    wy = py - ay
    h = wx * nx + wy * ny
    along = wx * ux + wy * uy
    vn = cx * nx + cy * ny
    vs = cx * ux + cy * uy
    sign = 1.0 if h >= 0.0 else -1.0
    gap = abs(h) - radius
    closing = -vn * sign
    t = _INF
    if gap < 0.0 and along >= 0.0 and along <= length:
        t = 0.0 if closing > 0.0 else _INF
    elif gap >= 0.0 and closing > 0.0:
        t_line = gap / closing
        hit_along = along + vs * t_line
        if hit_along >= 0.0 and hit_along <= length:
            t = t_line
    t = min(t, _disc_ttc(ax - px, ay - py, cx, cy, radius))
    t = min(t, _disc_ttc(bx - px, by - py, cx, cy, radius))
    return t


@njit(cache=True)
def select(
    p, v, v_pref, radius, horizon, max_speed,
    nb_p, nb_v, nb_r, nb_mask, nb_static, segs,
    dt, pattern, reciprocity, ttc_weight,
):
    batch = p.shape[0]
    n_nb = nb_p.shape[1]
    n_seg = segs.shape[0]
    n_pat = pattern.shape[0]
    out = np.empty((batch, 2))
    for b in range(batch):
        pvx = v_pref[b, 0]
        pvy = v_pref[b, 1]
        pref_norm = math.sqrt(pvx * pvx + pvy * pvy)
        if pref_norm > max_speed[b]:
            scale = max_speed[b] / pref_norm
            pvx *= scale
            pvy *= scale
            pref_norm *= scale

        active = False
        for j in range(n_nb):
            if nb_mask[b, j]:
                active = True
                break
        if not active and n_seg == 0:
            out[b, 0] = pvx
            out[b, 1] = pvy
            continue

        vx = v[b, 0]
        vy = v[b, 1]
        ex, ey = 1.0, 0.0
        v_norm = math.sqrt(vx * vx + vy * vy)
        if pref_norm > 0.0:
            ex = pvx / pref_norm
            ey = pvy / pref_norm
        elif v_norm > 0.0:
            ex = vx / v_norm
            ey = vy / v_norm
        qx = -ey
        qy = ex

        best_feasible = -1
        best_feasible_score = _INF
        best_safe = -1
        best_safe_score = _INF
        best_any = -1
        best_any_score = _INF
        best_x = np.empty(3)
        best_y = np.empty(3)
        for k in range(n_pat + 2):
            if k == 0:
                cx, cy = pvx, pvy
            elif k == 1:
                cx, cy = 0.0, 0.0
            else:
                ux = pattern[k - 2, 0]
                uy = pattern[k - 2, 1]
                cx = (ux * ex + uy * qx) * max_speed[b]
                cy = (ux * ey + uy * qy) * max_speed[b]

            ttc = _INF
            for j in range(n_nb):
                if not nb_mask[b, j]:
                    continue
                inv = 1.0 if nb_static[b, j] else 1.0 / reciprocity
                rvx = inv * cx - (inv - 1.0) * vx - nb_v[b, j, 0]
                rvy = inv * cy - (inv - 1.0) * vy - nb_v[b, j, 1]
                t = _disc_ttc(nb_p[b, j, 0] - p[b, 0], nb_p[b, j, 1] - p[b, 1], rvx, rvy, radius[b] + nb_r[b, j])
                if t < ttc:
                    ttc = t
            for m in range(n_seg):
                t = _segment_ttc(p[b, 0], p[b, 1], cx, cy, radius[b], segs[m, 0, 0], segs[m, 0, 1], segs[m, 1, 0], segs[m, 1, 1])
                if t < ttc:
                    ttc = t

            dx = cx - pvx
            dy = cy - pvy
            dist = math.sqrt(dx * dx + dy * dy)
            penalty = dist + ttc_weight / max(ttc, 1e-9)
            if ttc >= horizon[b] and dist < best_feasible_score:
                best_feasible_score = dist
                best_feasible = k
                best_x[0] = cx
                best_y[0] = cy
            if ttc >= dt and penalty < best_safe_score:
                best_safe_score = penalty
                best_safe = k
                best_x[1] = cx
                best_y[1] = cy
            if best_any < 0 or penalty < best_any_score:
                best_any_score = penalty
                best_any = k
                best_x[2] = cx
                best_y[2] = cy

        slot = 0 if best_feasible >= 0 else (1 if best_safe >= 0 else 2)
        out[b, 0] = best_x[slot]
        out[b, 1] = best_y[slot]
    return out
