"""Hot simulation kernels: box-box contacts and the stepping loop.

All functions here are compiled with numba unless STACKPUSH_NUMBA=0, in
which case the same source runs interpreted (see stackpush._accel). The
solver is a warm-started sequential-impulse scheme with Coulomb friction
and a non-linear Gauss-Seidel positional pass; contact points come from a
SAT + face-clipping narrowphase over oriented boxes. Iteration order is
fixed everywhere so a given (world, schedule) pair replays bit-identically.
"""

import numpy as np

from .._accel import maybe_njit

DT = 1.0 / 120.0
VEL_ITERS = 10
POS_ITERS = 3
ANGULAR_DAMPING = 0.995  # per-step rotational drag; drains rocking modes
REST_DAMPING = 0.9       # applied only after 12 consecutive near-rest steps
SLOP = 0.002
BAUMGARTE = 0.2
MAX_CORRECTION = 0.05
SLEEP_LIN2 = 1.0e-4     # (0.01 u/s)^2
SLEEP_ANG = 0.05
SLEEP_STEPS = 30        # 0.25 s at 1/120
WAKE_SPEED2 = 2.5e-3    # (0.05 u/s)^2
SPEED_CAP = 10.0
BLOWUP_SPEED = 100.0
QUIESCENT_SPEED2 = 1.0e-6
AABB_MARGIN = 0.1

STATUS_QUIESCENT = 0
STATUS_CAP = 1
STATUS_FAULT = 2

# narrowphase axis tolerance (prefer a coherent reference face)
_REL_TOL = 0.95
_ABS_TOL = 0.01
# keep slightly-separated points so manifolds (and warm starts) persist
CONTACT_MARGIN = 0.01


@maybe_njit
def _clip_segment(x0, y0, f0, x1, y1, f1, nx, ny, offset, clip_edge):
    """Clip a 2-point segment against the half-plane n.p <= offset.

    Returns (count, ax, ay, af, bx, by, bf). Feature bookkeeping follows
    the classic (in-edge, out-edge) per-box scheme packed in an int.
    """
    d0 = nx * x0 + ny * y0 - offset
    d1 = nx * x1 + ny * y1 - offset
    n_out = 0
    ax = ay = bx = by = 0.0
    af = np.int64(0)
    bf = np.int64(0)
    if d0 <= 0.0:
        ax, ay, af = x0, y0, f0
        n_out = 1
    if d1 <= 0.0:
        if n_out == 0:
            ax, ay, af = x1, y1, f1
        else:
            bx, by, bf = x1, y1, f1
        n_out += 1
    if d0 * d1 < 0.0:
        t = d0 / (d0 - d1)
        cx = x0 + t * (x1 - x0)
        cy = y0 + t * (y1 - y0)
        if d0 > 0.0:
            f = (f0 & ~np.int64(0x07)) | np.int64(clip_edge)  # in1 = clip edge
            f = f & ~np.int64(0x1C0)                          # in2 cleared
        else:
            f = (f1 & ~np.int64(0x38)) | (np.int64(clip_edge) << 3)
            f = f & ~np.int64(0xE00)                          # out2 cleared
        if n_out == 0:
            ax, ay, af = cx, cy, f
        else:
            bx, by, bf = cx, cy, f
        n_out += 1
    return n_out, ax, ay, af, bx, by, bf


@maybe_njit
def _incident_edge(hx, hy, px, py, c, s, nx, ny):
    """Two vertices of the incident box edge most anti-parallel to the
    reference normal, with per-vertex feature codes (in2/out2 slots)."""
    # reference normal in incident frame, negated
    lnx = -(c * nx + s * ny)
    lny = -(-s * nx + c * ny)
    if abs(lnx) > abs(lny):
        if lnx > 0.0:
            x0, y0, f0 = hx, -hy, np.int64((3 << 6) | (4 << 9))
            x1, y1, f1 = hx, hy, np.int64((4 << 6) | (1 << 9))
        else:
            x0, y0, f0 = -hx, hy, np.int64((1 << 6) | (2 << 9))
            x1, y1, f1 = -hx, -hy, np.int64((2 << 6) | (3 << 9))
    else:
        if lny > 0.0:
            x0, y0, f0 = hx, hy, np.int64((4 << 6) | (1 << 9))
            x1, y1, f1 = -hx, hy, np.int64((1 << 6) | (2 << 9))
        else:
            x0, y0, f0 = -hx, -hy, np.int64((2 << 6) | (3 << 9))
            x1, y1, f1 = hx, -hy, np.int64((3 << 6) | (4 << 9))
    wx0 = px + c * x0 - s * y0
    wy0 = py + s * x0 + c * y0
    wx1 = px + c * x1 - s * y1
    wy1 = py + s * x1 + c * y1
    return wx0, wy0, f0, wx1, wy1, f1


@maybe_njit
def collide_boxes(pax, pay, ca, sa, hax, hay, pbx, pby, cb, sb, hbx, hby,
                  out_px, out_py, out_sep, out_feat):
    """Contact points between two oriented boxes.

    Writes up to two points into the out arrays and returns
    (count, normal_x, normal_y) with the normal pointing from A to B.
    """
    dx = pbx - pax
    dy = pby - pay
    # d in A frame / B frame
    dax = ca * dx + sa * dy
    day = -sa * dx + ca * dy
    dbx = cb * dx + sb * dy
    dby = -sb * dx + cb * dy
    # C = R_A^T R_B, column-major entries
    c00 = ca * cb + sa * sb
    c01 = ca * (-sb) + sa * cb
    c10 = -sa * cb + ca * sb
    c11 = sa * sb + ca * cb
    a00 = abs(c00)
    a01 = abs(c01)
    a10 = abs(c10)
    a11 = abs(c11)

    face_ax = abs(dax) - hax - (a00 * hbx + a01 * hby)
    face_ay = abs(day) - hay - (a10 * hbx + a11 * hby)
    if face_ax > CONTACT_MARGIN or face_ay > CONTACT_MARGIN:
        return 0, 0.0, 0.0
    face_bx = abs(dbx) - hbx - (a00 * hax + a10 * hay)
    face_by = abs(dby) - hby - (a01 * hax + a11 * hay)
    if face_bx > CONTACT_MARGIN or face_by > CONTACT_MARGIN:
        return 0, 0.0, 0.0

    # choose reference face (0: A-x, 1: A-y, 2: B-x, 3: B-y)
    axis = 0
    sep = face_ax
    if dax > 0.0:
        nx, ny = ca, sa
    else:
        nx, ny = -ca, -sa
    if face_ay > _REL_TOL * sep + _ABS_TOL * hay:
        axis = 1
        sep = face_ay
        if day > 0.0:
            nx, ny = -sa, ca
        else:
            nx, ny = sa, -ca
    if face_bx > _REL_TOL * sep + _ABS_TOL * hbx:
        axis = 2
        sep = face_bx
        if dbx > 0.0:
            nx, ny = cb, sb
        else:
            nx, ny = -cb, -sb
    if face_by > _REL_TOL * sep + _ABS_TOL * hby:
        axis = 3
        sep = face_by
        if dby > 0.0:
            nx, ny = -sb, cb
        else:
            nx, ny = sb, -cb

    if axis == 0:
        fnx, fny = nx, ny
        front = pax * fnx + pay * fny + hax
        snx, sny = -sa, ca
        side = pax * snx + pay * sny
        neg_side = -side + hay
        pos_side = side + hay
        neg_edge, pos_edge = 3, 1
        iv0x, iv0y, if0, iv1x, iv1y, if1 = _incident_edge(
            hbx, hby, pbx, pby, cb, sb, fnx, fny)
    elif axis == 1:
        fnx, fny = nx, ny
        front = pax * fnx + pay * fny + hay
        snx, sny = ca, sa
        side = pax * snx + pay * sny
        neg_side = -side + hax
        pos_side = side + hax
        neg_edge, pos_edge = 2, 4
        iv0x, iv0y, if0, iv1x, iv1y, if1 = _incident_edge(
            hbx, hby, pbx, pby, cb, sb, fnx, fny)
    elif axis == 2:
        fnx, fny = -nx, -ny
        front = pbx * fnx + pby * fny + hbx
        snx, sny = -sb, cb
        side = pbx * snx + pby * sny
        neg_side = -side + hby
        pos_side = side + hby
        neg_edge, pos_edge = 3, 1
        iv0x, iv0y, if0, iv1x, iv1y, if1 = _incident_edge(
            hax, hay, pax, pay, ca, sa, fnx, fny)
    else:
        fnx, fny = -nx, -ny
        front = pbx * fnx + pby * fny + hby
        snx, sny = cb, sb
        side = pbx * snx + pby * sny
        neg_side = -side + hbx
        pos_side = side + hbx
        neg_edge, pos_edge = 2, 4
        iv0x, iv0y, if0, iv1x, iv1y, if1 = _incident_edge(
            hax, hay, pax, pay, ca, sa, fnx, fny)

    n1, x0, y0, f0, x1, y1, f1 = _clip_segment(
        iv0x, iv0y, if0, iv1x, iv1y, if1, -snx, -sny, neg_side, neg_edge)
    if n1 < 2:
        return 0, 0.0, 0.0
    n2, x0, y0, f0, x1, y1, f1 = _clip_segment(
        x0, y0, f0, x1, y1, f1, snx, sny, pos_side, pos_edge)
    if n2 < 2:
        return 0, 0.0, 0.0

    count = 0
    for i in range(2):
        if i == 0:
            px_, py_, feat = x0, y0, f0
        else:
            px_, py_, feat = x1, y1, f1
        separation = fnx * px_ + fny * py_ - front
        if separation <= CONTACT_MARGIN:
            out_sep[count] = separation
            out_px[count] = px_ - separation * fnx
            out_py[count] = py_ - separation * fny
            if axis >= 2:
                # flip in/out pairs so features are expressed as (A, B)
                in1 = feat & 0x07
                out1 = (feat >> 3) & 0x07
                in2 = (feat >> 6) & 0x07
                out2 = (feat >> 9) & 0x07
                feat = in2 | (out2 << 3) | (in1 << 6) | (out1 << 9)
            out_feat[count] = feat
            count += 1
    return count, nx, ny


@maybe_njit
def obb_overlap(pax, pay, aa, hax, hay, pbx, pby, ab, hbx, hby):
    """SAT overlap test for two oriented boxes (no contact details)."""
    ca, sa = np.cos(aa), np.sin(aa)
    cb, sb = np.cos(ab), np.sin(ab)
    dx = pbx - pax
    dy = pby - pay
    dax = ca * dx + sa * dy
    day = -sa * dx + ca * dy
    dbx = cb * dx + sb * dy
    dby = -sb * dx + cb * dy
    c00 = ca * cb + sa * sb
    c01 = ca * (-sb) + sa * cb
    c10 = -sa * cb + ca * sb
    c11 = sa * sb + ca * cb
    a00, a01, a10, a11 = abs(c00), abs(c01), abs(c10), abs(c11)
    if abs(dax) - hax - (a00 * hbx + a01 * hby) > 0.0:
        return False
    if abs(day) - hay - (a10 * hbx + a11 * hby) > 0.0:
        return False
    if abs(dbx) - hbx - (a00 * hax + a10 * hay) > 0.0:
        return False
    if abs(dby) - hby - (a01 * hax + a11 * hay) > 0.0:
        return False
    return True


@maybe_njit
def footprint_clear(x, y, foot, boxes):
    """True iff no footprint box (offsets relative to (x, y)) overlaps any
    obstacle box. foot rows: (ox, oy, hw, hh); boxes rows: (cx, cy, angle,
    hw, hh)."""
    for i in range(foot.shape[0]):
        fx = x + foot[i, 0]
        fy = y + foot[i, 1]
        for j in range(boxes.shape[0]):
            if obb_overlap(fx, fy, 0.0, foot[i, 2], foot[i, 3],
                           boxes[j, 0], boxes[j, 1], boxes[j, 2],
                           boxes[j, 3], boxes[j, 4]):
                return False
    return True


@maybe_njit
def segment_clear(ax, ay, bx, by, foot, boxes, spacing):
    """Sampled collision check of a straight segment."""
    dist = np.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
    n = int(dist / spacing) + 2
    for k in range(n + 1):
        t = k / n
        if not footprint_clear(ax + t * (bx - ax), ay + t * (by - ay),
                               foot, boxes):
            return False
    return True


WARM_MATCH_TOL2 = 0.05 * 0.05  # contact points this close carry impulses over


@maybe_njit
def run_segment(pos, angle, vel, omega, inv_m, inv_i,
                sleep_cnt, asleep,
                body_of, off, half, can_collide,
                warm_key, warm_pt_xy, warm_imp, n_warm,
                sched, grip_body, attach_body,
                gravity, friction, settle_max_steps, dt):
    """Advance the world through a gripper velocity schedule plus settling.

    sched is (m, 2): per-step gripper velocity. After the schedule the world
    keeps stepping (gripper stopped) until every dynamic body sleeps or the
    settle budget runs out. Returns (status, steps_done, n_warm).
    """
    nb = pos.shape[0]
    ns = body_of.shape[0]
    m = sched.shape[0]

    max_pairs = ns * (ns - 1) // 2
    maxc = 2 * max_pairs
    # contact scratch
    c_sa = np.empty(maxc, dtype=np.int64)
    c_sb = np.empty(maxc, dtype=np.int64)
    c_px = np.empty(maxc)
    c_py = np.empty(maxc)
    c_nx = np.empty(maxc)
    c_ny = np.empty(maxc)
    c_sep = np.empty(maxc)
    c_feat = np.empty(maxc, dtype=np.int64)
    c_pn = np.empty(maxc)
    c_pt = np.empty(maxc)
    c_mn = np.empty(maxc)
    c_mt = np.empty(maxc)
    aabb = np.empty((ns, 4))
    sx = np.empty(ns)
    sy = np.empty(ns)
    sc = np.empty(ns)
    ss = np.empty(ns)
    two_px = np.empty(2)
    two_py = np.empty(2)
    two_sep = np.empty(2)
    two_feat = np.empty(2, dtype=np.int64)
    island = np.empty(nb, dtype=np.int64)
    ready = np.empty(nb, dtype=np.bool_)

    steps_done = 0
    status = STATUS_CAP
    total_steps = m + settle_max_steps
    for t in range(total_steps):
        # kinematic drive
        if t < m:
            vel[grip_body, 0] = sched[t, 0]
            vel[grip_body, 1] = sched[t, 1]
        else:
            vel[grip_body, 0] = 0.0
            vel[grip_body, 1] = 0.0
        if attach_body >= 0:
            vel[attach_body, 0] = vel[grip_body, 0]
            vel[attach_body, 1] = vel[grip_body, 1]
            omega[attach_body] = 0.0

        # gravity + caps; bodies hovering near rest get squeezed to sleep
        fault = False
        for b in range(nb):
            if inv_m[b] > 0.0 and not asleep[b]:
                vel[b, 1] -= gravity * dt
                omega[b] *= ANGULAR_DAMPING
                if sleep_cnt[b] >= SLEEP_STEPS // 3:
                    vel[b, 0] *= REST_DAMPING
                    vel[b, 1] *= REST_DAMPING
                    omega[b] *= REST_DAMPING
            v2 = vel[b, 0] ** 2 + vel[b, 1] ** 2
            if v2 > BLOWUP_SPEED * BLOWUP_SPEED:
                fault = True
            if v2 > SPEED_CAP * SPEED_CAP:
                scale = SPEED_CAP / np.sqrt(v2)
                vel[b, 0] *= scale
                vel[b, 1] *= scale
        if fault:
            status = STATUS_FAULT
            break

        # shape world transforms + AABBs
        for sidx in range(ns):
            b = body_of[sidx]
            cb_ = np.cos(angle[b])
            sb_ = np.sin(angle[b])
            cx = pos[b, 0] + cb_ * off[sidx, 0] - sb_ * off[sidx, 1]
            cy = pos[b, 1] + sb_ * off[sidx, 0] + cb_ * off[sidx, 1]
            ex = abs(cb_) * half[sidx, 0] + abs(sb_) * half[sidx, 1]
            ey = abs(sb_) * half[sidx, 0] + abs(cb_) * half[sidx, 1]
            sx[sidx] = cx
            sy[sidx] = cy
            sc[sidx] = cb_
            ss[sidx] = sb_
            aabb[sidx, 0] = cx - ex - AABB_MARGIN
            aabb[sidx, 1] = cy - ey - AABB_MARGIN
            aabb[sidx, 2] = cx + ex + AABB_MARGIN
            aabb[sidx, 3] = cy + ey + AABB_MARGIN

        # narrowphase
        ncon = 0
        for si in range(ns):
            bi = body_of[si]
            for sj in range(si + 1, ns):
                bj = body_of[sj]
                if bi == bj or not can_collide[si, sj]:
                    continue
                static_i = inv_m[bi] == 0.0 or asleep[bi]
                static_j = inv_m[bj] == 0.0 or asleep[bj]
                moving_i = vel[bi, 0] != 0.0 or vel[bi, 1] != 0.0
                moving_j = vel[bj, 0] != 0.0 or vel[bj, 1] != 0.0
                if static_i and static_j and not (moving_i or moving_j):
                    continue
                if (aabb[si, 0] > aabb[sj, 2] or aabb[sj, 0] > aabb[si, 2]
                        or aabb[si, 1] > aabb[sj, 3] or aabb[sj, 1] > aabb[si, 3]):
                    continue
                cnt, nx, ny = collide_boxes(
                    sx[si], sy[si], sc[si], ss[si], half[si, 0], half[si, 1],
                    sx[sj], sy[sj], sc[sj], ss[sj], half[sj, 0], half[sj, 1],
                    two_px, two_py, two_sep, two_feat)
                for k in range(cnt):
                    c_sa[ncon] = si
                    c_sb[ncon] = sj
                    c_px[ncon] = two_px[k]
                    c_py[ncon] = two_py[k]
                    c_nx[ncon] = nx
                    c_ny[ncon] = ny
                    c_sep[ncon] = two_sep[k]
                    c_feat[ncon] = two_feat[k]
                    c_pn[ncon] = 0.0
                    c_pt[ncon] = 0.0
                    ncon += 1

        # waking: contact with a moving body rouses a sleeper
        for k in range(ncon):
            bi = body_of[c_sa[k]]
            bj = body_of[c_sb[k]]
            vi2 = vel[bi, 0] ** 2 + vel[bi, 1] ** 2
            vj2 = vel[bj, 0] ** 2 + vel[bj, 1] ** 2
            if asleep[bi] and inv_m[bi] > 0.0 and vj2 > WAKE_SPEED2:
                asleep[bi] = False
                sleep_cnt[bi] = 0
            if asleep[bj] and inv_m[bj] > 0.0 and vi2 > WAKE_SPEED2:
                asleep[bj] = False
                sleep_cnt[bj] = 0

        # effective masses (sleepers act static) + warm start
        for k in range(ncon):
            bi = body_of[c_sa[k]]
            bj = body_of[c_sb[k]]
            imi = 0.0 if asleep[bi] else inv_m[bi]
            imj = 0.0 if asleep[bj] else inv_m[bj]
            iii = 0.0 if asleep[bi] else inv_i[bi]
            iij = 0.0 if asleep[bj] else inv_i[bj]
            rix = c_px[k] - pos[bi, 0]
            riy = c_py[k] - pos[bi, 1]
            rjx = c_px[k] - pos[bj, 0]
            rjy = c_py[k] - pos[bj, 1]
            nx = c_nx[k]
            ny = c_ny[k]
            rni = rix * ny - riy * nx
            rnj = rjx * ny - rjy * nx
            kn = imi + imj + iii * rni * rni + iij * rnj * rnj
            c_mn[k] = 1.0 / kn if kn > 0.0 else 0.0
            tx = ny
            ty = -nx
            rti = rix * ty - riy * tx
            rtj = rjx * ty - rjy * tx
            kt = imi + imj + iii * rti * rti + iij * rtj * rtj
            c_mt[k] = 1.0 / kt if kt > 0.0 else 0.0
            # warm start from the nearest unconsumed cached point of this pair
            key = c_sa[k] * ns + c_sb[k]
            best = -1
            best_d2 = WARM_MATCH_TOL2
            for wi in range(n_warm):
                if warm_key[wi] == key and warm_imp[wi, 0] > -0.5:
                    d2 = ((warm_pt_xy[wi, 0] - c_px[k]) ** 2
                          + (warm_pt_xy[wi, 1] - c_py[k]) ** 2)
                    if d2 < best_d2:
                        best_d2 = d2
                        best = wi
            if best >= 0:
                c_pn[k] = warm_imp[best, 0]
                c_pt[k] = warm_imp[best, 1]
                warm_imp[best, 0] = -1.0  # consumed
                px_ = c_pn[k] * nx + c_pt[k] * tx
                py_ = c_pn[k] * ny + c_pt[k] * ty
                vel[bi, 0] -= imi * px_
                vel[bi, 1] -= imi * py_
                omega[bi] -= iii * (rix * py_ - riy * px_)
                vel[bj, 0] += imj * px_
                vel[bj, 1] += imj * py_
                omega[bj] += iij * (rjx * py_ - rjy * px_)

        # velocity iterations
        for _ in range(VEL_ITERS):
            for k in range(ncon):
                if c_mn[k] == 0.0:
                    continue
                bi = body_of[c_sa[k]]
                bj = body_of[c_sb[k]]
                imi = 0.0 if asleep[bi] else inv_m[bi]
                imj = 0.0 if asleep[bj] else inv_m[bj]
                iii = 0.0 if asleep[bi] else inv_i[bi]
                iij = 0.0 if asleep[bj] else inv_i[bj]
                rix = c_px[k] - pos[bi, 0]
                riy = c_py[k] - pos[bi, 1]
                rjx = c_px[k] - pos[bj, 0]
                rjy = c_py[k] - pos[bj, 1]
                nx = c_nx[k]
                ny = c_ny[k]
                dvx = vel[bj, 0] - omega[bj] * rjy - vel[bi, 0] + omega[bi] * riy
                dvy = vel[bj, 1] + omega[bj] * rjx - vel[bi, 1] - omega[bi] * rix
                vn = dvx * nx + dvy * ny
                # speculative: a separated point may still close its gap
                bias = c_sep[k] / dt if c_sep[k] > 0.0 else 0.0
                dpn = -(vn + bias) * c_mn[k]
                pn0 = c_pn[k]
                pn1 = pn0 + dpn
                if pn1 < 0.0:
                    pn1 = 0.0
                dpn = pn1 - pn0
                c_pn[k] = pn1
                px_ = dpn * nx
                py_ = dpn * ny
                vel[bi, 0] -= imi * px_
                vel[bi, 1] -= imi * py_
                omega[bi] -= iii * (rix * py_ - riy * px_)
                vel[bj, 0] += imj * px_
                vel[bj, 1] += imj * py_
                omega[bj] += iij * (rjx * py_ - rjy * px_)
                # friction
                tx = ny
                ty = -nx
                dvx = vel[bj, 0] - omega[bj] * rjy - vel[bi, 0] + omega[bi] * riy
                dvy = vel[bj, 1] + omega[bj] * rjx - vel[bi, 1] - omega[bi] * rix
                vt = dvx * tx + dvy * ty
                dpt = -vt * c_mt[k]
                max_pt = friction * c_pn[k]
                pt0 = c_pt[k]
                pt1 = pt0 + dpt
                if pt1 > max_pt:
                    pt1 = max_pt
                elif pt1 < -max_pt:
                    pt1 = -max_pt
                dpt = pt1 - pt0
                c_pt[k] = pt1
                px_ = dpt * tx
                py_ = dpt * ty
                vel[bi, 0] -= imi * px_
                vel[bi, 1] -= imi * py_
                omega[bi] -= iii * (rix * py_ - riy * px_)
                vel[bj, 0] += imj * px_
                vel[bj, 1] += imj * py_
                omega[bj] += iij * (rjx * py_ - rjy * px_)

        # integrate positions
        for b in range(nb):
            if not asleep[b]:
                pos[b, 0] += vel[b, 0] * dt
                pos[b, 1] += vel[b, 1] * dt
                angle[b] += omega[b] * dt

        # positional correction (fresh contacts each iteration)
        for _ in range(POS_ITERS):
            for si in range(ns):
                bi = body_of[si]
                for sj in range(si + 1, ns):
                    bj = body_of[sj]
                    if bi == bj or not can_collide[si, sj]:
                        continue
                    imi = 0.0 if asleep[bi] else inv_m[bi]
                    imj = 0.0 if asleep[bj] else inv_m[bj]
                    if imi == 0.0 and imj == 0.0:
                        continue
                    if (aabb[si, 0] > aabb[sj, 2] or aabb[sj, 0] > aabb[si, 2]
                            or aabb[si, 1] > aabb[sj, 3]
                            or aabb[sj, 1] > aabb[si, 3]):
                        continue
                    cbi = np.cos(angle[bi])
                    sbi = np.sin(angle[bi])
                    cxi = pos[bi, 0] + cbi * off[si, 0] - sbi * off[si, 1]
                    cyi = pos[bi, 1] + sbi * off[si, 0] + cbi * off[si, 1]
                    cbj = np.cos(angle[bj])
                    sbj = np.sin(angle[bj])
                    cxj = pos[bj, 0] + cbj * off[sj, 0] - sbj * off[sj, 1]
                    cyj = pos[bj, 1] + sbj * off[sj, 0] + cbj * off[sj, 1]
                    cnt, nx, ny = collide_boxes(
                        cxi, cyi, cbi, sbi, half[si, 0], half[si, 1],
                        cxj, cyj, cbj, sbj, half[sj, 0], half[sj, 1],
                        two_px, two_py, two_sep, two_feat)
                    iii = 0.0 if asleep[bi] else inv_i[bi]
                    iij = 0.0 if asleep[bj] else inv_i[bj]
                    for k in range(cnt):
                        corr = BAUMGARTE * (two_sep[k] + SLOP)
                        if corr >= 0.0:
                            continue
                        if corr < -MAX_CORRECTION:
                            corr = -MAX_CORRECTION
                        rix = two_px[k] - pos[bi, 0]
                        riy = two_py[k] - pos[bi, 1]
                        rjx = two_px[k] - pos[bj, 0]
                        rjy = two_py[k] - pos[bj, 1]
                        rni = rix * ny - riy * nx
                        rnj = rjx * ny - rjy * nx
                        kn = imi + imj + iii * rni * rni + iij * rnj * rnj
                        if kn <= 0.0:
                            continue
                        lam = -corr / kn
                        px_ = lam * nx
                        py_ = lam * ny
                        pos[bi, 0] -= imi * px_
                        pos[bi, 1] -= imi * py_
                        angle[bi] -= iii * (rix * py_ - riy * px_)
                        pos[bj, 0] += imj * px_
                        pos[bj, 1] += imj * py_
                        angle[bj] += iij * (rjx * py_ - rjy * px_)

        # cache impulses for warm starting
        n_warm = ncon
        for k in range(ncon):
            warm_key[k] = c_sa[k] * ns + c_sb[k]
            warm_pt_xy[k, 0] = c_px[k]
            warm_pt_xy[k, 1] = c_py[k]
            warm_imp[k, 0] = c_pn[k]
            warm_imp[k, 1] = c_pt[k]

        # sleep bookkeeping: islands sleep atomically. A body sleeping alone
        # inside a loaded chain would drop its weight out of the warm-started
        # impulse balance and kick its neighbors, so dynamic bodies are
        # grouped by AABB adjacency and an island sleeps only when every
        # member has been near rest long enough.
        for b in range(nb):
            if inv_m[b] == 0.0 or asleep[b]:
                continue
            v2 = vel[b, 0] ** 2 + vel[b, 1] ** 2
            if v2 < SLEEP_LIN2 and abs(omega[b]) < SLEEP_ANG:
                sleep_cnt[b] += 1
            else:
                sleep_cnt[b] = 0
        for b in range(nb):
            island[b] = b
        for si in range(ns):
            bi = body_of[si]
            if inv_m[bi] == 0.0 or asleep[bi]:
                continue
            for sj in range(si + 1, ns):
                bj = body_of[sj]
                if bj == bi or inv_m[bj] == 0.0 or asleep[bj]:
                    continue
                if not can_collide[si, sj]:
                    continue
                if (aabb[si, 0] > aabb[sj, 2] or aabb[sj, 0] > aabb[si, 2]
                        or aabb[si, 1] > aabb[sj, 3]
                        or aabb[sj, 1] > aabb[si, 3]):
                    continue
                ri = bi
                while island[ri] != ri:
                    ri = island[ri]
                rj = bj
                while island[rj] != rj:
                    rj = island[rj]
                if ri != rj:
                    island[max(ri, rj)] = min(ri, rj)
        for b in range(nb):
            ready[b] = True
        for b in range(nb):
            if inv_m[b] == 0.0 or asleep[b]:
                continue
            r = b
            while island[r] != r:
                r = island[r]
            if sleep_cnt[b] < SLEEP_STEPS:
                ready[r] = False
        for b in range(nb):
            if inv_m[b] == 0.0 or asleep[b]:
                continue
            r = b
            while island[r] != r:
                r = island[r]
            if ready[r]:
                asleep[b] = True
                vel[b, 0] = 0.0
                vel[b, 1] = 0.0
                omega[b] = 0.0

        steps_done = t + 1

        # quiescence after the schedule is exhausted: everything sleeps
        if t >= m:
            quiet = True
            for b in range(nb):
                if inv_m[b] > 0.0 and not asleep[b]:
                    quiet = False
                    break
            if quiet:
                status = STATUS_QUIESCENT
                break

    return status, steps_done, n_warm


@maybe_njit
def contained_mask(bx, by, bw, bh, bangle, base_cx, base_cy,
                   interior_half, base_half_h, tol, out):
    """Containment test for every block at once (see scene.block_contained)."""
    for i in range(bx.shape[0]):
        c = abs(np.cos(bangle[i]))
        s = abs(np.sin(bangle[i]))
        ex = c * bw[i] * 0.5 + s * bh[i] * 0.5
        ey = s * bw[i] * 0.5 + c * bh[i] * 0.5
        ok = abs(bx[i] - base_cx) + ex <= interior_half + tol
        if ok:
            bottom = by[i] - ey
            base_top = base_cy + base_half_h
            ok = base_top - tol <= bottom <= base_top + 12.0
        out[i] = ok


@maybe_njit
def max_overlap(pos, angle, body_of, off, half, can_collide):
    """Deepest penetration among allowed shape pairs (0 when separated)."""
    ns = body_of.shape[0]
    two_px = np.empty(2)
    two_py = np.empty(2)
    two_sep = np.empty(2)
    two_feat = np.empty(2, dtype=np.int64)
    worst = 0.0
    for si in range(ns):
        bi = body_of[si]
        cbi = np.cos(angle[bi])
        sbi = np.sin(angle[bi])
        cxi = pos[bi, 0] + cbi * off[si, 0] - sbi * off[si, 1]
        cyi = pos[bi, 1] + sbi * off[si, 0] + cbi * off[si, 1]
        for sj in range(si + 1, ns):
            bj = body_of[sj]
            if bi == bj or not can_collide[si, sj]:
                continue
            cbj = np.cos(angle[bj])
            sbj = np.sin(angle[bj])
            cxj = pos[bj, 0] + cbj * off[sj, 0] - sbj * off[sj, 1]
            cyj = pos[bj, 1] + sbj * off[sj, 0] + cbj * off[sj, 1]
            cnt, nx, ny = collide_boxes(
                cxi, cyi, cbi, sbi, half[si, 0], half[si, 1],
                cxj, cyj, cbj, sbj, half[sj, 0], half[sj, 1],
                two_px, two_py, two_sep, two_feat)
            for k in range(cnt):
                if -two_sep[k] > worst:
                    worst = -two_sep[k]
    return worst
