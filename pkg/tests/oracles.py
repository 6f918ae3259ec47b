"""Brute-force reference implementations used by the tests.

Everything here works on global ``(mx, ny)`` arrays and builds dense matrices
node by node with explicit index arithmetic: periodic wrap in x, even mirror
images about the wall rows for scalars, odd images about the wall value for
velocity components. Nothing is shared with the package beyond numpy.
"""
from __future__ import annotations

from collections import deque

import numpy as np


# --- index helpers ---------------------------------------------------------------


def wrap(i, j, mx, ny):
    """Stored node standing in for ``(i, j)``: periodic in i, mirrored in j."""
    i %= mx
    if j < 0:
        j = -j
    if j > ny - 1:
        j = 2 * (ny - 1) - j
    return i, j


def flat(i, j, mx, ny):
    i, j = wrap(i, j, mx, ny)
    return i * ny + j


def ext(a, i, j):
    """Value of ``a`` at ``(i, j)`` with even mirror images beyond the walls."""
    return a[wrap(i, j, *a.shape)]


def ext_odd(a, i, j, bottom, top):
    """Value of ``a`` at ``(i, j)`` with odd images about the wall values."""
    mx, ny = a.shape
    i %= mx
    if j < 0:
        return 2.0 * bottom - a[i, -j]
    if j > ny - 1:
        return 2.0 * top - a[i, 2 * (ny - 1) - j]
    return a[i, j]


def nodes(mx, ny):
    for i in range(mx):
        for j in range(ny):
            yield i, j, i * ny + j


# --- scalar operators -----------------------------------------------------------------


def laplacian_matrix(mx, ny, dx, dy):
    n = mx * ny
    L = np.zeros((n, n))
    for i, j, r in nodes(mx, ny):
        for di, dj, w in ((1, 0, dx), (-1, 0, dx), (0, 1, dy), (0, -1, dy)):
            L[r, flat(i + di, j + dj, mx, ny)] += 1.0 / w**2
            L[r, r] -= 1.0 / w**2
    return L


def div_coeff_grad_matrix(a, dx, dy, floor=None):
    """``div(a grad f)`` with arithmetic face means of ``a``."""
    mx, ny = a.shape
    n = mx * ny
    M = np.zeros((n, n))
    for i, j, r in nodes(mx, ny):
        for di, dj, h in ((1, 0, dx), (-1, 0, dx), (0, 1, dy), (0, -1, dy)):
            face = 0.5 * (a[i, j] + ext(a, i + di, j + dj))
            if floor is not None:
                face = max(face, floor)
            M[r, flat(i + di, j + dj, mx, ny)] += face / h**2
            M[r, r] -= face / h**2
    return M


def _velocity(u, v, bc_u, bc_v):
    return (lambda i, j: ext_odd(u, i, j, *bc_u)), (lambda i, j: ext_odd(v, i, j, *bc_v))


def central_advection_matrix(u, v, dx, dy, bc_u=(0.0, 0.0), bc_v=(0.0, 0.0)):
    """``div(f v)`` from centred differences of the node products ``f v``."""
    mx, ny = u.shape
    U, V = _velocity(u, v, bc_u, bc_v)
    M = np.zeros((mx * ny, mx * ny))
    for i, j, r in nodes(mx, ny):
        M[r, flat(i + 1, j, mx, ny)] += U(i + 1, j) / (2 * dx)
        M[r, flat(i - 1, j, mx, ny)] -= U(i - 1, j) / (2 * dx)
        M[r, flat(i, j + 1, mx, ny)] += V(i, j + 1) / (2 * dy)
        M[r, flat(i, j - 1, mx, ny)] -= V(i, j - 1) / (2 * dy)
    return M


def upwind_advection_matrix(u, v, dx, dy, bc_u=(0.0, 0.0), bc_v=(0.0, 0.0)):
    """``div(f v)`` with averaged face velocities and upstream face values of ``f``."""
    mx, ny = u.shape
    U, V = _velocity(u, v, bc_u, bc_v)
    M = np.zeros((mx * ny, mx * ny))
    for i, j, r in nodes(mx, ny):
        here = r
        # (neighbour offset, face velocity, outward sign, spacing)
        faces = (
            ((1, 0), 0.5 * (U(i, j) + U(i + 1, j)), 1.0, dx),
            ((-1, 0), 0.5 * (U(i, j) + U(i - 1, j)), -1.0, dx),
            ((0, 1), 0.5 * (V(i, j) + V(i, j + 1)), 1.0, dy),
            ((0, -1), 0.5 * (V(i, j) + V(i, j - 1)), -1.0, dy),
        )
        for (di, dj), a, sign, h in faces:
            there = flat(i + di, j + dj, mx, ny)
            # flux leaves through the face if the velocity points outward
            upstream = here if sign * a > 0 else there
            M[r, upstream] += sign * a / h
    return M


# --- network fraction ----------------------------------------------------------------


def ch_step_dense(phi_prev, phi_n, u, v, c, p, dt, dx, dy, bc_u=(0.0, 0.0), bc_v=(0.0, 0.0),
                  growth=True):
    """One network-fraction step solved with a dense direct solve.

    ``p`` is any object with the ChParams attributes.
    """
    mx, ny = phi_n.shape
    n = mx * ny
    star = 1.5 * phi_n - 0.5 * phi_prev
    K = div_coeff_grad_matrix(p.Lambda * star, dx, dy, floor=0.0)
    C = K @ laplacian_matrix(mx, ny, dx, dy)
    if p.advection == "upwind":
        adv = upwind_advection_matrix(u, v, dx, dy, bc_u, bc_v)
    else:
        adv = central_advection_matrix(u, v, dx, dy, bc_u, bc_v)
    th, S, G1, ta = p.theta, p.stabilizer, p.Gamma1, p.advection_theta
    A = np.eye(n) / dt + th * G1 * C - th * S * K + ta * adv
    pn, ps = phi_n.ravel(), star.ravel()
    fb = 2.0 * p.Gamma2 * ps * (1 - ps) * (1 - 2 * ps) + S * ((1 - th) * pn - ps)
    b = pn / dt - (1 - th) * G1 * (C @ pn) + K @ fb
    b -= (1 - ta) * (adv @ (pn if ta > 0 else ps))
    if growth and p.epsilon > 0:
        cc = c.ravel()
        b += p.epsilon * p.mu * ps * cc / (p.Kc + cc)
    return np.linalg.solve(A, b).reshape(mx, ny)


def free_energy_loops(phi, Gamma1, Gamma2, dx, dy):
    """Trapezoid-in-y bulk energy plus squared east and north face differences."""
    mx, ny = phi.shape
    total = 0.0
    for i in range(mx):
        for j in range(ny):
            w = 0.5 if j in (0, ny - 1) else 1.0
            bulk = Gamma2 * phi[i, j] ** 2 * (1 - phi[i, j]) ** 2
            gx = (phi[(i + 1) % mx, j] - phi[i, j]) / dx
            total += w * (bulk + 0.5 * Gamma1 * gx**2)
            if j < ny - 1:
                gy = (phi[i, j + 1] - phi[i, j]) / dy
                total += 0.5 * Gamma1 * gy**2
    return total * dx * dy


# --- nutrient ----------------------------------------------------------------------------


def nutrient_step_dense(c, c_prev, phi_n, phi_next, u, v, p, dt, dx, dy,
                        bc_u=(0.0, 0.0), bc_v=(0.0, 0.0)):
    """One nutrient step with a dense direct solve; ``p`` has the NutrientParams attributes."""
    mx, ny = c.shape
    nh = 0.5 * (phi_n + phi_next)
    s0, s1, sh = 1 - phi_n, 1 - phi_next, 1 - nh
    if p.solvent_floor > 0:
        s0, s1, sh = (np.maximum(a, p.solvent_floor) for a in (s0, s1, sh))
        nh = np.clip(nh, 0.0, 1.0)
    th = p.theta
    L = div_coeff_grad_matrix(p.Ds * sh, dx, dy)
    A = np.diag((s1 / dt + th * p.A * nh).ravel()) - th * L
    cstar = (1.5 * c - 0.5 * c_prev) * sh
    adv = central_advection_matrix(u, v, dx, dy, bc_u, bc_v)
    cf = c.ravel()
    b = (s0 / dt - (1 - th) * p.A * nh).ravel() * cf + (1 - th) * (L @ cf) - adv @ cstar.ravel()
    return np.linalg.solve(A, b).reshape(mx, ny)


# --- momentum ---------------------------------------------------------------------------


def _interior_rows(mx, ny):
    return [(i, j, i * ny + j) for i, j, _ in nodes(mx, ny) if 0 < j < ny - 1]


def _face_matrices(eta, dx, dy):
    """Compact x-face and y-face parts of ``div(eta grad)`` on interior rows."""
    mx, ny = eta.shape
    n = mx * ny
    Dxx, Dyy = np.zeros((n, n)), np.zeros((n, n))
    for i, j, r in _interior_rows(mx, ny):
        for D, (di, dj), h in ((Dxx, (1, 0), dx), (Dxx, (-1, 0), dx), (Dyy, (0, 1), dy), (Dyy, (0, -1), dy)):
            face = 0.5 * (eta[i, j] + ext(eta, i + di, j + dj))
            D[r, flat(i + di, j + dj, mx, ny)] += face / h**2
            D[r, r] -= face / h**2
    return Dxx, Dyy


def _mixed_matrices(eta, dx, dy):
    """``d/dy(eta d/dx)`` and ``d/dx(eta d/dy)`` as centred-of-centred differences."""
    mx, ny = eta.shape
    n = mx * ny
    Mxy, Myx = np.zeros((n, n)), np.zeros((n, n))
    for i, j, r in _interior_rows(mx, ny):
        for s in (1, -1):
            e = ext(eta, i, j + s)
            Mxy[r, flat(i + 1, j + s, mx, ny)] += s * e / (4 * dx * dy)
            Mxy[r, flat(i - 1, j + s, mx, ny)] -= s * e / (4 * dx * dy)
            e = ext(eta, i + s, j)
            Myx[r, flat(i + s, j + 1, mx, ny)] += s * e / (4 * dx * dy)
            Myx[r, flat(i + s, j - 1, mx, ny)] -= s * e / (4 * dx * dy)
    return Mxy, Myx


def phase_stress_dense(phi, gamma1, dx, dy):
    """``div(gamma1 grad(phi) grad(phi))`` with centred differences and mirror images."""
    mx, ny = phi.shape

    def px(i, j):
        return (ext(phi, i + 1, j) - ext(phi, i - 1, j)) / (2 * dx)

    def py(i, j):
        return (ext(phi, i, j + 1) - ext(phi, i, j - 1)) / (2 * dy)

    fx, fy = np.zeros((mx, ny)), np.zeros((mx, ny))
    for i, j, _ in nodes(mx, ny):
        fx[i, j] = gamma1 * ((px(i + 1, j) ** 2 - px(i - 1, j) ** 2) / (2 * dx)
                             + (px(i, j + 1) * py(i, j + 1) - px(i, j - 1) * py(i, j - 1)) / (2 * dy))
        fy[i, j] = gamma1 * ((py(i + 1, j) * px(i + 1, j) - py(i - 1, j) * px(i - 1, j)) / (2 * dx)
                             + (py(i, j + 1) ** 2 - py(i, j - 1) ** 2) / (2 * dy))
    return fx, fy


def momentum_step_dense(u_n, v_n, u_prev, v_prev, phi_star, Rx, Ry, fp, dt, dx, dy):
    """Provisional velocity from a dense solve of the coupled two-component system.

    ``fp`` has the FlowParams attributes; ``fp.viscous`` is ``"split"`` or ``"full"``.
    """
    mx, ny = u_n.shape
    n = mx * ny
    eta = phi_star / fp.Re_n + (1 - phi_star) / fp.Re_s
    eta = np.maximum(eta, min(1 / fp.Re_s, 1 / fp.Re_n))
    if fp.max_viscosity_ratio is not None:
        eta = np.minimum(eta, fp.max_viscosity_ratio / fp.Re_s)
    rho = (1 - phi_star) * fp.rho_s_ratio + phi_star * fp.rho_n_ratio
    Dxx, Dyy = _face_matrices(eta, dx, dy)
    Mxy, Myx = _mixed_matrices(eta, dx, dy)
    Z = np.zeros((n, n))
    if fp.viscous == "full":
        Vop = np.block([[2 * Dxx + Dyy, Mxy], [Myx, Dxx + 2 * Dyy]])
        Top = np.zeros((2 * n, 2 * n))
    else:
        Vop = np.block([[Dxx + Dyy, Z], [Z, Dxx + Dyy]])
        Top = np.block([[Dxx, Mxy], [Myx, Dyy]])
    inv_rho = np.tile(1.0 / rho.ravel(), 2)
    th = fp.theta
    A = np.eye(2 * n) / dt - th * inv_rho[:, None] * Vop

    # extrapolated convection with centred differences (interior rows only)
    us, vs = 1.5 * u_n - 0.5 * u_prev, 1.5 * v_n - 0.5 * v_prev
    conv = np.zeros((2, mx, ny))
    for i, j, _ in _interior_rows(mx, ny):
        for k, f in enumerate((us, vs)):
            fx = (f[(i + 1) % mx, j] - f[(i - 1) % mx, j]) / (2 * dx)
            fy = (f[i, j + 1] - f[i, j - 1]) / (2 * dy)
            conv[k, i, j] = us[i, j] * fx + vs[i, j] * fy
    xn = np.concatenate([u_n.ravel(), v_n.ravel()])
    R = np.concatenate([Rx.ravel(), Ry.ravel()])
    b = xn / dt - conv.ravel() + inv_rho * ((1 - th) * (Vop @ xn) + Top @ xn + R)

    walls = {0: fp.bottom_velocity, ny - 1: fp.lid_velocity}
    for k in range(2):
        for i in range(mx):
            for j, val in walls.items():
                r = k * n + i * ny + j
                A[r, :] = 0.0
                A[r, r] = 1.0
                b[r] = val[k]
    x = np.linalg.solve(A, b)
    return x[:n].reshape(mx, ny), x[n:].reshape(mx, ny)


# --- pressure ---------------------------------------------------------------------------


def pressure_matrix(rho, dx, dy):
    """``-W div(grad p / rho)`` with centred differences and trapezoid row weights."""
    mx, ny = rho.shape
    n = mx * ny
    A = np.zeros((n, n))
    for i, j, r in nodes(mx, ny):
        w = 0.5 if j in (0, ny - 1) else 1.0
        for s in (1, -1):
            inv = 1.0 / ext(rho, i + s, j)
            A[r, flat(i + s + 1, j, mx, ny)] -= w * s * inv / (4 * dx * dx)
            A[r, flat(i + s - 1, j, mx, ny)] += w * s * inv / (4 * dx * dx)
            inv = 1.0 / ext(rho, i, j + s)
            A[r, flat(i, j + s + 1, mx, ny)] -= w * s * inv / (4 * dy * dy)
            A[r, flat(i, j + s - 1, mx, ny)] += w * s * inv / (4 * dy * dy)
    return A


def pressure_rhs_dense(u, v, dx, dy, bc_u=(0.0, 0.0), bc_v=(0.0, 0.0)):
    mx, ny = u.shape
    b = np.zeros((mx, ny))
    for i, j, _ in nodes(mx, ny):
        w = 0.5 if j in (0, ny - 1) else 1.0
        du = (ext_odd(u, i + 1, j, *bc_u) - ext_odd(u, i - 1, j, *bc_u)) / (2 * dx)
        dv = (ext_odd(v, i, j + 1, *bc_v) - ext_odd(v, i, j - 1, *bc_v)) / (2 * dy)
        b[i, j] = w * (du + dv)
    return b


def pressure_solve_dense(u, v, rho, dx, dy, bc_u=(0.0, 0.0), bc_v=(0.0, 0.0)):
    """Minimum-norm solution via the pseudoinverse."""
    A = pressure_matrix(rho, dx, dy)
    b = pressure_rhs_dense(u, v, dx, dy, bc_u, bc_v)
    return (np.linalg.pinv(A) @ b.ravel()).reshape(rho.shape)


# --- connectivity -----------------------------------------------------------------------


def count_components_bfs(phi, threshold):
    """4-connected components of ``phi >= threshold``, periodic in the first index."""
    mx, ny = phi.shape
    seen = np.zeros((mx, ny), dtype=bool)
    count = 0
    for i0 in range(mx):
        for j0 in range(ny):
            if seen[i0, j0] or phi[i0, j0] < threshold:
                continue
            count += 1
            queue = deque([(i0, j0)])
            seen[i0, j0] = True
            while queue:
                i, j = queue.popleft()
                for a, b in (((i + 1) % mx, j), ((i - 1) % mx, j), (i, j + 1), (i, j - 1)):
                    if 0 <= b < ny and not seen[a, b] and phi[a, b] >= threshold:
                        seen[a, b] = True
                        queue.append((a, b))
    return count
