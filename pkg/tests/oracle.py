"""Dense, loop-based reference assembly used as an independent oracle.

Basis functions are built in physical coordinates: Lagrange bases by
inverting the nodal Vandermonde matrix of the monomials, the Nedelec basis
by inverting the edge-moment matrix of the twelve P1^3 monomials.
Integrals use a Duffy-collapsed Gauss-Legendre product rule.
"""
import numpy as np

P2_EXP = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1)]
P1_EXP = P2_EXP[:4]
LOCAL_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def duffy_rule(coords, m=7):
    t, w = np.polynomial.legendre.leggauss(m)
    t, w = 0.5 * (t + 1), 0.5 * w
    pts, wts = [], []
    for a, wa in zip(t, w):
        for b, wb in zip(t, w):
            for c, wc in zip(t, w):
                x = a
                y = b * (1 - a)
                z = c * (1 - a) * (1 - b)
                pts.append((x, y, z))
                wts.append(wa * wb * wc * (1 - a) ** 2 * (1 - b))
    ref = np.array(pts)
    A = np.column_stack([coords[1] - coords[0], coords[2] - coords[0], coords[3] - coords[0]])
    return coords[0] + ref @ A.T, np.array(wts) * abs(np.linalg.det(A))


def mono(exps, x):
    return np.stack([x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c for a, b, c in exps], axis=1)


def mono_grad(exps, x):
    out = np.zeros((len(x), len(exps), 3))
    for k, (a, b, c) in enumerate(exps):
        e = np.array([a, b, c])
        for d in range(3):
            if e[d] == 0:
                continue
            ee = e.copy()
            ee[d] -= 1
            out[:, k, d] = e[d] * x[:, 0] ** ee[0] * x[:, 1] ** ee[1] * x[:, 2] ** ee[2]
    return out


class LagrangeBasis:
    def __init__(self, nodes, exps):
        self.exps = exps
        self.coef = np.linalg.inv(mono(exps, nodes))  # columns: basis functions

    def values(self, x):
        return mono(self.exps, x) @ self.coef

    def grads(self, x):
        return np.einsum("qkd,kb->qbd", mono_grad(self.exps, x), self.coef)


class NedelecBasis:
    """Global-orientation basis: DOF (edge, which) is int_e (v.t) lam_which ds with t from low to high vertex."""

    def __init__(self, verts, global_ids):
        gl = 3
        t, w = np.polynomial.legendre.leggauss(gl)
        s, w = 0.5 * (t + 1), 0.5 * w
        D = np.zeros((12, 12))
        self.edges = []
        for k, (i, j) in enumerate(LOCAL_EDGES):
            lo, hi = (i, j) if global_ids[i] < global_ids[j] else (j, i)
            self.edges.append((global_ids[lo], global_ids[hi]))
            a, b = verts[lo], verts[hi]
            pts = a + s[:, None] * (b - a)
            vt = np.einsum("qmd,d->qm", self._mono_vals(pts), b - a)
            D[2 * k] = (w * (1 - s)) @ vt
            D[2 * k + 1] = (w * s) @ vt
        self.coef = np.linalg.inv(D).T  # basis j = sum_m coef[j, m] * monomial m

    @staticmethod
    def _mono_vals(x):
        P = mono(P1_EXP, x)  # (q, 4)
        out = np.zeros((len(x), 12, 3))
        for d in range(3):
            out[:, 4 * d:4 * d + 4, d] = P
        return out

    def values(self, x):
        return np.einsum("jm,qmd->qjd", self.coef, self._mono_vals(x))

    def curls(self):
        # monomial m = (d, k): e_d * {1, x, y, z}[k]; its curl is constant
        c = np.zeros((12, 3))
        for d in range(3):
            for k in range(1, 4):
                g = np.zeros(3)
                g[k - 1] = 1.0
                e = np.zeros(3)
                e[d] = 1.0
                c[4 * d + k] = np.cross(g, e)
        return self.coef @ c


def assemble(mesh, state_u=None, state_b=None):
    """Dense matrices keyed like the assembler's constants and state-dependent blocks."""
    V, E = mesh.n_vertices, mesh.n_edges
    nn = V + E
    edge_id = {tuple(e): k for k, e in enumerate(mesh.edges.tolist())}
    nb = 2 * E
    out = {k: np.zeros(s) for k, s in {
        "M": (nb, nb), "curlcurl": (nb, nb), "G": (nn, nb), "Lr": (nn, nn), "Qp": (V, V),
        "B": (V, 3 * nn), "veclap": (3 * nn, 3 * nn), "graddiv": (3 * nn, 3 * nn),
        "convection": (3 * nn, 3 * nn), "coupling": (3 * nn, nb), "bubv": (3 * nn, 3 * nn)}.items()}
    for tet in mesh.tets:
        X = mesh.vertices[tet]
        mids = [0.5 * (X[i] + X[j]) for i, j in LOCAL_EDGES]
        p2_nodes = np.vstack([X, mids])
        p2_ids = list(tet) + [V + edge_id[tuple(sorted((tet[i], tet[j])))] for i, j in LOCAL_EDGES]
        p2 = LagrangeBasis(p2_nodes, P2_EXP)
        p1 = LagrangeBasis(X, P1_EXP)
        nd = NedelecBasis(X, tet)
        nd_ids = []
        for lo, hi in nd.edges:
            e = edge_id[(lo, hi)]
            nd_ids += [2 * e, 2 * e + 1]
        xq, wq = duffy_rule(X)
        P, dP = p2.values(xq), p2.grads(xq)
        Q = p1.values(xq)
        N, cN = nd.values(xq), nd.curls()
        vol = wq.sum()
        ix = np.ix_
        out["M"][ix(nd_ids, nd_ids)] += np.einsum("q,qad,qbd->ab", wq, N, N)
        out["curlcurl"][ix(nd_ids, nd_ids)] += vol * cN @ cN.T
        out["G"][ix(p2_ids, nd_ids)] += np.einsum("q,qad,qbd->ab", wq, dP, N)
        out["Lr"][ix(p2_ids, p2_ids)] += np.einsum("q,qad,qbd->ab", wq, dP, dP)
        out["Qp"][ix(list(tet), list(tet))] += np.einsum("q,qa,qb->ab", wq, Q, Q)
        lap = np.einsum("q,qad,qbd->ab", wq, dP, dP)
        uk = None if state_u is None else np.stack([P @ state_u[np.array(p2_ids) + c * nn] for c in range(3)], 1)
        bk = None if state_b is None else np.einsum("qjd,j->qd", N, state_b[nd_ids])
        for c in range(3):
            rc = [i + c * nn for i in p2_ids]
            out["veclap"][ix(rc, rc)] += lap
            out["B"][ix(list(tet), rc)] += -np.einsum("q,qa,qb->ab", wq, Q, dP[:, :, c])
            for d in range(3):
                rd = [i + d * nn for i in p2_ids]
                out["graddiv"][ix(rc, rd)] += np.einsum("q,qa,qb->ab", wq, dP[:, :, c], dP[:, :, d])
            if uk is not None:
                adv = np.einsum("qd,qbd->qb", uk, dP)
                out["convection"][ix(rc, rc)] += np.einsum("q,qa,qb->ab", wq, P, adv)
            if bk is not None:
                e = np.zeros(3)
                e[c] = 1.0
                bxe = np.cross(bk, e)  # B x e_c
                out["coupling"][ix(rc, nd_ids)] += np.einsum("q,qa,jd,qd->aj", wq, P, cN, bxe)
                for d in range(3):
                    f = np.zeros(3)
                    f[d] = 1.0
                    bxf = np.cross(bk, f)
                    rd = [i + d * nn for i in p2_ids]
                    out["bubv"][ix(rc, rd)] += np.einsum("q,qa,qb,q->ab", wq, P, P, np.sum(bxe * bxf, 1))
    return out
