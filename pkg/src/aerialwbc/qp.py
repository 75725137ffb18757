"""Dense strictly-convex QP solver (dual active-set).

Solves   min 0.5 x^T H x + g^T x
         s.t. A_eq x = b_eq,  A_in x <= b_in
to KKT optimality.  The method starts from the unconstrained minimum and adds
violated constraints one at a time, dropping blocking ones along the way
(Goldfarb-Idnani).  Problems here are tiny (tens of variables/constraints),
so factorizations are recomputed rather than updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


@dataclass
class QPInstance:
    H: np.ndarray               # d x d, symmetric positive definite
    g: np.ndarray               # d
    A_eq: np.ndarray | None = None   # m_e x d
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None   # m_i x d, convention A_in x <= b_in
    b_in: np.ndarray | None = None

    def dims(self) -> tuple[int, int, int]:
        d = self.H.shape[0]
        me = 0 if self.A_eq is None else self.A_eq.shape[0]
        mi = 0 if self.A_in is None else self.A_in.shape[0]
        return d, me, mi


@dataclass
class QPSolution:
    x: np.ndarray
    status: str                  # optimal | infeasible | max_iter
    iterations: int              # active-set changes
    active_set: list[int] = field(default_factory=list)  # inequality rows
    kkt_residual: float = np.inf
    lam_eq: np.ndarray | None = None
    mu_in: np.ndarray | None = None


def _kkt_residual(p: QPInstance, x, lam, mu) -> float:
    d, me, mi = p.dims()
    r = p.H @ x + p.g
    if me:
        r = r + p.A_eq.T @ lam
    if mi:
        r = r + p.A_in.T @ mu
    res = np.max(np.abs(r))
    if me:
        res = max(res, np.max(np.abs(p.A_eq @ x - p.b_eq)))
    if mi:
        slack = p.A_in @ x - p.b_in
        res = max(res, max(0.0, np.max(slack)))
        res = max(res, max(0.0, -np.min(mu)) if mi else 0.0)
        res = max(res, np.max(np.abs(mu * slack)))
    return float(res)


def solve(p: QPInstance, tol: float = 1e-9, max_iter: int = 200) -> QPSolution:
    """Solve the QP; see module docstring for the algorithm."""
    d, me, mi = p.dims()
    if np.max(np.abs(p.H - p.H.T)) > 1e-9:
        raise ValueError("H must be symmetric")
    try:
        cf = cho_factor(p.H, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise ValueError("H must be positive definite")

    # internal form: n_i^T x >= b_i; ids 0..me-1 are equalities
    normals = np.zeros((me + mi, d))
    offsets = np.zeros(me + mi)
    if me:
        normals[:me] = p.A_eq
        offsets[:me] = p.b_eq
    if mi:
        normals[me:] = -p.A_in
        offsets[me:] = -p.b_in

    x = -cho_solve(cf, p.g, check_finite=False)
    active: list[int] = []
    sign = np.ones(me + mi)      # equality normals may be added flipped
    u = np.zeros(0)              # multipliers aligned with `active`
    iters = 0
    feas_tol = max(tol, 1e-11)

    def finish(status: str) -> QPSolution:
        lam = np.zeros(me)
        mu = np.zeros(mi)
        for cid, uj in zip(active, u):
            if cid < me:
                lam[cid] = -sign[cid] * uj
            else:
                mu[cid - me] = uj
        kkt = _kkt_residual(p, x, lam, mu) if status == "optimal" else np.inf
        return QPSolution(x=x, status=status, iterations=iters,
                          active_set=sorted(cid - me for cid in active if cid >= me),
                          kkt_residual=kkt, lam_eq=lam, mu_in=mu)

    while True:
        if me + mi == 0:
            return finish("optimal")
        slack = normals @ x - offsets
        pick = -1
        worst = -feas_tol
        for i in range(me):           # equalities first, in order
            if i not in active and abs(slack[i]) > feas_tol:
                pick = i
                break
        if pick < 0 and mi:
            viol = slack[me:]
            j = int(np.argmin(viol))
            if viol[j] < worst:
                pick = me + j
        if pick < 0:
            return finish("optimal")

        if pick < me and slack[pick] > 0.0:
            sign[pick] = -1.0
        npv = sign[pick] * normals[pick]
        bpv = sign[pick] * offsets[pick]
        u_plus = 0.0

        while True:
            iters += 1
            if iters > max_iter:
                return finish("max_iter")
            if active:
                N = normals[active] * sign[active][:, None]
                HiN = cho_solve(cf, N.T, check_finite=False)   # d x q
                Hin = cho_solve(cf, npv, check_finite=False)
                W = N @ HiN
                rhs = N @ Hin
                try:
                    r = np.linalg.solve(W, rhs)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(W, rhs, rcond=None)[0]
                z = Hin - HiN @ r
            else:
                r = np.zeros(0)
                z = cho_solve(cf, npv, check_finite=False)

            # dual step length: first blocking active inequality
            t1 = np.inf
            k_drop = -1
            for jj, cid in enumerate(active):
                if cid >= me and r[jj] > 1e-12:
                    ratio = u[jj] / r[jj]
                    if ratio < t1 - 1e-15:
                        t1, k_drop = ratio, jj
            # primal step length
            zn = float(z @ npv)
            s_p = float(npv @ x - bpv)
            t2 = -s_p / zn if zn > 1e-13 else np.inf

            if not np.isfinite(t1) and not np.isfinite(t2):
                return finish("infeasible")
            t = min(t1, t2)

            if np.isfinite(t2):
                x = x + t * z
            u = u - t * r
            u_plus += t

            if t == t2 and np.isfinite(t2):
                active.append(pick)
                u = np.append(u, u_plus)
                break
            # blocked: drop constraint k_drop, stay in the inner loop
            del active[k_drop]
            u = np.delete(u, k_drop)


def dump_instance(p: QPInstance, path) -> None:
    """Write a QP instance as documented plain text (one matrix per section).

    Format: a line 'name rows cols' followed by rows of %.17g numbers;
    sections H, g, A_eq, b_eq, A_in, b_in (absent blocks are skipped).
    """
    def block(f, name, arr):
        if arr is None:
            return
        a = np.atleast_2d(np.asarray(arr, dtype=float))
        f.write(f"{name} {a.shape[0]} {a.shape[1]}\n")
        for row in a:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    with open(path, "w") as f:
        block(f, "H", p.H)
        block(f, "g", p.g)
        block(f, "A_eq", p.A_eq)
        block(f, "b_eq", p.b_eq)
        block(f, "A_in", p.A_in)
        block(f, "b_in", p.b_in)


def load_instance(path) -> QPInstance:
    """Read back a dump_instance file."""
    blocks: dict[str, np.ndarray] = {}
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    i = 0
    while i < len(lines):
        name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
        blocks[name] = np.array(data).reshape(rows, cols)
        i += 1 + rows
    def vec(key):
        return blocks[key].ravel() if key in blocks else None
    return QPInstance(H=blocks["H"], g=vec("g"),
                      A_eq=blocks.get("A_eq"), b_eq=vec("b_eq"),
                      A_in=blocks.get("A_in"), b_in=vec("b_in"))
