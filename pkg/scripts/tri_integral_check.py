import numpy as np

def tri_integrals(pa, pb, pc, pts):
    """I = int dA'/|r-r'| and G = grad_r I, for unit-density triangles.
    All inputs (K,3); returns I (K,), G (K,3)."""
    pa, pb, pc, pts = (np.asarray(x, float) for x in (pa, pb, pc, pts))
    n = np.cross(pb - pa, pc - pa)
    nn = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / nn
    d = np.einsum("kj,kj->k", pts - pa, n)
    rho = pts - d[:, None] * n
    I = np.zeros(len(pts))
    Gm = np.zeros_like(pts)
    for v1, v2 in ((pa, pb), (pb, pc), (pc, pa)):
        s = v2 - v1
        ls = np.linalg.norm(s, axis=-1, keepdims=True)
        sh = s / ls
        mh = np.cross(sh, n)
        t = np.einsum("kj,kj->k", v1 - rho, mh)
        lm = np.einsum("kj,kj->k", v1 - rho, sh)
        lp = np.einsum("kj,kj->k", v2 - rho, sh)
        Rm = np.linalg.norm(pts - v1, axis=-1)
        Rp = np.linalg.norm(pts - v2, axis=-1)
        num1, den1 = Rp + lp, Rm + lm
        num2, den2 = Rm - lm, Rp - lp
        use1 = den1 >= den2
        with np.errstate(divide="ignore", invalid="ignore"):
            L = np.where(use1, np.log(np.where(use1, num1/np.where(den1==0,1,den1), 1.0)),
                         np.log(np.where(~use1, num2/np.where(den2==0,1,den2), 1.0)))
        perp2 = t*t + d*d
        L = np.where(perp2 < (1e-14*ls[:,0])**2, 0.0, L)
        I += t * L
        Gm += mh * L[:, None]
    # signed solid angle (Van Oosterom-Strackee), from pts
    r1, r2, r3 = pa - pts, pb - pts, pc - pts
    n1 = np.linalg.norm(r1, axis=-1); n2 = np.linalg.norm(r2, axis=-1); n3 = np.linalg.norm(r3, axis=-1)
    numo = np.einsum("kj,kj->k", r1, np.cross(r2, r3))
    deno = n1*n2*n3 + np.einsum("kj,kj->k",r1,r2)*n3 + np.einsum("kj,kj->k",r1,r3)*n2 + np.einsum("kj,kj->k",r2,r3)*n1
    omega = 2.0*np.arctan2(numo, deno)
    I_total = I - d*omega*SIGN_I
    G = -Gm*SIGN_GM - n*(omega*SIGN_GN)[:, None]
    return I_total, G

def quad_ref(pa, pb, pc, r, n=400):
    # midpoint quadrature on barycentric grid
    u = (np.arange(n)+0.5)/n
    U, V = np.meshgrid(u, u)
    mask = U+V < 1.0
    U, V = U[mask], V[mask]
    P = pa[None,:] + U[:,None]*(pb-pa)[None,:] + V[:,None]*(pc-pa)[None,:]
    area2 = np.linalg.norm(np.cross(pb-pa, pc-pa))
    dA = area2/(n*n)
    dr = r[None,:]-P
    R = np.linalg.norm(dr, axis=1)
    I = (dA/R).sum()
    G = (dA*dr/R[:,None]**3).sum(axis=0)  # grad_r of 1/|r-r'| = -(r-r')/R^3... check: d/dr |r-p|^-1 = -(r-p)/R^3
    return I, -G

pa = np.array([0.,0.,0.]); pb = np.array([1.,0.2,0.]); pc = np.array([0.3,1.1,0.4])
tests = [np.array([0.5,0.3,0.8]), np.array([2.0,-1.0,0.5]), np.array([0.4,0.4,0.05]), np.array([0.4,0.4,-0.6])]
for SIGN_I, SIGN_GM, SIGN_GN in [(1,1,1),(1,1,-1),(-1,1,1),(1,-1,1),(-1,-1,-1),(1,-1,-1)]:
    ok = True
    for r in tests:
        I,G = tri_integrals(pa[None],pb[None],pc[None],r[None])
        Iq,Gq = quad_ref(pa,pb,pc,r)
        if abs(I[0]-Iq)/abs(Iq) > 2e-3 or np.linalg.norm(G[0]-Gq)/np.linalg.norm(Gq) > 5e-3:
            ok = False
            break
    print(SIGN_I, SIGN_GM, SIGN_GN, "OK" if ok else f"no  (I {I[0]:.6f} vs {Iq:.6f}; G {G[0]} vs {Gq})")
