//! Brute-force curvature in Euler-angle coordinates `(u, θ, φ, ψ)` on `R × S³`.
//!
//! The metric is `f du² + a σ1² + b σ2² + c σ3²` with the left-invariant forms
//! `σ1 = ½(sinψ dθ − sinθ cosψ dφ)`, `σ2 = ½(−cosψ dθ − sinθ sinψ dφ)`,
//! `σ3 = ½(dψ + cosθ dφ)`, for which `dσ_i = 2 σ_j ∧ σ_k`.
//! Christoffel symbols come from central differences of the coordinate metric and the
//! curvature from central differences of the Christoffel symbols.

type M4 = [[f64; 4]; 4];
type G3 = [[[f64; 4]; 4]; 4];

pub struct Chart<F: Fn(f64) -> [f64; 4]> {
    pub comps: F,
    pub h1: f64,
    pub h2: f64,
}

/// Rows: coordinate components of `du, σ1, σ2, σ3`.
pub fn coframe(x: [f64; 4]) -> M4 {
    let (th, ps) = (x[1], x[3]);
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.5 * ps.sin(), -0.5 * th.sin() * ps.cos(), 0.0],
        [0.0, -0.5 * ps.cos(), -0.5 * th.sin() * ps.sin(), 0.0],
        [0.0, 0.0, 0.5 * th.cos(), 0.5],
    ]
}

pub fn invert(m: &M4) -> M4 {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for i in 0..4 {
        inv[i][i] = 1.0;
    }
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for k in 0..4 {
            a[c][k] /= d;
            inv[c][k] /= d;
        }
        for r in 0..4 {
            if r != c {
                let f = a[r][c];
                for k in 0..4 {
                    a[r][k] -= f * a[c][k];
                    inv[r][k] -= f * inv[c][k];
                }
            }
        }
    }
    inv
}

impl<F: Fn(f64) -> [f64; 4]> Chart<F> {
    pub fn metric(&self, x: [f64; 4]) -> M4 {
        let w = coframe(x);
        let c = (self.comps)(x[0]);
        let mut g = [[0.0; 4]; 4];
        for m in 0..4 {
            for n in 0..4 {
                g[m][n] = (0..4).map(|a| c[a] * w[a][m] * w[a][n]).sum();
            }
        }
        g
    }

    pub fn christoffel(&self, x: [f64; 4]) -> G3 {
        let h = self.h1;
        let mut dg = [[[0.0; 4]; 4]; 4];
        for l in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += h;
            xm[l] -= h;
            let gp = self.metric(xp);
            let gm = self.metric(xm);
            for m in 0..4 {
                for n in 0..4 {
                    dg[l][m][n] = (gp[m][n] - gm[m][n]) / (2.0 * h);
                }
            }
        }
        let gi = invert(&self.metric(x));
        let mut gam = [[[0.0; 4]; 4]; 4];
        for k in 0..4 {
            for i in 0..4 {
                for j in 0..4 {
                    gam[k][i][j] = (0..4)
                        .map(|l| 0.5 * gi[k][l] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]))
                        .sum();
                }
            }
        }
        gam
    }

    /// `R^ρ_{σμν}` indexed `[ρ][σ][μ][ν]`.
    pub fn riemann(&self, x: [f64; 4]) -> [[M4; 4]; 4] {
        let h = self.h2;
        let g0 = self.christoffel(x);
        let mut dgam = [[[[0.0; 4]; 4]; 4]; 4];
        for l in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += h;
            xm[l] -= h;
            let a = self.christoffel(xp);
            let b = self.christoffel(xm);
            for k in 0..4 {
                for i in 0..4 {
                    for j in 0..4 {
                        dgam[l][k][i][j] = (a[k][i][j] - b[k][i][j]) / (2.0 * h);
                    }
                }
            }
        }
        let mut r = [[[[0.0; 4]; 4]; 4]; 4];
        for rho in 0..4 {
            for sig in 0..4 {
                for mu in 0..4 {
                    for nu in 0..4 {
                        let mut v = dgam[mu][rho][nu][sig] - dgam[nu][rho][mu][sig];
                        for lam in 0..4 {
                            v += g0[rho][mu][lam] * g0[lam][nu][sig] - g0[rho][nu][lam] * g0[lam][mu][sig];
                        }
                        r[rho][sig][mu][nu] = v;
                    }
                }
            }
        }
        r
    }

    /// Orthonormal frame vectors `e_a` as rows of coordinate components.
    pub fn frame(&self, x: [f64; 4]) -> M4 {
        let w = coframe(x);
        let dual = invert(&w);
        let c = (self.comps)(x[0]);
        let mut e = [[0.0; 4]; 4];
        for a in 0..4 {
            for m in 0..4 {
                e[a][m] = dual[m][a] / c[a].sqrt();
            }
        }
        e
    }

    /// Sectional curvatures `K_ab = g(R(e_a,e_b)e_b, e_a)`.
    pub fn sectional(&self, x: [f64; 4]) -> M4 {
        let r = self.riemann(x);
        let g = self.metric(x);
        let e = self.frame(x);
        let mut k = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let mut s = 0.0;
                for rho in 0..4 {
                    for sig in 0..4 {
                        for mu in 0..4 {
                            for nu in 0..4 {
                                let rv = r[rho][sig][mu][nu] * e[a][mu] * e[b][nu] * e[b][sig];
                                if rv != 0.0 {
                                    s += (0..4).map(|t| g[rho][t] * e[a][t]).sum::<f64>() * rv;
                                }
                            }
                        }
                    }
                }
                k[a][b] = s;
            }
        }
        k
    }

    /// Frame components of the Ricci tensor, `Ric_aa = Σ_μ R^μ_{σμν} e_a^σ e_a^ν`.
    pub fn ricci(&self, x: [f64; 4]) -> [f64; 4] {
        let r = self.riemann(x);
        let e = self.frame(x);
        std::array::from_fn(|a| {
            let mut s = 0.0;
            for mu in 0..4 {
                for sig in 0..4 {
                    for nu in 0..4 {
                        s += r[mu][sig][mu][nu] * e[a][sig] * e[a][nu];
                    }
                }
            }
            s
        })
    }
}

/// `V^u = g^{ij}(Γ(g)^u_ij − Γ(h)^u_ij)` in the chart.
pub fn deturck_u<F: Fn(f64) -> [f64; 4], G: Fn(f64) -> [f64; 4]>(g: &Chart<F>, h: &Chart<G>, x: [f64; 4]) -> f64 {
    let gi = invert(&g.metric(x));
    let a = g.christoffel(x);
    let b = h.christoffel(x);
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            s += gi[i][j] * (a[0][i][j] - b[0][i][j]);
        }
    }
    s
}
