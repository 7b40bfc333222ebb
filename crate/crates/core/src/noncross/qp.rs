//! Dense strictly convex QP: minimize `½θᵀCθ + dᵀθ` subject to `Aθ ≤ b`.
//!
//! Goldfarb–Idnani dual active-set method. The iteration starts from the
//! unconstrained minimizer, which is dual feasible, and adds violated
//! constraints one at a time while keeping the multipliers nonnegative. The
//! projected quantities are recomputed from a fresh factorization at every
//! step rather than updated, which costs `O(p²|A|)` per pivot.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Cholesky, Matrix};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub c_mat: Matrix,
    pub d: Vec<f64>,
    pub a_mat: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    pub theta: Vec<f64>,
    /// Indices of the constraints held at equality.
    pub active_set: Vec<usize>,
    /// Multipliers aligned with `active_set`; all nonnegative.
    pub dual: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
}

/// Largest violations of the three KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual_negativity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity).max(self.complementarity).max(self.dual_negativity)
    }
}

impl QpProblem {
    pub fn new(c_mat: Matrix, d: Vec<f64>, a_mat: Matrix, b: Vec<f64>) -> Result<Self> {
        let p = d.len();
        if c_mat.nrows() != p || c_mat.ncols() != p || a_mat.ncols() != p || a_mat.nrows() != b.len() {
            return Err(Error::invalid("QP dimensions do not agree"));
        }
        Ok(Self { c_mat, d, a_mat, b })
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        0.5 * dot(theta, &self.c_mat.mul_vec(theta)) + dot(&self.d, theta)
    }

    /// KKT residuals of `(theta, λ)` with `λ` supported on `active`.
    pub fn kkt(&self, theta: &[f64], active: &[usize], dual: &[f64]) -> KktResiduals {
        let slack: Vec<f64> = self.a_mat.mul_vec(theta).iter().zip(&self.b).map(|(a, b)| b - a).collect();
        let primal = slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max);
        let mut g = self.c_mat.mul_vec(theta);
        for (gi, di) in g.iter_mut().zip(&self.d) {
            *gi += di;
        }
        for (&i, &l) in active.iter().zip(dual) {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += l * self.a_mat[(i, j)];
            }
        }
        let complementarity = active.iter().zip(dual).map(|(&i, &l)| (l * slack[i]).abs()).fold(0.0, f64::max);
        let dual_negativity = dual.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
        KktResiduals { primal, stationarity: norm_inf(&g), complementarity, dual_negativity }
    }
}

/// Projections for the current active set: with `C = LLᵀ`, `V = L⁻¹N` and
/// `w = L⁻¹n_q`, returns `r = (VᵀV)⁻¹Vᵀw` and `z = L⁻ᵀ(w − Vr)`.
fn directions(l: &Cholesky, normals: &[Vec<f64>], nq: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = l.forward(nq);
    if normals.is_empty() {
        return Ok((Vec::new(), l.backward(&w)));
    }
    let v: Vec<Vec<f64>> = normals.iter().map(|n| l.forward(n)).collect();
    let k = v.len();
    let mut m = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let val = dot(&v[a], &v[b]);
            m[(a, b)] = val;
            m[(b, a)] = val;
        }
    }
    let rhs: Vec<f64> = v.iter().map(|vi| dot(vi, &w)).collect();
    let r = Cholesky::new(&m)?.solve(&rhs);
    let mut resid = w;
    for (vi, ri) in v.iter().zip(&r) {
        for (x, y) in resid.iter_mut().zip(vi) {
            *x -= ri * y;
        }
    }
    Ok((r, l.backward(&resid)))
}

/// Solves the QP; see the module documentation for the method.
pub fn qp_solve(problem: &QpProblem) -> Result<QpSolution> {
    let p = problem.d.len();
    let m = problem.b.len();
    let l = Cholesky::new(&problem.c_mat)?;
    let mut theta: Vec<f64> = l.solve(&problem.d).into_iter().map(|v| -v).collect();
    let theta_free = theta.clone();

    let b_scale = 1.0 + norm_inf(&problem.b);
    let viol_tol = 1e-12 * b_scale;
    let row = |i: usize| problem.a_mat.row(i);

    let mut active: Vec<usize> = Vec::new();
    // GI form uses normals n_i = −a_i and constraints n_iᵀθ ≥ −b_i.
    let mut normals: Vec<Vec<f64>> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let max_iter = 10 * (m + p) + 100;

    loop {
        // Most violated constraint.
        let ax = problem.a_mat.mul_vec(&theta);
        let mut worst = None;
        let mut worst_v = viol_tol;
        for i in 0..m {
            let v = ax[i] - problem.b[i];
            if v > worst_v && !active.contains(&i) {
                worst_v = v;
                worst = Some(i);
            }
        }
        let Some(q) = worst else { break };
        let nq: Vec<f64> = row(q).into_iter().map(|v| -v).collect();
        let mut u_q = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NotConverged { iterations, gradient_norm: worst_v });
            }
            let (r, z) = directions(&l, &normals, &nq)?;
            // s_q = n_qᵀθ − b'_q < 0 while q is violated.
            let s_q = dot(&nq, &theta) + problem.b[q];

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let ratio = u[j] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let zn = dot(&z, &nq);
            let z_zero = norm_inf(&z) <= 1e-14 * (1.0 + norm_inf(&nq));
            let t2 = if z_zero || zn <= 0.0 { f64::INFINITY } else { -s_q / zn };
            let t = t1.min(t2);
            if t.is_infinite() {
                return Err(Error::Infeasible);
            }

            if !t2.is_infinite() {
                for (x, zi) in theta.iter_mut().zip(&z) {
                    *x += t * zi;
                }
            }
            for (uj, rj) in u.iter_mut().zip(&r) {
                *uj -= t * rj;
            }
            u_q += t;

            if t == t2 {
                active.push(q);
                normals.push(nq.clone());
                u.push(u_q);
                break;
            }
            let j = drop.expect("partial step has a blocking constraint");
            active.remove(j);
            normals.remove(j);
            u.remove(j);
        }
        for uj in u.iter_mut() {
            *uj = uj.max(0.0);
        }
    }

    polish(problem, &l, &theta_free, &active, &mut theta, &mut u)?;
    Ok(QpSolution {
        objective: problem.objective(&theta),
        theta,
        active_set: active,
        dual: u,
        iterations,
    })
}

/// Re-solves the equality-constrained problem on the final active set:
/// `λ = M⁻¹(A_A θ₀ − b_A)`, `θ = θ₀ − C⁻¹A_Aᵀλ` with `M = A_A C⁻¹ A_Aᵀ`.
/// Kept only if it does not worsen the KKT residuals.
fn polish(problem: &QpProblem, l: &Cholesky, theta0: &[f64], active: &[usize], theta: &mut Vec<f64>, u: &mut Vec<f64>) -> Result<()> {
    if active.is_empty() {
        return Ok(());
    }
    let k = active.len();
    let rows: Vec<Vec<f64>> = active.iter().map(|&i| problem.a_mat.row(i)).collect();
    let cinv_rows: Vec<Vec<f64>> = rows.iter().map(|r| l.solve(r)).collect();
    let mut m = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            m[(a, b)] = dot(&rows[a], &cinv_rows[b]);
        }
    }
    crate::linalg::symmetrize(&mut m);
    let Ok(chol) = Cholesky::new(&m) else { return Ok(()) };
    let rhs: Vec<f64> = active.iter().zip(&rows).map(|(&i, r)| dot(r, theta0) - problem.b[i]).collect();
    let lam = chol.solve(&rhs);
    let mut cand = theta0.to_vec();
    for (lj, cr) in lam.iter().zip(&cinv_rows) {
        for (x, c) in cand.iter_mut().zip(cr) {
            *x -= lj * c;
        }
    }
    let before = problem.kkt(theta, active, u).max();
    let after = problem.kkt(&cand, active, &lam).max();
    if after <= before {
        *theta = cand;
        *u = lam;
    }
    Ok(())
}
