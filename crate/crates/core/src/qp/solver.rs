//! Dense strictly convex QP solver.
//!
//! Equalities are eliminated with a column-pivoted Householder QR of
//! `Aeq^T`; the reduced inequality-constrained problem is solved with the
//! Goldfarb-Idnani dual active-set method, which starts from the
//! unconstrained minimum and adds the most violated constraint each step.

use nalgebra::{DMatrix, DVector};

use super::{QpProblem, QpSolution, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative KKT tolerance for declaring a solution optimal.
    pub tol: f64,
    /// Cap on active-set changes.
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

pub fn solve(qp: &QpProblem, settings: &SolverSettings) -> QpSolution {
    let n = qp.num_vars();
    let elim = match eliminate_equalities(&qp.eq.a, &qp.eq.b) {
        Some(e) => e,
        None => return QpSolution::failed(n, QpStatus::Infeasible),
    };

    let hz = &qp.h * &elim.basis;
    let h_red = elim.basis.tr_mul(&hz);
    let f_red = elim.basis.tr_mul(&(&qp.h * &elim.particular + &qp.f));
    let a_red = &qp.ineq.a * &elim.basis;
    let b_red = &qp.ineq.b - &qp.ineq.a * &elim.particular;

    let dual = dual_active_set(&h_red, &f_red, &a_red, &b_red, settings.max_iter);
    let (y, lambda, status) = match dual {
        DualOutcome::Optimal { y, lambda } => (y, lambda, QpStatus::Optimal),
        DualOutcome::Infeasible => return QpSolution::failed(n, QpStatus::Infeasible),
        DualOutcome::IterationLimit { y, lambda } => (y, lambda, QpStatus::IterationLimit),
        DualOutcome::NotConvex => return QpSolution::failed(n, QpStatus::Infeasible),
    };

    let z = &elim.particular + &elim.basis * &y;
    let gradient = &qp.h * &z + &qp.f + qp.ineq.a.tr_mul(&lambda);
    let nu = elim.equality_multipliers(&(-&gradient));
    let objective = 0.5 * z.dot(&(&qp.h * &z)) + qp.f.dot(&z);

    let mut solution = QpSolution {
        kkt_residual: 0.0,
        z,
        status,
        objective,
        eq_multipliers: nu,
        ineq_multipliers: lambda,
    };
    solution.kkt_residual = relative_kkt_residual(qp, &solution);
    if solution.status == QpStatus::Optimal && !(solution.kkt_residual <= settings.tol) {
        log::debug!("kkt residual {} above tolerance", solution.kkt_residual);
        solution.status = QpStatus::IterationLimit;
    }
    solution
}

/// Largest KKT violation, with stationarity and complementarity scaled by
/// the magnitude of the problem data.
pub fn relative_kkt_residual(qp: &QpProblem, sol: &QpSolution) -> f64 {
    let z = &sol.z;
    let scale = 1.0_f64.max(qp.f.amax()).max(qp.h.amax() * z.amax());
    let stationarity = (&qp.h * z
        + &qp.f
        + qp.eq.a.tr_mul(&sol.eq_multipliers)
        + qp.ineq.a.tr_mul(&sol.ineq_multipliers))
    .amax();
    let eq = if qp.eq.is_empty() {
        0.0
    } else {
        qp.eq.max_residual_eq(z)
    };
    let slack = &qp.ineq.b - &qp.ineq.a * z;
    let ineq = slack.iter().fold(0.0_f64, |acc, s| acc.max(-s));
    let dual = sol
        .ineq_multipliers
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(-l));
    let compl = sol
        .ineq_multipliers
        .iter()
        .zip(slack.iter())
        .fold(0.0_f64, |acc, (l, s)| acc.max((l * s).abs()));
    (stationarity / scale)
        .max(eq)
        .max(ineq)
        .max(dual)
        .max(compl / scale)
}

struct Elimination {
    /// Orthonormal `n x n` factor; leading `rank` columns span the row space.
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    perm: Vec<usize>,
    rank: usize,
    particular: DVector<f64>,
    basis: DMatrix<f64>,
}

impl Elimination {
    /// Least-squares `nu` with `Aeq^T nu = rhs`.
    fn equality_multipliers(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let m = self.perm.len();
        let mut nu = DVector::zeros(m);
        if self.rank == 0 {
            return nu;
        }
        let k = self.rank;
        let proj = self.q.columns(0, k).tr_mul(rhs);
        let mut w = DVector::zeros(k);
        for i in (0..k).rev() {
            let mut acc = proj[i];
            for j in i + 1..k {
                acc -= self.r[(i, j)] * w[j];
            }
            w[i] = acc / self.r[(i, i)];
        }
        for i in 0..k {
            nu[self.perm[i]] = w[i];
        }
        nu
    }
}

fn eliminate_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Elimination> {
    let n = a.ncols();
    let m = a.nrows();
    let mut work = a.transpose(); // n x m
    let mut q = DMatrix::<f64>::identity(n, n);
    let mut perm: Vec<usize> = (0..m).collect();

    let initial_scale = (0..m)
        .map(|c| work.column(c).norm())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let rank_tol = 1e-10 * initial_scale;

    let mut rank = 0;
    for j in 0..m.min(n) {
        let (pivot, norm) = (j..m)
            .map(|c| (c, work.view((j, c), (n - j, 1)).norm()))
            .fold(
                (j, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if norm <= rank_tol {
            break;
        }
        if pivot != j {
            work.swap_columns(j, pivot);
            perm.swap(j, pivot);
        }
        // Householder vector for work[j.., j].
        let mut v: DVector<f64> = work
            .view((j, j), (n - j, 1))
            .into_owned()
            .column(0)
            .into_owned();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            let beta = 2.0 / vnorm2;
            for c in j..m {
                let dot: f64 = (0..n - j).map(|i| v[i] * work[(j + i, c)]).sum();
                let s = beta * dot;
                for i in 0..n - j {
                    work[(j + i, c)] -= s * v[i];
                }
            }
            for row in 0..n {
                let dot: f64 = (0..n - j).map(|i| q[(row, j + i)] * v[i]).sum();
                let s = beta * dot;
                for i in 0..n - j {
                    q[(row, j + i)] -= s * v[i];
                }
            }
        }
        rank += 1;
    }

    // R^T y = P^T b, split at the rank.
    let k = rank;
    let mut y1 = DVector::zeros(k);
    for i in 0..k {
        let mut acc = b[perm[i]];
        for j in 0..i {
            acc -= work[(j, i)] * y1[j];
        }
        y1[i] = acc / work[(i, i)];
    }
    let b_scale = 1.0_f64.max(b.amax());
    for i in k..m {
        let mut acc = b[perm[i]];
        for j in 0..k {
            acc -= work[(j, i)] * y1[j];
        }
        if acc.abs() > 1e-8 * b_scale {
            return None;
        }
    }
    let particular = if k == 0 {
        DVector::zeros(n)
    } else {
        q.columns(0, k) * &y1
    };
    let basis = q.columns(k, n - k).into_owned();
    Some(Elimination {
        q,
        r: work,
        perm,
        rank,
        particular,
        basis,
    })
}

enum DualOutcome {
    Optimal {
        y: DVector<f64>,
        lambda: DVector<f64>,
    },
    IterationLimit {
        y: DVector<f64>,
        lambda: DVector<f64>,
    },
    Infeasible,
    NotConvex,
}

fn cholesky_inverse_factor(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = h.nrows();
    let mut reg = 0.0;
    let base = h.amax().max(1e-300);
    for _ in 0..6 {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if let Some(chol) = m.cholesky() {
            // J = L^-T
            let l_inv = chol.l().solve_lower_triangular(&DMatrix::identity(n, n))?;
            return Some(l_inv.transpose());
        }
        reg = if reg == 0.0 {
            1e-12 * base
        } else {
            reg * 100.0
        };
    }
    None
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let rho = a.hypot(b);
    if rho == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / rho, b / rho, rho)
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (x, y) = (m[(row, i)], m[(row, j)]);
        m[(row, i)] = c * x + s * y;
        m[(row, j)] = -s * x + c * y;
    }
}

/// min 0.5 y'Hy + f'y  s.t.  A y <= b
fn dual_active_set(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    max_iter: usize,
) -> DualOutcome {
    let n = h.nrows();
    let m = a.nrows();
    if n == 0 {
        let infeasible = b.iter().any(|v| *v < -1e-9);
        return if infeasible {
            DualOutcome::Infeasible
        } else {
            DualOutcome::Optimal {
                y: DVector::zeros(0),
                lambda: DVector::zeros(m),
            }
        };
    }
    let Some(mut j) = cholesky_inverse_factor(h) else {
        return DualOutcome::NotConvex;
    };
    let mut y = -(&j * j.tr_mul(f));
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n);
    let mut is_active = vec![false; m];

    let row_norms: Vec<f64> = (0..m).map(|i| a.row(i).amax()).collect();
    let mut iterations = 0;

    let lambda_of = |active: &[usize], u: &[f64]| {
        let mut lambda = DVector::zeros(m);
        for (idx, &c) in active.iter().enumerate() {
            lambda[c] = u[idx].max(0.0);
        }
        lambda
    };

    loop {
        // Step 1: most violated inactive constraint, measured as a y - b > 0.
        let ay = a * &y;
        let y_scale = y.amax();
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if is_active[i] || row_norms[i] == 0.0 {
                continue;
            }
            let viol = ay[i] - b[i];
            let tol = 1e-10 * (1.0 + b[i].abs() + row_norms[i] * y_scale);
            if viol > tol {
                let scaled = viol / row_norms[i];
                if pick.is_none_or(|(_, best)| scaled > best) {
                    pick = Some((i, scaled));
                }
            }
        }
        let Some((p, _)) = pick else {
            return DualOutcome::Optimal {
                y,
                lambda: lambda_of(&active, &u),
            };
        };
        // Internally constraints are n'y >= c with n = -a_p, c = -b_p.
        let np: DVector<f64> = -a.row(p).transpose();
        let cp = -b[p];
        let mut u_new = 0.0_f64;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return DualOutcome::IterationLimit {
                    y,
                    lambda: lambda_of(&active, &u),
                };
            }
            let q = active.len();
            let d = j.tr_mul(&np);
            let z = if q < n {
                j.columns(q, n - q) * d.rows(q, n - q)
            } else {
                DVector::zeros(n)
            };
            // r_dir = R^-1 d[..q]
            let mut r_dir = vec![0.0; q];
            for i in (0..q).rev() {
                let mut acc = d[i];
                for k in i + 1..q {
                    acc -= r[(i, k)] * r_dir[k];
                }
                r_dir[i] = acc / r[(i, i)];
            }

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (i, rd) in r_dir.iter().enumerate() {
                if *rd > 0.0 {
                    let ratio = u[i] / rd;
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(i);
                    }
                }
            }
            let zn = z.dot(&np);
            let slack = np.dot(&y) - cp;
            let z_tiny = z.amax() <= 1e-14 * (1.0 + np.amax());
            let t2 = if z_tiny || zn <= 0.0 {
                f64::INFINITY
            } else {
                -slack / zn
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return DualOutcome::Infeasible;
            }

            if t2.is_infinite() {
                // Pure dual step, then drop the blocking constraint.
                for (ui, rd) in u.iter_mut().zip(&r_dir) {
                    *ui -= t * rd;
                }
                u_new += t;
                let k = drop.expect("finite t1 implies a blocking constraint");
                remove_active(&mut j, &mut r, &mut active, &mut u, &mut is_active, k);
                continue;
            }

            y += &z * t;
            for (ui, rd) in u.iter_mut().zip(&r_dir) {
                *ui -= t * rd;
            }
            u_new += t;

            if t2 <= t1 {
                // Full step: constraint p becomes active.
                let mut d = d;
                for i in (q + 1..n).rev() {
                    let (c, s, rho) = givens(d[i - 1], d[i]);
                    if s != 0.0 {
                        d[i - 1] = rho;
                        d[i] = 0.0;
                        rotate_columns(&mut j, i - 1, i, c, s);
                    }
                }
                for i in 0..=q {
                    r[(i, q)] = d[i];
                }
                active.push(p);
                u.push(u_new);
                is_active[p] = true;
                break;
            }
            let k = drop.expect("partial step implies a blocking constraint");
            remove_active(&mut j, &mut r, &mut active, &mut u, &mut is_active, k);
        }
    }
}

fn remove_active(
    j: &mut DMatrix<f64>,
    r: &mut DMatrix<f64>,
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    is_active: &mut [bool],
    k: usize,
) {
    let q = active.len();
    is_active[active[k]] = false;
    active.remove(k);
    u.remove(k);
    for c in k..q - 1 {
        for i in 0..=c + 1 {
            r[(i, c)] = r[(i, c + 1)];
        }
    }
    for i in 0..q {
        r[(i, q - 1)] = 0.0;
    }
    for c in k..q - 1 {
        let (cs, sn, rho) = givens(r[(c, c)], r[(c + 1, c)]);
        if sn == 0.0 {
            continue;
        }
        r[(c, c)] = rho;
        r[(c + 1, c)] = 0.0;
        for col in c + 1..q - 1 {
            let (x, yv) = (r[(c, col)], r[(c + 1, col)]);
            r[(c, col)] = cs * x + sn * yv;
            r[(c + 1, col)] = -sn * x + cs * yv;
        }
        rotate_columns(j, c, c + 1, cs, sn);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LinearRows;

    fn problem(h: DMatrix<f64>, f: DVector<f64>, eq: LinearRows, ineq: LinearRows) -> QpProblem {
        let n = h.nrows();
        QpProblem {
            h,
            f,
            eq,
            ineq,
            slack: n..n,
        }
    }

    #[test]
    fn equality_pins_first_coordinate() {
        let n = 4;
        let qp = problem(
            DMatrix::identity(n, n) * 2.0,
            DVector::zeros(n),
            LinearRows::new(
                DMatrix::from_row_slice(1, n, &[1.0, 0.0, 0.0, 0.0]),
                DVector::from_element(1, 1.0),
            ),
            LinearRows::empty(n),
        );
        let sol = solve(&qp, &SolverSettings::default());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
        assert!(sol.z.rows(1, 3).amax() < 1e-12);
    }

    #[test]
    fn active_bound_in_one_dimension() {
        // (z - 2)^2 = z^2 - 4z + 4, as 0.5 * 2 z^2 - 4 z
        let qp = problem(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -4.0),
            LinearRows::empty(1),
            LinearRows::new(
                DMatrix::from_element(1, 1, 1.0),
                DVector::from_element(1, 1.0),
            ),
        );
        let sol = solve(&qp, &SolverSettings::default());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
        assert!((sol.ineq_multipliers[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let qp = problem(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            LinearRows::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
                DVector::from_vec(vec![1.0, 3.0]),
            ),
            LinearRows::empty(2),
        );
        assert_eq!(
            solve(&qp, &SolverSettings::default()).status,
            QpStatus::Infeasible
        );
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let qp = problem(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            LinearRows::empty(1),
            LinearRows::new(
                DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
                DVector::from_vec(vec![-1.0, -1.0]),
            ),
        );
        assert_eq!(
            solve(&qp, &SolverSettings::default()).status,
            QpStatus::Infeasible
        );
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let qp = problem(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            LinearRows::new(
                DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]),
                DVector::from_vec(vec![1.0, 2.0]),
            ),
            LinearRows::empty(3),
        );
        let sol = solve(&qp, &SolverSettings::default());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] + sol.z[1] - 1.0).abs() < 1e-12);
        assert!((sol.z[2] + 1.0).abs() < 1e-12);
    }
}
