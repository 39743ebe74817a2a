//! Thin convex-QP subsolver wrapper: minimize 1/2 x'Px + q'x subject to
//! linear equalities and inequalities. The interior-point backend is an
//! implementation detail behind this interface.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("malformed qp: {0}")]
    Malformed(String),
    #[error("subsolver did not converge (status {0})")]
    NotConverged(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vec<f64>,
    pub obj: f64,
}

/// Sparse row: sum of coeff*var `terms` compared against `rhs`.
#[derive(Debug, Clone)]
pub struct QpRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct QpProblem {
    pub n: usize,
    /// Quadratic cost triplets (i, j, v) for 1/2 x'Px, symmetric full form;
    /// duplicates are summed.
    pub p_triplets: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub eq: Vec<QpRow>,    // a.x == rhs
    pub ineq: Vec<QpRow>,  // a.x <= rhs
}

impl QpProblem {
    pub fn new(n: usize) -> Self {
        QpProblem { n, q: vec![0.0; n], ..Default::default() }
    }
}

/// Build a CSC matrix from triplets (duplicates summed, rows sorted).
fn csc_from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, v) in triplets {
        cols[j].push((i, v));
    }
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|&(i, _)| i);
        let mut k = 0;
        while k < col.len() {
            let row = col[k].0;
            let mut v = 0.0;
            while k < col.len() && col[k].0 == row {
                v += col[k].1;
                k += 1;
            }
            rowval.push(row);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    let n = p.n;
    if p.q.len() != n {
        return Err(QpError::Malformed("q length != n".into()));
    }
    // upper-triangular half of P
    let mut p_upper = Vec::with_capacity(p.p_triplets.len());
    for &(i, j, v) in &p.p_triplets {
        if i >= n || j >= n {
            return Err(QpError::Malformed("P index out of range".into()));
        }
        if i <= j {
            p_upper.push((i, j, v));
        }
    }
    let pm = csc_from_triplets(n, n, &p_upper);

    // constraint matrix: equality rows first, then inequalities
    let m_eq = p.eq.len();
    let m_in = p.ineq.len();
    let mut a_trip = Vec::new();
    let mut b = Vec::with_capacity(m_eq + m_in);
    for (r, row) in p.eq.iter().chain(p.ineq.iter()).enumerate() {
        for &(j, v) in &row.terms {
            if j >= n {
                return Err(QpError::Malformed("constraint index out of range".into()));
            }
            a_trip.push((r, j, v));
        }
        b.push(row.rhs);
    }
    let am = csc_from_triplets(m_eq + m_in, n, &a_trip);
    let cones: Vec<SupportedConeT<f64>> = vec![ZeroConeT(m_eq), NonnegativeConeT(m_in)];

    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        tol_feas: 1e-9,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&pm, &p.q, &am, &b, &cones, settings)
        .map_err(|e| QpError::Malformed(format!("{e:?}")))?;
    solver.solve();

    let status = solver.solution.status;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(QpSolution {
            status: QpStatus::Optimal,
            x: solver.solution.x.clone(),
            obj: solver.solution.obj_val,
        }),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Ok(QpSolution {
            status: QpStatus::Infeasible,
            x: vec![0.0; n],
            obj: f64::INFINITY,
        }),
        // an unbounded-below QP over our bounded binaries should not occur
        other => Err(QpError::NotConverged(format!("{other:?}"))),
    }
}
