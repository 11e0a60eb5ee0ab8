//! Sparse convex quadratic programs `min ½xᵀPx + qᵀx  s.t.  lo ≤ Mx ≤ hi`.
//!
//! The numerical work is done by the `clarabel` interior-point solver. This
//! module owns the problem format, a light presolve (row scaling and exact
//! duplicate merging), the mapping of cone duals back to signed row
//! multipliers, independent residual checks and a reusable workspace.
//!
//! Multiplier convention: `Px + q = Mᵀy`, with `y_i ≥ 0` when the lower bound
//! of row `i` is active and `y_i ≤ 0` when the upper bound is active.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use nalgebra::DMatrix;

use crate::error::{dim_check, Error, Result};

/// Bound magnitude treated as infinite.
pub const INF: f64 = 1e30;

const INF_THRESHOLD: f64 = 1e20;

fn is_inf(b: f64) -> bool {
    !b.is_finite() || b.abs() >= INF_THRESHOLD
}

/// Coordinate-format sparse matrix. Repeated entries are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseMatrix { nrows, ncols, entries: Vec::new() }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut s = SparseMatrix::new(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                s.push(r, c, m[(r, c)]);
            }
        }
        s
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Entries grouped by row, sorted by column, duplicates summed.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nrows];
        for &(r, c, v) in &self.entries {
            rows[r].push((c, v));
        }
        for row in rows.iter_mut() {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|e| e.1 != 0.0);
            *row = merged;
        }
        rows
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
        }
        out
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            out[c] += v * y[r];
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    fn max_asymmetry(&self) -> f64 {
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        for &(r, c, v) in &self.entries {
            *map.entry((r, c)).or_insert(0.0) += v;
        }
        map.iter()
            .map(|(&(r, c), &v)| (v - map.get(&(c, r)).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    }
}

/// `min ½xᵀPx + qᵀx  s.t.  lo ≤ Mx ≤ hi`; `P` is stored as a full symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub m: SparseMatrix,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new(
        p: SparseMatrix,
        q: Vec<f64>,
        m: SparseMatrix,
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<Self> {
        let n = q.len();
        dim_check(p.nrows == n && p.ncols == n, || {
            format!("P is {}x{}, expected {n}x{n}", p.nrows, p.ncols)
        })?;
        dim_check(m.ncols == n, || format!("M has {} columns, expected {n}", m.ncols))?;
        dim_check(lo.len() == m.nrows && hi.len() == m.nrows, || {
            format!("bounds have lengths {}/{}, M has {} rows", lo.len(), hi.len(), m.nrows)
        })?;
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i] || lo[i].is_nan() || hi[i].is_nan()) {
            return Err(Error::Invalid(format!("row {i}: lo {} > hi {}", lo[i], hi[i])));
        }
        let asym = p.max_asymmetry();
        if asym > 1e-12 {
            return Err(Error::Invalid(format!("P is not symmetric (residual {asym:e})")));
        }
        Ok(QuadraticProgram { p, q, m, lo, hi })
    }

    pub fn lp(c: Vec<f64>, m: SparseMatrix, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let n = c.len();
        QuadraticProgram::new(SparseMatrix::new(n, n), c, m, lo, hi)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.m.nrows
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    /// Largest bound violation of `lo ≤ Mx ≤ hi` (zero if satisfied).
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mx = self.m.mul_vec(x);
        let mut r: f64 = 0.0;
        for i in 0..mx.len() {
            if !is_inf(self.hi[i]) {
                r = r.max(mx[i] - self.hi[i]);
            }
            if !is_inf(self.lo[i]) {
                r = r.max(self.lo[i] - mx[i]);
            }
        }
        r
    }

    /// `‖Px + q − Mᵀy‖∞`.
    pub fn dual_residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        let mty = self.m.tr_mul_vec(y);
        (0..x.len())
            .map(|i| (px[i] + self.q[i] - mty[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Lagrangian dual value at `(x, y)`, valid when `Px + q = Mᵀy`.
    pub fn dual_objective(&self, x: &[f64], y: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        let mut val = -0.5 * dot(x, &px);
        for i in 0..y.len() {
            if y[i] > 0.0 && !is_inf(self.lo[i]) {
                val += y[i] * self.lo[i];
            } else if y[i] < 0.0 && !is_inf(self.hi[i]) {
                val += y[i] * self.hi[i];
            }
        }
        val
    }

    /// Writes the problem as a plain-text triplet listing.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "qp {} {}", self.num_vars(), self.num_rows());
        for &(r, c, v) in &self.p.entries {
            let _ = writeln!(s, "P {r} {c} {v:?}");
        }
        for (i, v) in self.q.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "q {i} {v:?}");
            }
        }
        for &(r, c, v) in &self.m.entries {
            let _ = writeln!(s, "M {r} {c} {v:?}");
        }
        for i in 0..self.lo.len() {
            let _ = writeln!(s, "b {i} {:?} {:?}", self.lo[i], self.hi[i]);
        }
        s
    }

    /// Parses the format produced by [`QuadraticProgram::dump`].
    pub fn load(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Io(format!("malformed qp line: {line}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Io("empty qp file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "qp" {
            return Err(bad(header));
        }
        let n: usize = h[1].parse().map_err(|_| bad(header))?;
        let rows: usize = h[2].parse().map_err(|_| bad(header))?;
        let mut p = SparseMatrix::new(n, n);
        let mut m = SparseMatrix::new(rows, n);
        let mut q = vec![0.0; n];
        let mut lo = vec![-INF; rows];
        let mut hi = vec![INF; rows];
        for line in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<f64> { t.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| bad(line)) };
            let idx = |k: usize| -> Result<usize> { t.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| bad(line)) };
            match t.first().copied() {
                Some("P") => p.push(idx(1)?, idx(2)?, num(3)?),
                Some("M") => m.push(idx(1)?, idx(2)?, num(3)?),
                Some("q") => q[idx(1)?] = num(2)?,
                Some("b") => {
                    let i = idx(1)?;
                    lo[i] = num(2)?;
                    hi[i] = num(3)?;
                }
                _ => return Err(bad(line)),
            }
        }
        QuadraticProgram::new(p, q, m, lo, hi)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Incremental row/cost assembly for [`QuadraticProgram`].
#[derive(Debug, Clone)]
pub struct QpBuilder {
    n: usize,
    p: SparseMatrix,
    q: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl QpBuilder {
    pub fn new(n: usize) -> Self {
        QpBuilder {
            n,
            p: SparseMatrix::new(n, n),
            q: vec![0.0; n],
            rows: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds `½ v·P[i][j]` style entries: `w·x_i·x_j` for `i ≠ j` counts both halves.
    pub fn add_quad(&mut self, i: usize, j: usize, v: f64) {
        self.p.push(i, j, v);
    }

    /// Adds `½ xᵀ(2·wwᵀ)x = (wᵀx)²·weight` for a sparse linear form `w`.
    pub fn add_square_of(&mut self, form: &[(usize, f64)], weight: f64) {
        for &(i, a) in form {
            for &(j, b) in form {
                self.p.push(i, j, 2.0 * weight * a * b);
            }
        }
    }

    pub fn add_linear(&mut self, i: usize, v: f64) {
        self.q[i] += v;
    }

    pub fn add_row(&mut self, entries: Vec<(usize, f64)>, lo: f64, hi: f64) -> usize {
        self.rows.push(entries);
        self.lo.push(lo);
        self.hi.push(hi);
        self.rows.len() - 1
    }

    pub fn set_bounds(&mut self, row: usize, lo: f64, hi: f64) {
        self.lo[row] = lo;
        self.hi[row] = hi;
    }

    pub fn build(self) -> Result<QuadraticProgram> {
        let mut m = SparseMatrix::new(self.rows.len(), self.n);
        for (r, row) in self.rows.into_iter().enumerate() {
            for (c, v) in row {
                m.push(r, c, v);
            }
        }
        QuadraticProgram::new(self.p, self.q, m, self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: u32,
    pub time_limit: f64,
    /// Normalize every row to unit ∞-norm before solving.
    pub scale_rows: bool,
    /// Merge rows that are identical after scaling.
    pub merge_duplicates: bool,
    pub verbose: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings::geometry()
    }
}

impl Settings {
    /// Tolerances for support, interior-point and Pareto LPs.
    pub fn geometry() -> Self {
        Settings {
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            max_iter: 200,
            time_limit: f64::INFINITY,
            scale_rows: true,
            merge_duplicates: true,
            verbose: false,
        }
    }

    /// Tolerances for receding-horizon QPs.
    pub fn mpc() -> Self {
        Settings { eps_abs: 1e-7, eps_rel: 1e-7, ..Settings::geometry() }
    }

    /// Tight tolerances for accuracy-critical comparisons.
    pub fn precise() -> Self {
        Settings { eps_abs: 1e-10, eps_rel: 1e-12, max_iter: 400, ..Settings::geometry() }
    }

    fn clarabel(&self) -> DefaultSettings<f64> {
        DefaultSettings {
            verbose: self.verbose,
            max_iter: self.max_iter,
            time_limit: self.time_limit,
            tol_gap_abs: self.eps_abs,
            tol_gap_rel: self.eps_rel,
            tol_feas: self.eps_abs.max(1e-12),
            tol_ktratio: 1e-7,
            presolve_enable: false,
            ..DefaultSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// Solved to the solver's reduced accuracy thresholds.
    OptimalInaccurate,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
    NumericalError,
}

impl Status {
    pub fn is_optimal(self) -> bool {
        matches!(self, Status::Optimal | Status::OptimalInaccurate)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub status: Status,
    pub objective: f64,
    pub dual_objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: u32,
    pub solve_time: f64,
    /// For `PrimalInfeasible`: `v` with `Mᵀv ≈ 0` and `Σ max(v,0)·lo + min(v,0)·hi > 0`.
    pub certificate: Option<Vec<f64>>,
}

impl SolveResult {
    pub fn duality_gap(&self) -> f64 {
        (self.objective - self.dual_objective).abs()
    }
}

#[derive(Debug, Clone)]
enum RowKind {
    Equality,
    Upper,
    Lower,
    Both,
    Free,
}

/// Presolved structure shared between a problem and its workspace.
#[derive(Debug, Clone)]
struct Reduction {
    /// Per original row: (reduced row, scale) where scaled row = row / scale.
    origin: Vec<Option<(usize, f64)>>,
    rows: Vec<Vec<(usize, f64)>>,
    kinds: Vec<RowKind>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Clarabel row layout: equality rows, then `Upper` rows, then `Lower` rows.
    eq_rows: Vec<usize>,
    up_rows: Vec<usize>,
    low_rows: Vec<usize>,
    /// Original rows with no coefficients (checked for `lo ≤ 0 ≤ hi`).
    empty_rows: Vec<usize>,
}

impl Reduction {
    fn new(qp: &QuadraticProgram, s: &Settings) -> Self {
        let rows = qp.m.rows();
        let mut map: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
        let mut red_rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        let mut origin = Vec::with_capacity(rows.len());
        let mut empty_rows = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            if row.is_empty() {
                origin.push(None);
                empty_rows.push(i);
                continue;
            }
            let scale = if s.scale_rows {
                row.iter().map(|e| e.1.abs()).fold(0.0, f64::max)
            } else {
                1.0
            };
            let scaled: Vec<(usize, f64)> = row.iter().map(|&(c, v)| (c, v / scale)).collect();
            let rl = if is_inf(qp.lo[i]) { -INF } else { qp.lo[i] / scale };
            let rh = if is_inf(qp.hi[i]) { INF } else { qp.hi[i] / scale };
            let key: Vec<(usize, u64)> = scaled.iter().map(|&(c, v)| (c, v.to_bits())).collect();
            let idx = if s.merge_duplicates {
                *map.entry(key).or_insert_with(|| {
                    red_rows.push(scaled.clone());
                    lo.push(-INF);
                    hi.push(INF);
                    red_rows.len() - 1
                })
            } else {
                red_rows.push(scaled);
                lo.push(-INF);
                hi.push(INF);
                red_rows.len() - 1
            };
            lo[idx] = lo[idx].max(rl);
            hi[idx] = hi[idx].min(rh);
            origin.push(Some((idx, scale)));
        }
        let mut red = Reduction {
            origin,
            rows: red_rows,
            kinds: Vec::new(),
            lo,
            hi,
            eq_rows: Vec::new(),
            up_rows: Vec::new(),
            low_rows: Vec::new(),
            empty_rows,
        };
        red.classify();
        red
    }

    fn classify(&mut self) {
        self.kinds.clear();
        self.eq_rows.clear();
        self.up_rows.clear();
        self.low_rows.clear();
        for i in 0..self.rows.len() {
            let (l, h) = (self.lo[i], self.hi[i]);
            let kind = if !is_inf(l) && !is_inf(h) && l == h {
                RowKind::Equality
            } else {
                match (is_inf(l), is_inf(h)) {
                    (true, true) => RowKind::Free,
                    (true, false) => RowKind::Upper,
                    (false, true) => RowKind::Lower,
                    (false, false) => RowKind::Both,
                }
            };
            match kind {
                RowKind::Equality => self.eq_rows.push(i),
                RowKind::Upper => self.up_rows.push(i),
                RowKind::Lower => self.low_rows.push(i),
                RowKind::Both => {
                    self.up_rows.push(i);
                    self.low_rows.push(i);
                }
                RowKind::Free => {}
            }
            self.kinds.push(kind);
        }
    }

    fn recompute_bounds(&mut self, qp_lo: &[f64], qp_hi: &[f64]) {
        self.lo.iter_mut().for_each(|v| *v = -INF);
        self.hi.iter_mut().for_each(|v| *v = INF);
        for (i, o) in self.origin.iter().enumerate() {
            if let Some((idx, scale)) = *o {
                let rl = if is_inf(qp_lo[i]) { -INF } else { qp_lo[i] / scale };
                let rh = if is_inf(qp_hi[i]) { INF } else { qp_hi[i] / scale };
                self.lo[idx] = self.lo[idx].max(rl);
                self.hi[idx] = self.hi[idx].min(rh);
            }
        }
    }

    fn signature(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        (self.eq_rows.clone(), self.up_rows.clone(), self.low_rows.clone())
    }

    fn n_cone_rows(&self) -> usize {
        self.eq_rows.len() + self.up_rows.len() + self.low_rows.len()
    }

    fn matrix(&self, n: usize) -> CscMatrix<f64> {
        let mut ii = Vec::new();
        let mut jj = Vec::new();
        let mut vv = Vec::new();
        let mut r = 0;
        for (sign, list) in [(1.0, &self.eq_rows), (1.0, &self.up_rows), (-1.0, &self.low_rows)] {
            for &k in list.iter() {
                for &(c, v) in &self.rows[k] {
                    ii.push(r);
                    jj.push(c);
                    vv.push(sign * v);
                }
                r += 1;
            }
        }
        CscMatrix::new_from_triplets(r, n, ii, jj, vv)
    }

    fn rhs(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.n_cone_rows());
        b.extend(self.eq_rows.iter().map(|&k| self.hi[k]));
        b.extend(self.up_rows.iter().map(|&k| self.hi[k]));
        b.extend(self.low_rows.iter().map(|&k| -self.lo[k]));
        b
    }

    fn cones(&self) -> Vec<SupportedConeT<f64>> {
        let mut cones = Vec::new();
        if !self.eq_rows.is_empty() {
            cones.push(ZeroConeT(self.eq_rows.len()));
        }
        let nn = self.up_rows.len() + self.low_rows.len();
        if nn > 0 {
            cones.push(NonnegativeConeT(nn));
        }
        cones
    }

    /// Maps a clarabel dual vector to signed multipliers on the original rows.
    fn row_multipliers(&self, z: &[f64], qp: &QuadraticProgram) -> Vec<f64> {
        let mut red = vec![0.0; self.rows.len()];
        let mut r = 0;
        for &k in &self.eq_rows {
            red[k] -= z[r];
            r += 1;
        }
        for &k in &self.up_rows {
            red[k] -= z[r];
            r += 1;
        }
        for &k in &self.low_rows {
            red[k] += z[r];
            r += 1;
        }
        let mut y = vec![0.0; self.origin.len()];
        let mut assigned = vec![false; self.rows.len()];
        for (i, o) in self.origin.iter().enumerate() {
            let Some((idx, scale)) = *o else { continue };
            if assigned[idx] || red[idx] == 0.0 {
                continue;
            }
            let binding = if red[idx] > 0.0 {
                !is_inf(qp.lo[i]) && qp.lo[i] / scale == self.lo[idx]
            } else {
                !is_inf(qp.hi[i]) && qp.hi[i] / scale == self.hi[idx]
            };
            if binding {
                y[i] = red[idx] / scale;
                assigned[idx] = true;
            }
        }
        y
    }
}

fn upper_triangle(p: &SparseMatrix) -> CscMatrix<f64> {
    let mut ii = Vec::new();
    let mut jj = Vec::new();
    let mut vv = Vec::new();
    for &(r, c, v) in &p.entries {
        if r <= c {
            ii.push(r);
            jj.push(c);
            vv.push(v);
        }
    }
    CscMatrix::new_from_triplets(p.nrows, p.ncols, ii, jj, vv)
}

/// A solver instance bound to one problem structure; bounds may be updated
/// between solves without rebuilding the KKT symbolic structure.
pub struct QpWorkspace {
    qp: QuadraticProgram,
    settings: Settings,
    red: Reduction,
    solver: Option<DefaultSolver<f64>>,
}

impl QpWorkspace {
    pub fn new(qp: QuadraticProgram, settings: Settings) -> Self {
        let red = Reduction::new(&qp, &settings);
        QpWorkspace { qp, settings, red, solver: None }
    }

    pub fn problem(&self) -> &QuadraticProgram {
        &self.qp
    }

    /// Number of rows handed to the solver after presolve.
    pub fn reduced_rows(&self) -> usize {
        self.red.n_cone_rows()
    }

    /// Replaces the row bounds. The finiteness pattern of the reduced rows must
    /// not change; otherwise the workspace is rebuilt from scratch.
    pub fn update_bounds(&mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<()> {
        dim_check(lo.len() == self.qp.lo.len() && hi.len() == self.qp.hi.len(), || {
            "bound update has wrong length".to_string()
        })?;
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
            return Err(Error::Invalid(format!("row {i}: lo {} > hi {}", lo[i], hi[i])));
        }
        self.qp.lo = lo;
        self.qp.hi = hi;
        let before = self.red.signature();
        self.red.recompute_bounds(&self.qp.lo, &self.qp.hi);
        self.red.classify();
        if self.red.signature() != before {
            self.solver = None;
            return Ok(());
        }
        if let Some(solver) = self.solver.as_mut() {
            if solver.update_b(&self.red.rhs()).is_err() {
                self.solver = None;
            }
        }
        Ok(())
    }

    pub fn update_linear_cost(&mut self, q: Vec<f64>) -> Result<()> {
        dim_check(q.len() == self.qp.q.len(), || "cost update has wrong length".to_string())?;
        self.qp.q = q;
        if let Some(solver) = self.solver.as_mut() {
            if solver.update_q(&self.qp.q).is_err() {
                self.solver = None;
            }
        }
        Ok(())
    }

    pub fn solve(&mut self) -> Result<SolveResult> {
        let n = self.qp.num_vars();
        let start = Instant::now();
        for &i in &self.red.empty_rows {
            if (!is_inf(self.qp.lo[i]) && self.qp.lo[i] > 1e-12)
                || (!is_inf(self.qp.hi[i]) && self.qp.hi[i] < -1e-12)
            {
                let mut cert = vec![0.0; self.qp.num_rows()];
                cert[i] = if self.qp.lo[i] > 0.0 { 1.0 } else { -1.0 };
                return Ok(self.failed(Status::PrimalInfeasible, Some(cert), 0, start));
            }
        }
        if self.solver.is_none() {
            let p = upper_triangle(&self.qp.p);
            let a = self.red.matrix(n);
            let b = self.red.rhs();
            let cones = self.red.cones();
            let solver = DefaultSolver::new(&p, &self.qp.q, &a, &b, &cones, self.settings.clarabel())
                .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
            self.solver = Some(solver);
        }
        let solver = self.solver.as_mut().expect("solver initialized");
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => Status::Optimal,
            SolverStatus::AlmostSolved => Status::OptimalInaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                Status::PrimalInfeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                Status::DualInfeasible
            }
            SolverStatus::MaxIterations | SolverStatus::MaxTime => Status::MaxIter,
            _ => Status::NumericalError,
        };
        let iterations = sol.iterations;
        let z = sol.z.clone();
        let x = sol.x.clone();
        match status {
            Status::PrimalInfeasible => {
                let cert = self.red.row_multipliers(&z, &self.qp);
                Ok(self.failed(status, Some(cert), iterations, start))
            }
            Status::DualInfeasible | Status::NumericalError => {
                Ok(self.failed(status, None, iterations, start))
            }
            _ => {
                let y = self.red.row_multipliers(&z, &self.qp);
                Ok(SolveResult {
                    objective: self.qp.objective(&x),
                    dual_objective: self.qp.dual_objective(&x, &y),
                    primal_res: self.qp.primal_residual(&x),
                    dual_res: self.qp.dual_residual(&x, &y),
                    x,
                    y,
                    status,
                    iterations,
                    solve_time: start.elapsed().as_secs_f64(),
                    certificate: None,
                })
            }
        }
    }

    fn failed(&self, status: Status, cert: Option<Vec<f64>>, iterations: u32, start: Instant) -> SolveResult {
        SolveResult {
            x: vec![f64::NAN; self.qp.num_vars()],
            y: vec![f64::NAN; self.qp.num_rows()],
            status,
            objective: f64::NAN,
            dual_objective: f64::NAN,
            primal_res: f64::NAN,
            dual_res: f64::NAN,
            iterations,
            solve_time: start.elapsed().as_secs_f64(),
            certificate: cert,
        }
    }
}

pub fn solve(qp: &QuadraticProgram, settings: &Settings) -> Result<SolveResult> {
    QpWorkspace::new(qp.clone(), settings.clone()).solve()
}

/// `min cᵀx s.t. lo ≤ Mx ≤ hi`.
pub fn solve_lp(
    c: &[f64],
    m: &SparseMatrix,
    lo: &[f64],
    hi: &[f64],
    settings: &Settings,
) -> Result<SolveResult> {
    let qp = QuadraticProgram::lp(c.to_vec(), m.clone(), lo.to_vec(), hi.to_vec())?;
    QpWorkspace::new(qp, settings.clone()).solve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lower_bound() {
        let mut b = QpBuilder::new(1);
        b.add_quad(0, 0, 1.0);
        b.add_row(vec![(0, 1.0)], 1.0, INF);
        let r = solve(&b.build().unwrap(), &Settings::geometry()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!((r.y[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn projection_onto_line() {
        let mut b = QpBuilder::new(2);
        b.add_quad(0, 0, 1.0);
        b.add_quad(1, 1, 1.0);
        b.add_row(vec![(0, 1.0), (1, 1.0)], 2.0, 2.0);
        let r = solve(&b.build().unwrap(), &Settings::geometry()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn duplicate_rows_merge_and_keep_duals() {
        let mut b = QpBuilder::new(1);
        b.add_quad(0, 0, 1.0);
        b.add_row(vec![(0, 2.0)], 1.0, INF);
        b.add_row(vec![(0, 1.0)], 1.0, INF);
        let qp = b.build().unwrap();
        let mut ws = QpWorkspace::new(qp.clone(), Settings::geometry());
        assert_eq!(ws.reduced_rows(), 1);
        let r = ws.solve().unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!(r.dual_res < 1e-7);
        assert_eq!(r.y[0], 0.0);
    }

    #[test]
    fn lp_infeasible_has_certificate() {
        let mut m = SparseMatrix::new(2, 1);
        m.push(0, 0, 1.0);
        m.push(1, 0, 1.0);
        let r = solve_lp(&[1.0], &m, &[2.0, -INF], &[INF, 1.0], &Settings::geometry()).unwrap();
        assert_eq!(r.status, Status::PrimalInfeasible);
        let v = r.certificate.unwrap();
        let mtv = m.tr_mul_vec(&v);
        assert!(mtv[0].abs() < 1e-6);
        let val = v[0].max(0.0) * 2.0 + v[1].min(0.0) * 1.0;
        assert!(val > 0.0);
    }

    #[test]
    fn rejects_inverted_bounds() {
        let m = SparseMatrix::new(1, 1);
        assert!(QuadraticProgram::lp(vec![0.0], m, vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let mut b = QpBuilder::new(2);
        b.add_square_of(&[(0, 1.0), (1, -0.1)], 3.0);
        b.add_linear(1, 0.3);
        b.add_row(vec![(0, 1.0 / 3.0)], -INF, 2.0);
        let qp = b.build().unwrap();
        let back = QuadraticProgram::load(&qp.dump()).unwrap();
        assert_eq!(qp, back);
    }

    #[test]
    fn bound_update_reuses_solver() {
        let mut b = QpBuilder::new(1);
        b.add_quad(0, 0, 1.0);
        b.add_row(vec![(0, 1.0)], 1.0, INF);
        let mut ws = QpWorkspace::new(b.build().unwrap(), Settings::geometry());
        ws.solve().unwrap();
        ws.update_bounds(vec![3.0], vec![INF]).unwrap();
        let r = ws.solve().unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-8);
    }
}
