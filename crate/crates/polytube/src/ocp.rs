//! Convex programs of polytopic dual control: the receding-horizon tube QP,
//! the invariant-ensemble QP, the rigid reduction and control recovery.

use std::ops::Range;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg;
use crate::qp::{self, QpBuilder, QpWorkspace, QuadraticProgram, Settings, SolveResult, Status, INF};
use crate::template::{MetaTemplate, TemplateFamily};

/// `{x : Ax ≤ b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspaces {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Halfspaces {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        Halfspaces { a, b }
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Largest violation `max_r (a_r·x − b_r)`, `−∞` for no rows.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.violation(x) <= tol
    }
}

/// `x⁺ = Ax + Bu + w`, `η = Cx + v` with `x ∈ 𝕏`, `u ∈ 𝕌`, `v ∈ 𝕍`,
/// `𝕎 = P(w̄)` and the sensor ensemble encoded by `v̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub state: Halfspaces,
    pub input: Halfspaces,
    pub noise: Halfspaces,
    pub wbar: DVector<f64>,
    pub vbar: DVector<f64>,
}

impl SystemModel {
    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Checks dimensions against a template family.
    pub fn validate(&self, fam: &TemplateFamily) -> Result<()> {
        let n = self.num_states();
        dim_check(self.a.shape() == (n, n), || format!("A is {:?}", self.a.shape()))?;
        dim_check(self.b.nrows() == n, || format!("B has {} rows, A has {n}", self.b.nrows()))?;
        dim_check(self.c.ncols() == n, || format!("C has {} columns, A has {n}", self.c.ncols()))?;
        dim_check(fam.dim() == n, || format!("template dimension {} ≠ state dimension {n}", fam.dim()))?;
        dim_check(self.state.a.ncols() == n && self.state.b.len() == self.state.a.nrows(), || "state constraints".into())?;
        dim_check(
            self.input.a.ncols() == self.num_inputs() && self.input.b.len() == self.input.a.nrows(),
            || "input constraints".into(),
        )?;
        dim_check(
            self.noise.a.ncols() == self.num_outputs() && self.noise.b.len() == self.noise.a.nrows(),
            || "noise set".into(),
        )?;
        dim_check(self.wbar.len() == fam.num_facets(), || format!("w̄ has length {}", self.wbar.len()))?;
        Ok(())
    }
}

/// Weighted squares `Σ w·(aᵀz)²` with sparse forms `a`.
pub type QuadForms = Vec<(f64, Vec<(usize, f64)>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// `z_N ≤ z_s`.
    Indicator,
    Quadratic(QuadForms),
    Free,
}

/// `𝔩(z,u) = 𝔯(z) + τ𝔡°(z) + 𝔠(u)` with
/// `𝔠(u) = Σ_j [α‖u_j‖² + β‖u_j − ū‖²]`, `ū` the mean extreme control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub risk: QuadForms,
    pub deviation: QuadForms,
    pub tau: f64,
    pub input_weight: f64,
    pub spread_weight: f64,
    pub terminal: Terminal,
}

impl CostSpec {
    fn validate(&self, l: usize) -> Result<()> {
        let forms = self.risk.iter().chain(&self.deviation).chain(match &self.terminal {
            Terminal::Quadratic(f) => f.iter(),
            _ => [].iter(),
        });
        for (w, form) in forms {
            if *w < 0.0 || !w.is_finite() {
                return Err(Error::NonConvexCost(format!("weight {w}")));
            }
            if let Some(&(i, _)) = form.iter().find(|(i, _)| *i >= l) {
                return Err(Error::DimensionMismatch(format!("cost index {i} ≥ l = {l}")));
            }
        }
        for (name, w) in [("tau", self.tau), ("input_weight", self.input_weight), ("spread_weight", self.spread_weight)] {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::NonConvexCost(format!("{name} = {w}")));
            }
        }
        Ok(())
    }
}

fn eval_forms(forms: &QuadForms, z: &DVector<f64>) -> f64 {
    forms.iter().map(|(w, f)| w * f.iter().map(|&(i, a)| a * z[i]).sum::<f64>().powi(2)).sum()
}

/// `𝔯(z)`.
pub fn eval_risk(cost: &CostSpec, z: &DVector<f64>) -> f64 {
    eval_forms(&cost.risk, z)
}

/// `𝔡°(z)`.
pub fn eval_deviation(cost: &CostSpec, z: &DVector<f64>) -> f64 {
    eval_forms(&cost.deviation, z)
}

/// `𝔠(u)` over the extreme controls.
pub fn eval_control(cost: &CostSpec, u: &[DVector<f64>]) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    let mean = u.iter().fold(DVector::zeros(u[0].len()), |acc, v| acc + v) / u.len() as f64;
    u.iter()
        .map(|v| cost.input_weight * v.norm_squared() + cost.spread_weight * (v - &mean).norm_squared())
        .sum()
}

/// Stage cost `𝔩(z,u)`.
pub fn eval_cost(cost: &CostSpec, z: &DVector<f64>, u: &[DVector<f64>]) -> Result<f64> {
    cost.validate(z.len())?;
    if let Some(v) = u.iter().find(|v| v.len() != u[0].len()) {
        return Err(Error::DimensionMismatch(format!("control of length {}", v.len())));
    }
    Ok(eval_risk(cost, z) + cost.tau * eval_deviation(cost, z) + eval_control(cost, u))
}

/// Terminal cost `𝔪(z)` (zero for the indicator when `z ≤ z_s`).
pub fn eval_terminal(cost: &CostSpec, z: &DVector<f64>) -> f64 {
    match &cost.terminal {
        Terminal::Quadratic(f) => eval_forms(f, z),
        _ => 0.0,
    }
}

/// Variable and row counts of a built problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSize {
    pub n_opt: usize,
    /// Constraint rows as counted by the complexity formula.
    pub n_con: usize,
    /// Rows encoding an indicator terminal cost.
    pub n_terminal: usize,
}

/// `n_opt = (2N+1)l + N|𝕁|(n_u+m)`,
/// `n_con = N(l + |𝕁|(n_G + n_H + l + n_𝕌 + ν(m + n_𝕏))) + l`.
pub fn complexity(meta: &MetaTemplate, sys: &SystemModel, horizon: usize) -> ProblemSize {
    let fam = meta.family();
    let (l, m, nu, nj) = (meta.num_params(), fam.num_facets(), sys.num_inputs(), meta.num_extreme());
    let (ng, nh, nv) = (fam.cone().nrows(), meta.meta_cone().nrows(), fam.num_vertices());
    let per_j = ng + nh + l + sys.input.num_rows() + nv * (m + sys.state.num_rows());
    ProblemSize {
        n_opt: (2 * horizon + 1) * l + horizon * nj * (nu + m),
        n_con: horizon * (l + nj * per_j) + l,
        n_terminal: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TubeKind {
    /// `z₀, …, z_N` with initial condition `Zŷ ≤ z₀`.
    Horizon(usize),
    /// A single parameter `z_s` mapped into itself.
    Invariant,
}

/// Variable offsets: all `z_k`, then all `ζ_k`, then `(ξ_{k,j}, u_{k,j})` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub kind: TubeKind,
    pub l: usize,
    pub m: usize,
    pub nu: usize,
    pub nj: usize,
}

impl Layout {
    pub fn stages(&self) -> usize {
        match self.kind {
            TubeKind::Horizon(n) => n,
            TubeKind::Invariant => 1,
        }
    }

    pub fn num_z(&self) -> usize {
        match self.kind {
            TubeKind::Horizon(n) => n + 1,
            TubeKind::Invariant => 1,
        }
    }

    /// Offset of `z_k`; for the invariant problem every `k` maps to `z_s`.
    pub fn z(&self, k: usize) -> usize {
        match self.kind {
            TubeKind::Horizon(_) => k * self.l,
            TubeKind::Invariant => 0,
        }
    }

    pub fn zeta(&self, k: usize) -> usize {
        (self.num_z() + k) * self.l
    }

    pub fn xi(&self, k: usize, j: usize) -> usize {
        (self.num_z() + self.stages()) * self.l + (k * self.nj + j) * (self.m + self.nu)
    }

    pub fn u(&self, k: usize, j: usize) -> usize {
        self.xi(k, j) + self.m
    }

    pub fn num_vars(&self) -> usize {
        self.xi(self.stages(), 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpOptions {
    /// Drop vertex rows whose support term is dominated on the whole cone.
    pub prune: bool,
    /// `z_s` for [`Terminal::Indicator`].
    pub terminal_target: Option<DVector<f64>>,
}

impl Default for OcpOptions {
    fn default() -> Self {
        OcpOptions { prune: true, terminal_target: None }
    }
}

impl OcpOptions {
    /// Every row of the formulation, one `Hζ_k ≤ 0` block per `(k, j)`.
    pub fn literal() -> Self {
        OcpOptions { prune: false, terminal_target: None }
    }

    pub fn with_terminal(mut self, z_s: DVector<f64>) -> Self {
        self.terminal_target = Some(z_s);
        self
    }
}

/// For each direction (row of `dirs`), the vertex maps that can attain
/// `max_i dᵀΛ_i y` somewhere on the cone `Gy ≤ 0`.
pub fn supporting_vertices(fam: &TemplateFamily, dirs: &DMatrix<f64>) -> Result<Vec<Vec<usize>>> {
    let g = fam.cone();
    let m = fam.num_facets();
    let nv = fam.num_vertices();
    let probe = probe_point(fam);
    let mut out = Vec::with_capacity(dirs.nrows());
    for r in 0..dirs.nrows() {
        let d = dirs.row(r);
        let rows: Vec<DVector<f64>> = fam.vertex_maps().iter().map(|l| (d * l).transpose()).collect();
        let mut order: Vec<usize> = (0..nv).collect();
        order.sort_by(|&a, &b| rows[b].dot(&probe).total_cmp(&rows[a].dot(&probe)));
        let mut kept: Vec<usize> = Vec::new();
        for &i in &order {
            let mut dominated = false;
            for &k in &kept {
                if dominated_on_cone(g, &rows[i], &rows[k], m)? {
                    dominated = true;
                    break;
                }
            }
            if !dominated {
                kept.push(i);
            }
        }
        kept.sort_unstable();
        out.push(kept);
    }
    Ok(out)
}

fn probe_point(fam: &TemplateFamily) -> DVector<f64> {
    // sum of vertex maps applied to the facets' unit offsets is cone-interior
    // for nondegenerate families; only used to order candidates
    let g = fam.cone();
    let ones = DVector::from_element(fam.num_facets(), 1.0);
    if (g * &ones).max() <= 0.0 {
        ones
    } else {
        DVector::zeros(fam.num_facets())
    }
}

/// `max (a − b)ᵀy s.t. Gy ≤ 0, ‖y‖∞ ≤ 1` is (numerically) nonpositive.
fn dominated_on_cone(g: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>, m: usize) -> Result<bool> {
    let diff = a - b;
    if linalg::max_abs_vec(&diff) <= 1e-14 {
        return Ok(true);
    }
    let mut bld = QpBuilder::new(m);
    for c in 0..m {
        bld.add_linear(c, -diff[c]);
        bld.add_row(vec![(c, 1.0)], -1.0, 1.0);
    }
    for r in 0..g.nrows() {
        bld.add_row((0..m).filter(|&c| g[(r, c)] != 0.0).map(|c| (c, g[(r, c)])).collect(), -INF, 0.0);
    }
    let res = qp::solve(&bld.build()?, &Settings::geometry())?;
    if !res.status.is_optimal() {
        return Err(Error::Numerical(format!("dominance LP ended with {:?}", res.status)));
    }
    Ok(-res.objective <= 1e-9 * (1.0 + linalg::max_abs_vec(&diff)))
}

/// The assembled tube QP with the bookkeeping needed to update `ŷ` and read
/// solutions back.
#[derive(Debug, Clone)]
pub struct DualOcp {
    layout: Layout,
    qp: QuadraticProgram,
    size: ProblemSize,
    initial_rows: Range<usize>,
    terminal_rows: Range<usize>,
    ensemble: DMatrix<f64>,
}

impl DualOcp {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn qp(&self) -> &QuadraticProgram {
        &self.qp
    }

    /// Counts as given by the complexity formula (independent of pruning),
    /// plus terminal indicator rows.
    pub fn size(&self) -> ProblemSize {
        self.size
    }

    pub fn num_vars(&self) -> usize {
        self.qp.num_vars()
    }

    pub fn num_rows(&self) -> usize {
        self.qp.num_rows()
    }

    pub fn terminal_rows(&self) -> Range<usize> {
        self.terminal_rows.clone()
    }

    /// Row bounds with the initial condition `Zŷ ≤ z₀` set for `yhat`.
    pub fn bounds_for(&self, yhat: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        dim_check(yhat.len() == self.ensemble.ncols(), || format!("ŷ has length {}", yhat.len()))?;
        let zy = &self.ensemble * yhat;
        let mut lo = self.qp.lo.clone();
        for (r, row) in self.initial_rows.clone().enumerate() {
            lo[row] = zy[r];
        }
        Ok((lo, self.qp.hi.clone()))
    }

    pub fn set_initial(&mut self, yhat: &DVector<f64>) -> Result<()> {
        let (lo, _) = self.bounds_for(yhat)?;
        self.qp.lo = lo;
        Ok(())
    }

    pub fn solve(&self, settings: &Settings) -> Result<TubeSolution> {
        let res = qp::solve(&self.qp, settings)?;
        Ok(self.extract(&res))
    }

    /// Reads the tube out of a solver result.
    pub fn extract(&self, res: &SolveResult) -> TubeSolution {
        let lay = &self.layout;
        let seg = |o: usize, n: usize| DVector::from_column_slice(&res.x[o..o + n]);
        let n = lay.stages();
        TubeSolution {
            z: (0..lay.num_z()).map(|k| seg(lay.z(k), lay.l)).collect(),
            zeta: (0..n).map(|k| seg(lay.zeta(k), lay.l)).collect(),
            xi: (0..n).map(|k| (0..lay.nj).map(|j| seg(lay.xi(k, j), lay.m)).collect()).collect(),
            u: (0..n).map(|k| (0..lay.nj).map(|j| seg(lay.u(k, j), lay.nu)).collect()).collect(),
            objective: res.objective,
            status: TubeStatus::from(res.status),
            iterations: res.iterations,
            solve_time: res.solve_time,
        }
    }

    /// Stacks a tube back into the variable vector.
    pub fn pack(&self, tube: &TubeSolution) -> Vec<f64> {
        let lay = &self.layout;
        let mut x = vec![0.0; lay.num_vars()];
        let mut put = |o: usize, v: &DVector<f64>| x[o..o + v.len()].copy_from_slice(v.as_slice());
        for k in 0..lay.num_z() {
            put(lay.z(k), &tube.z[k]);
        }
        for k in 0..lay.stages() {
            put(lay.zeta(k), &tube.zeta[k]);
            for j in 0..lay.nj {
                put(lay.xi(k, j), &tube.xi[k][j]);
                put(lay.u(k, j), &tube.u[k][j]);
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeStatus {
    Solved,
    Infeasible,
    MaxIter,
    NumericalError,
}

impl From<Status> for TubeStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Optimal | Status::OptimalInaccurate => TubeStatus::Solved,
            Status::PrimalInfeasible => TubeStatus::Infeasible,
            Status::MaxIter => TubeStatus::MaxIter,
            Status::DualInfeasible | Status::NumericalError => TubeStatus::NumericalError,
        }
    }
}

/// Optimal tube parameters; `xi[k][j]`, `u[k][j]` follow the order of `𝕁`.
#[derive(Debug, Clone)]
pub struct TubeSolution {
    pub z: Vec<DVector<f64>>,
    pub zeta: Vec<DVector<f64>>,
    pub xi: Vec<Vec<DVector<f64>>>,
    pub u: Vec<Vec<DVector<f64>>>,
    pub objective: f64,
    pub status: TubeStatus,
    pub iterations: u32,
    pub solve_time: f64,
}

impl TubeSolution {
    pub fn is_solved(&self) -> bool {
        self.status == TubeStatus::Solved
    }

    pub fn horizon(&self) -> usize {
        self.zeta.len()
    }

    /// `Σ_k 𝔩(z_k, u_k) + 𝔪(z_N)`.
    pub fn cost(&self, cost: &CostSpec) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.horizon() {
            total += eval_cost(cost, &self.z[k], &self.u[k])?;
        }
        Ok(total + eval_terminal(cost, self.z.last().expect("at least one parameter")))
    }
}

/// Assembles the receding-horizon tube QP from `X₀ = P(ŷ)`.
pub fn build_dual_ocp(
    sys: &SystemModel,
    cost: &CostSpec,
    meta: &MetaTemplate,
    horizon: usize,
    yhat: &DVector<f64>,
    opts: &OcpOptions,
) -> Result<DualOcp> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    dim_check(yhat.len() == meta.family().num_facets(), || format!("ŷ has length {}", yhat.len()))?;
    assemble(sys, cost, meta, TubeKind::Horizon(horizon), Some(yhat), opts)
}

/// Assembles the invariant-ensemble QP (`z_{k+1} = z₀ = z_s`, no initial condition).
pub fn build_invariant(sys: &SystemModel, cost: &CostSpec, meta: &MetaTemplate, opts: &OcpOptions) -> Result<DualOcp> {
    let mut cost = cost.clone();
    cost.terminal = Terminal::Free;
    assemble(sys, &cost, meta, TubeKind::Invariant, None, opts)
}

fn assemble(
    sys: &SystemModel,
    cost: &CostSpec,
    meta: &MetaTemplate,
    kind: TubeKind,
    yhat: Option<&DVector<f64>>,
    opts: &OcpOptions,
) -> Result<DualOcp> {
    let fam = meta.family();
    sys.validate(fam)?;
    let (l, m, nu, nj, l1) = (meta.num_params(), fam.num_facets(), sys.num_inputs(), meta.num_extreme(), meta.sensor_rows());
    cost.validate(l)?;
    dim_check(sys.vbar.len() == l1, || format!("v̄ has length {}, Z₁ has {l1} rows", sys.vbar.len()))?;
    let lay = Layout { kind, l, m, nu, nj };
    let n_stage = lay.stages();
    let y = fam.facets();
    let ya = y * &sys.a;
    let yb = y * &sys.b;
    let xa = &sys.state.a;
    let (g, h, z) = (fam.cone(), meta.meta_cone(), meta.ensemble());
    let nv = fam.num_vertices();
    let all: Vec<usize> = (0..nv).collect();
    let (prop_sel, state_sel) = if opts.prune {
        (supporting_vertices(fam, &ya)?, supporting_vertices(fam, xa)?)
    } else {
        (vec![all.clone(); m], vec![all.clone(); xa.nrows()])
    };
    // per (j, i): YAΛ_iΩ_j and X_aΛ_iΩ_j
    let omegas = meta.extreme_maps();
    let prop: Vec<Vec<DMatrix<f64>>> = omegas.iter().map(|o| fam.vertex_maps().iter().map(|li| &ya * li * *o).collect()).collect();
    let stc: Vec<Vec<DMatrix<f64>>> = omegas.iter().map(|o| fam.vertex_maps().iter().map(|li| xa * li * *o).collect()).collect();

    let mut b = QpBuilder::new(lay.num_vars());
    let dense_row = |mat: &DMatrix<f64>, r: usize, off: usize| -> Vec<(usize, f64)> {
        (0..mat.ncols()).filter(|&c| mat[(r, c)] != 0.0).map(|c| (off + c, mat[(r, c)])).collect()
    };

    // costs
    for k in 0..n_stage {
        add_stage_cost(&mut b, cost, &lay, k);
    }
    if let (TubeKind::Horizon(n), Terminal::Quadratic(forms)) = (kind, &cost.terminal) {
        for (w, f) in forms {
            b.add_square_of(&shift(f, lay.z(n)), *w);
        }
    }

    for k in 0..n_stage {
        let (zk, zn, zt) = (lay.z(k), lay.z(k + 1), lay.zeta(k));
        // v̄ ≤ ζ_{k,1}, z_{k,2} ≤ ζ_{k,2}
        for r in 0..l {
            if r < l1 {
                b.add_row(vec![(zt + r, 1.0)], sys.vbar[r], INF);
            } else {
                b.add_row(vec![(zt + r, 1.0), (zk + r, -1.0)], 0.0, INF);
            }
        }
        if opts.prune {
            for r in 0..h.nrows() {
                b.add_row(dense_row(h, r, zt), -INF, 0.0);
            }
        }
        for j in 0..nj {
            let (xo, uo) = (lay.xi(k, j), lay.u(k, j));
            for r in 0..g.nrows() {
                b.add_row(dense_row(g, r, xo), -INF, 0.0);
            }
            if !opts.prune {
                for r in 0..h.nrows() {
                    b.add_row(dense_row(h, r, zt), -INF, 0.0);
                }
            }
            // Zξ_{k,j} ≤ z_{k+1}
            for r in 0..l {
                let mut row = dense_row(z, r, xo);
                row.push((zn + r, -1.0));
                b.add_row(row, -INF, 0.0);
            }
            for r in 0..sys.input.num_rows() {
                b.add_row(dense_row(&sys.input.a, r, uo), -INF, sys.input.b[r]);
            }
            for i in 0..nv {
                for r in 0..m {
                    if !prop_sel[r].contains(&i) {
                        continue;
                    }
                    let mut row = dense_row(&prop[j][i], r, zt);
                    row.extend(dense_row(&yb, r, uo));
                    row.push((xo + r, -1.0));
                    b.add_row(row, -INF, -sys.wbar[r]);
                }
                for r in 0..xa.nrows() {
                    if state_sel[r].contains(&i) {
                        b.add_row(dense_row(&stc[j][i], r, zt), -INF, sys.state.b[r]);
                    }
                }
            }
        }
    }

    let mut initial_rows = 0..0;
    if let Some(yh) = yhat {
        let zy = z * yh;
        let start = b.num_rows();
        for r in 0..l {
            b.add_row(vec![(lay.z(0) + r, 1.0)], zy[r], INF);
        }
        initial_rows = start..b.num_rows();
    }
    let mut terminal_rows = 0..0;
    if let (TubeKind::Horizon(n), Terminal::Indicator) = (kind, &cost.terminal) {
        let target = opts
            .terminal_target
            .as_ref()
            .ok_or_else(|| Error::Invalid("indicator terminal needs z_s".into()))?;
        dim_check(target.len() == l, || format!("z_s has length {}", target.len()))?;
        let start = b.num_rows();
        for r in 0..l {
            b.add_row(vec![(lay.z(n) + r, 1.0)], -INF, target[r]);
        }
        terminal_rows = start..b.num_rows();
    }

    let mut size = complexity(meta, sys, n_stage);
    if kind == TubeKind::Invariant {
        size.n_opt = lay.num_vars();
        size.n_con -= l;
    }
    size.n_terminal = terminal_rows.len();
    let qp = b.build()?;
    debug!(
        "tube QP: {} vars, {} rows emitted ({} by formula + {} terminal)",
        qp.num_vars(),
        qp.num_rows(),
        size.n_con,
        size.n_terminal
    );
    Ok(DualOcp { layout: lay, qp, size, initial_rows, terminal_rows, ensemble: z.clone() })
}

fn shift(form: &[(usize, f64)], off: usize) -> Vec<(usize, f64)> {
    form.iter().map(|&(i, a)| (off + i, a)).collect()
}

fn add_stage_cost(b: &mut QpBuilder, cost: &CostSpec, lay: &Layout, k: usize) {
    let zk = lay.z(k);
    for (w, f) in &cost.risk {
        b.add_square_of(&shift(f, zk), *w);
    }
    for (w, f) in &cost.deviation {
        b.add_square_of(&shift(f, zk), cost.tau * w);
    }
    // α Σ‖u_j‖² + β Σ‖u_j − ū‖² = uᵀ[(α+β)I − (β/|𝕁|)𝟙𝟙ᵀ]u per input component
    let nj = lay.nj as f64;
    for c in 0..lay.nu {
        for j in 0..lay.nj {
            for jj in 0..lay.nj {
                let mut v = -2.0 * cost.spread_weight / nj;
                if j == jj {
                    v += 2.0 * (cost.input_weight + cost.spread_weight);
                }
                if v != 0.0 {
                    b.add_quad(lay.u(k, j) + c, lay.u(k, jj) + c, v);
                }
            }
        }
    }
}

/// Semantic check of a tube against the formulation, recomputed with every
/// vertex map (no pruning).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TubeAudit {
    pub propagation: f64,
    pub xi_cone: f64,
    pub zeta_cone: f64,
    pub containment: f64,
    pub intersection: f64,
    pub input: f64,
    pub state: f64,
    pub initial: f64,
    pub terminal: f64,
}

impl TubeAudit {
    pub fn max_violation(&self) -> f64 {
        [
            self.propagation,
            self.xi_cone,
            self.zeta_cone,
            self.containment,
            self.intersection,
            self.input,
            self.state,
            self.initial,
            self.terminal,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

fn upd(acc: &mut f64, v: f64) {
    if v > *acc {
        *acc = v;
    }
}

/// Audits every constraint of the tube problem; `yhat` and `z_s` are checked
/// when given. For an invariant tube, `tube.z` holds the single `z_s`.
pub fn audit_tube(
    sys: &SystemModel,
    meta: &MetaTemplate,
    tube: &TubeSolution,
    yhat: Option<&DVector<f64>>,
    z_s: Option<&DVector<f64>>,
) -> TubeAudit {
    let fam = meta.family();
    let y = fam.facets();
    let (ya, yb) = (y * &sys.a, y * &sys.b);
    let z = meta.ensemble();
    let l1 = meta.sensor_rows();
    let mut a = TubeAudit::default();
    let zk = |k: usize| &tube.z[k.min(tube.z.len() - 1)];
    for k in 0..tube.horizon() {
        let zeta = &tube.zeta[k];
        for r in 0..zeta.len() {
            let v = if r < l1 { sys.vbar[r] - zeta[r] } else { zk(k)[r] - zeta[r] };
            upd(&mut a.intersection, v);
        }
        upd(&mut a.zeta_cone, (meta.meta_cone() * zeta).max());
        let next = if tube.z.len() == 1 { zk(0) } else { zk(k + 1) };
        for (j, om) in meta.extreme_maps().into_iter().enumerate() {
            let (xi, u) = (&tube.xi[k][j], &tube.u[k][j]);
            upd(&mut a.xi_cone, (fam.cone() * xi).max());
            upd(&mut a.containment, (z * xi - next).max());
            upd(&mut a.input, sys.input.violation(u));
            let yj = om * zeta;
            for lm in fam.vertex_maps() {
                let v = lm * &yj;
                upd(&mut a.propagation, (&ya * &v + &yb * u + &sys.wbar - xi).max());
                upd(&mut a.state, sys.state.violation(&v));
            }
        }
    }
    if let Some(yh) = yhat {
        upd(&mut a.initial, (z * yh - &tube.z[0]).max());
    }
    if let Some(s) = z_s {
        upd(&mut a.terminal, (tube.z.last().expect("nonempty tube") - s).max());
    }
    a
}

/// An invariant ensemble `(z_s, ζ_s, ξ_s, u_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub z: DVector<f64>,
    pub zeta: DVector<f64>,
    pub xi: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub objective: f64,
}

impl SteadyState {
    /// As a one-stage tube for [`audit_tube`].
    pub fn as_tube(&self) -> TubeSolution {
        TubeSolution {
            z: vec![self.z.clone()],
            zeta: vec![self.zeta.clone()],
            xi: vec![self.xi.clone()],
            u: vec![self.u.clone()],
            objective: self.objective,
            status: TubeStatus::Solved,
            iterations: 0,
            solve_time: 0.0,
        }
    }
}

/// Solves the invariant-ensemble QP.
pub fn solve_invariant(sys: &SystemModel, cost: &CostSpec, meta: &MetaTemplate, settings: &Settings) -> Result<SteadyState> {
    let ocp = build_invariant(sys, cost, meta, &OcpOptions::default())?;
    let sol = ocp.solve(settings)?;
    match sol.status {
        TubeStatus::Solved => Ok(SteadyState {
            z: sol.z[0].clone(),
            zeta: sol.zeta[0].clone(),
            xi: sol.xi[0].clone(),
            u: sol.u[0].clone(),
            objective: sol.objective,
        }),
        TubeStatus::Infeasible => Err(Error::Infeasible("no invariant ensemble in this template class".into())),
        s => Err(Error::Numerical(format!("invariant QP ended with {s:?}"))),
    }
}

/// Receding-horizon solver reusing one workspace across initial conditions.
pub struct OcpSolver {
    ocp: DualOcp,
    ws: QpWorkspace,
    settings: Settings,
}

impl OcpSolver {
    pub fn new(ocp: DualOcp, settings: Settings) -> Self {
        let ws = QpWorkspace::new(ocp.qp.clone(), settings.clone());
        OcpSolver { ocp, ws, settings }
    }

    pub fn ocp(&self) -> &DualOcp {
        &self.ocp
    }

    pub fn solve_from(&mut self, yhat: &DVector<f64>) -> Result<TubeSolution> {
        let (lo, hi) = self.ocp.bounds_for(yhat)?;
        self.ocp.qp.lo = lo.clone();
        self.ws.update_bounds(lo, hi)?;
        let res = self.ws.solve()?;
        Ok(self.ocp.extract(&res))
    }

    /// Fresh solve of the current problem, bypassing the reused workspace.
    pub fn solve_cold(&self) -> Result<TubeSolution> {
        self.ocp.solve(&self.settings)
    }
}

/// `μ₀⋆(X₀) = Σ_j θ_j u_{0,j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredControl {
    pub theta: Vec<f64>,
    pub u: DVector<f64>,
    /// Largest entry of `ŷ − Σ_j θ_jΩ_jζ₀` (zero when `P(ŷ)` is covered).
    pub shortfall: f64,
}

/// Recovers the first control from the extreme controls. Phase 1 finds the
/// least shortfall `s` with `Σθ_jΩ_jζ₀ + s𝟙 ≥ ŷ`, `θ` in the simplex;
/// phase 2 minimizes `‖Σθ_ju_{0,j}‖²` at that shortfall.
pub fn recover_control(meta: &MetaTemplate, sol: &TubeSolution, yhat: &DVector<f64>) -> Result<RecoveredControl> {
    let zeta0 = sol.zeta.first().ok_or_else(|| Error::Invalid("empty tube".into()))?;
    let pts: Vec<DVector<f64>> = meta.extreme_maps().into_iter().map(|o| o * zeta0).collect();
    let u0 = &sol.u[0];
    let nj = pts.len();
    let m = yhat.len();
    let nu = u0[0].len();
    let scale = 1.0 + linalg::max_abs_vec(yhat);
    let build = |cap: Option<f64>| -> Result<QpBuilder> {
        let mut b = QpBuilder::new(nj + 1);
        for r in 0..m {
            let mut row: Vec<(usize, f64)> = (0..nj).filter(|&j| pts[j][r] != 0.0).map(|j| (j, pts[j][r])).collect();
            row.push((nj, 1.0));
            b.add_row(row, yhat[r], INF);
        }
        b.add_row((0..nj).map(|j| (j, 1.0)).collect(), 1.0, 1.0);
        for j in 0..nj {
            b.add_row(vec![(j, 1.0)], 0.0, INF);
        }
        b.add_row(vec![(nj, 1.0)], 0.0, cap.unwrap_or(INF));
        Ok(b)
    };
    let mut p1 = build(None)?;
    p1.add_linear(nj, 1.0);
    let r1 = qp::solve(&p1.build()?, &Settings::geometry())?;
    if !r1.status.is_optimal() {
        return Err(Error::Numerical(format!("θ phase 1 ended with {:?}", r1.status)));
    }
    let shortfall = r1.x[nj].max(0.0);
    if shortfall > 1e-6 * scale {
        return Err(Error::InfeasibleWeights(shortfall));
    }
    let mut p2 = build(Some(shortfall + 1e-9 * scale))?;
    for c in 0..nu {
        let form: Vec<(usize, f64)> = (0..nj).map(|j| (j, u0[j][c])).collect();
        p2.add_square_of(&form, 1.0);
    }
    let r2 = qp::solve(&p2.build()?, &Settings::geometry())?;
    let theta: Vec<f64> = if r2.status.is_optimal() { r2.x[..nj].to_vec() } else { r1.x[..nj].to_vec() };
    let theta: Vec<f64> = {
        let clipped: Vec<f64> = theta.iter().map(|t| t.max(0.0)).collect();
        let s: f64 = clipped.iter().sum();
        clipped.iter().map(|t| t / s).collect()
    };
    let u = (0..nj).fold(DVector::zeros(nu), |acc, j| acc + &u0[j] * theta[j]);
    let cover = (0..nj).fold(DVector::zeros(m), |acc: DVector<f64>, j| acc + &pts[j] * theta[j]);
    let shortfall = (yhat - cover).max().max(0.0);
    Ok(RecoveredControl { theta, u, shortfall })
}

/// The rigid reduction over central trajectories `(x̄, ū)`.
#[derive(Debug, Clone)]
pub struct RigidOcp {
    qp: QuadraticProgram,
    horizon: usize,
    n: usize,
    nu: usize,
    constant: f64,
    initial_rows: Range<usize>,
    initial_offset: DVector<f64>,
    ensemble: DMatrix<f64>,
}

/// Central trajectory of a rigid plan.
#[derive(Debug, Clone)]
pub struct RigidPlan {
    pub xbar: Vec<DVector<f64>>,
    pub ubar: Vec<DVector<f64>>,
    /// Rigid objective without the dropped constant.
    pub objective: f64,
    pub status: TubeStatus,
}

impl RigidOcp {
    pub fn qp(&self) -> &QuadraticProgram {
        &self.qp
    }

    /// Constant dropped from the objective: the tube cost of `x̄ ≡ 0`, `ū ≡ 0`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    fn x(&self, k: usize) -> usize {
        k * self.n
    }

    fn u(&self, k: usize) -> usize {
        (self.horizon + 1) * self.n + k * self.nu
    }

    pub fn set_initial(&mut self, yhat: &DVector<f64>) -> Result<()> {
        dim_check(yhat.len() == self.ensemble.ncols(), || format!("ŷ has length {}", yhat.len()))?;
        let rhs = &self.ensemble * yhat - &self.initial_offset;
        for (r, row) in self.initial_rows.clone().enumerate() {
            self.qp.lo[row] = rhs[r];
        }
        Ok(())
    }

    pub fn solve(&self, settings: &Settings) -> Result<RigidPlan> {
        let res = qp::solve(&self.qp, settings)?;
        let seg = |o: usize, n: usize| DVector::from_column_slice(&res.x[o..o + n]);
        Ok(RigidPlan {
            xbar: (0..=self.horizon).map(|k| seg(self.x(k), self.n)).collect(),
            ubar: (0..self.horizon).map(|k| seg(self.u(k), self.nu)).collect(),
            objective: res.objective,
            status: TubeStatus::from(res.status),
        })
    }
}

/// Assembles the rigid QP around a steady ensemble: `z_k = ZYx̄_k + z_s`,
/// `u_{k,j} = ū_k + u_j^s`, with tightened state and input sets.
pub fn build_rigid(
    sys: &SystemModel,
    cost: &CostSpec,
    meta: &MetaTemplate,
    steady: &SteadyState,
    horizon: usize,
    yhat: &DVector<f64>,
) -> Result<RigidOcp> {
    let fam = meta.family();
    sys.validate(fam)?;
    cost.validate(meta.num_params())?;
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let (n, nu) = (sys.num_states(), sys.num_inputs());
    let z = meta.ensemble();
    let zy = z * fam.facets();
    let nvar = (horizon + 1) * n + horizon * nu;
    let mut r = RigidOcp {
        qp: QuadraticProgram::lp(vec![0.0; 1], qp::SparseMatrix::new(0, 1), vec![], vec![])?,
        horizon,
        n,
        nu,
        constant: 0.0,
        initial_rows: 0..0,
        initial_offset: steady.z.clone(),
        ensemble: z.clone(),
    };
    let mut b = QpBuilder::new(nvar);
    let nj = steady.u.len() as f64;
    let usum = steady.u.iter().fold(DVector::zeros(nu), |acc, v| acc + v);

    // (fᵀx̄ + c)² = (fᵀx̄)² + 2c·fᵀx̄ + c²
    let add_forms = |b: &mut QpBuilder, forms: &QuadForms, scale: f64, xo: usize| -> f64 {
        let mut constant = 0.0;
        for (w, form) in forms {
            let w = w * scale;
            let c: f64 = form.iter().map(|&(i, a)| a * steady.z[i]).sum();
            let f: Vec<(usize, f64)> = (0..n)
                .map(|col| (xo + col, form.iter().map(|&(i, a)| a * zy[(i, col)]).sum::<f64>()))
                .filter(|&(_, v)| v.abs() > 1e-15)
                .collect();
            b.add_square_of(&f, w);
            for &(i, v) in &f {
                b.add_linear(i, 2.0 * w * c * v);
            }
            constant += w * c * c;
        }
        constant
    };
    let mut constant = 0.0;
    for k in 0..horizon {
        constant += add_forms(&mut b, &cost.risk, 1.0, k * n);
        constant += add_forms(&mut b, &cost.deviation, cost.tau, k * n);
        // Σ_j α‖ū + u_j‖² + β‖u_j − mean‖² = α(|𝕁|‖ū‖² + 2ūᵀΣu_j) + const
        for c in 0..nu {
            let uo = (horizon + 1) * n + k * nu + c;
            b.add_quad(uo, uo, 2.0 * cost.input_weight * nj);
            b.add_linear(uo, 2.0 * cost.input_weight * usum[c]);
        }
        constant += eval_control(cost, &steady.u);
    }
    if let Terminal::Quadratic(forms) = &cost.terminal {
        constant += add_forms(&mut b, forms, 1.0, horizon * n);
    }

    // x̄_{k+1} = Ax̄_k + Bū_k
    for k in 0..horizon {
        for row in 0..n {
            let mut e = vec![(r.x(k + 1) + row, -1.0)];
            e.extend((0..n).filter(|&c| sys.a[(row, c)] != 0.0).map(|c| (r.x(k) + c, sys.a[(row, c)])));
            e.extend((0..nu).filter(|&c| sys.b[(row, c)] != 0.0).map(|c| (r.u(k) + c, sys.b[(row, c)])));
            b.add_row(e, 0.0, 0.0);
        }
    }
    // Zŷ ≤ ZYx̄₀ + z_s
    let rhs = z * yhat - &steady.z;
    let start = b.num_rows();
    for row in 0..z.nrows() {
        let e = (0..n).filter(|&c| zy[(row, c)] != 0.0).map(|c| (r.x(0) + c, zy[(row, c)])).collect();
        b.add_row(e, rhs[row], INF);
    }
    r.initial_rows = start..b.num_rows();
    // tightened 𝕏̄ and 𝕌̄
    let verts: Vec<DVector<f64>> = meta
        .extreme_maps()
        .into_iter()
        .flat_map(|o| {
            let yj = o * &steady.zeta;
            fam.vertex_maps().iter().map(move |lm| lm * &yj).collect::<Vec<_>>()
        })
        .collect();
    let xa = &sys.state.a;
    let xmargin: Vec<f64> = (0..xa.nrows())
        .map(|row| verts.iter().map(|v| xa.row(row).dot(&v.transpose())).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let ua = &sys.input.a;
    let umargin: Vec<f64> = (0..ua.nrows())
        .map(|row| steady.u.iter().map(|v| ua.row(row).dot(&v.transpose())).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for k in 0..horizon {
        for row in 0..xa.nrows() {
            let e = (0..n).filter(|&c| xa[(row, c)] != 0.0).map(|c| (r.x(k) + c, xa[(row, c)])).collect();
            b.add_row(e, -INF, sys.state.b[row] - xmargin[row]);
        }
        for row in 0..ua.nrows() {
            let e = (0..nu).filter(|&c| ua[(row, c)] != 0.0).map(|c| (r.u(k) + c, ua[(row, c)])).collect();
            b.add_row(e, -INF, sys.input.b[row] - umargin[row]);
        }
    }
    // indicator z_N ≤ z_s: ZYx̄_N ≤ 0
    if cost.terminal == Terminal::Indicator {
        for row in 0..z.nrows() {
            let e: Vec<(usize, f64)> =
                (0..n).filter(|&c| zy[(row, c)] != 0.0).map(|c| (r.x(horizon) + c, zy[(row, c)])).collect();
            if !e.is_empty() {
                b.add_row(e, -INF, 0.0);
            }
        }
    }
    r.qp = b.build()?;
    r.constant = constant;
    Ok(r)
}

/// Lifts a rigid plan to a full tube.
pub fn lift_rigid(meta: &MetaTemplate, steady: &SteadyState, plan: &RigidPlan) -> TubeSolution {
    let y = meta.family().facets();
    let zy = meta.ensemble() * y;
    let n = plan.ubar.len();
    TubeSolution {
        z: plan.xbar.iter().map(|x| &zy * x + &steady.z).collect(),
        zeta: (0..n).map(|k| &zy * &plan.xbar[k] + &steady.zeta).collect(),
        xi: (0..n).map(|k| steady.xi.iter().map(|xi| y * &plan.xbar[k + 1] + xi).collect()).collect(),
        u: (0..n).map(|k| steady.u.iter().map(|u| &plan.ubar[k] + u).collect()).collect(),
        objective: f64::NAN,
        status: plan.status,
        iterations: 0,
        solve_time: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;

    #[test]
    fn cost_examples() {
        let c = case_study::cost(0.01);
        let mut z = DVector::zeros(8);
        z[0] = 1.0;
        z[1] = 2.0;
        assert!((eval_cost(&c, &z, &[DVector::zeros(1)]).unwrap() - 0.05).abs() < 1e-15);
        let z = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(eval_risk(&c, &z), 406.0);
        let u = vec![DVector::from_element(1, 3.0); 60];
        assert!((eval_control(&c, &u) - 540.0).abs() < 1e-9);
    }

    #[test]
    fn case_study_sizes() {
        let meta = case_study::meta_template().unwrap();
        let sys = case_study::system();
        let s = complexity(&meta, &sys, 10);
        assert_eq!((s.n_opt, s.n_con), (4368, 40288));
    }
}
