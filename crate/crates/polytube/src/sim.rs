//! Closed-loop receding-horizon simulation: measure, update the information
//! set, solve the tube QP, recover the control, apply it, propagate.

use std::io::Write;
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{
    self, CostSpec, OcpOptions, OcpSolver, RigidOcp, SteadyState, SystemModel, TubeSolution, TubeStatus,
};
use crate::polytope;
use crate::qp::Settings;
use crate::template::{MetaTemplate, TemplateFamily};

/// Schema version of [`ClosedLoopTrace::write_csv`].
pub const TRACE_CSV_VERSION: u32 = 1;

/// Soundness tolerance for `x ∈ P(ŷ)`.
pub const SOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplePolicy {
    /// A uniformly chosen vertex.
    #[default]
    UniformVertex,
    /// Uniform over the set (rejection from its bounding box).
    UniformBox,
    /// The vertex that is worst for the state constraints one step ahead.
    AdversarialVertex,
}

/// Set-membership bookkeeping for one template family.
#[derive(Debug, Clone)]
pub struct InfoModel {
    facets: DMatrix<f64>,
    /// Per measurement row: the facet it tightens and the scale `α` with `Y_i = α·n_r`.
    meas_rows: Vec<(usize, f64)>,
    /// Supports of `𝕎` along the facets.
    w_support: DVector<f64>,
    w_vertices: Vec<DVector<f64>>,
    v_vertices: Vec<DVector<f64>>,
}

impl InfoModel {
    /// Checks that `{x : η − Cx ∈ 𝕍}` is representable by the template.
    pub fn new(fam: &TemplateFamily, sys: &SystemModel) -> Result<Self> {
        sys.validate(fam)?;
        let y = fam.facets().clone();
        let normals = -(&sys.noise.a * &sys.c);
        let mut meas_rows = Vec::new();
        for r in 0..normals.nrows() {
            let nr = normals.row(r).transpose();
            let hit = (0..y.nrows()).find_map(|i| {
                let yi = y.row(i).transpose();
                let alpha = yi.dot(&nr) / nr.norm_squared();
                (alpha > 0.0 && (&yi - &nr * alpha).norm() <= 1e-12 * (1.0 + yi.norm())).then_some((i, alpha))
            });
            match hit {
                Some(h) => meas_rows.push(h),
                None => {
                    return Err(Error::Invalid(format!(
                        "measurement facet {r} (normal {:?}) is not a row of the template",
                        nr.as_slice()
                    )))
                }
            }
        }
        let w_vertices: Vec<DVector<f64>> =
            polytope::hrep_vertices(&y, &sys.wbar)?.into_iter().map(|v| v.point).collect();
        let w_support = fam.hull_parameter(&w_vertices);
        let v_vertices = polytope::hrep_vertices(&sys.noise.a, &sys.noise.b)?.into_iter().map(|v| v.point).collect();
        Ok(InfoModel { facets: y, meas_rows, w_support, w_vertices, v_vertices })
    }

    pub fn facets(&self) -> &DMatrix<f64> {
        &self.facets
    }

    /// Vertices of `P(ŷ)`.
    pub fn vertices(&self, yhat: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        match polytope::hrep_vertices(&self.facets, yhat) {
            Ok(v) => Ok(v.into_iter().map(|v| v.point).collect()),
            Err(Error::EmptyPolytope) => Err(Error::EmptyInformationSet),
            Err(e) => Err(e),
        }
    }

    /// Tight parameter of `P(ŷ)`: supports at its vertices.
    pub fn tighten(&self, yhat: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.support_of(&self.vertices(yhat)?))
    }

    fn support_of(&self, pts: &[DVector<f64>]) -> DVector<f64> {
        let yv: Vec<DVector<f64>> = pts.iter().map(|p| &self.facets * p).collect();
        DVector::from_fn(self.facets.nrows(), |r, _| yv.iter().map(|v| v[r]).fold(f64::NEG_INFINITY, f64::max))
    }

    /// `X ← X ∩ {x : η − Cx ∈ 𝕍}`, tightened.
    pub fn measurement_update(&self, sys: &SystemModel, yhat: &DVector<f64>, eta: &DVector<f64>) -> Result<DVector<f64>> {
        let offsets = &sys.noise.b - &sys.noise.a * eta;
        let mut y = yhat.clone();
        for (r, &(i, alpha)) in self.meas_rows.iter().enumerate() {
            y[i] = y[i].min(alpha * offsets[r]);
        }
        self.tighten(&y)
    }

    /// Tight parameter of `AX + Bu + 𝕎`.
    pub fn propagate(&self, sys: &SystemModel, yhat: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let shift = &sys.b * u;
        let image: Vec<DVector<f64>> = self.vertices(yhat)?.iter().map(|v| &sys.a * v + &shift).collect();
        Ok(self.support_of(&image) + &self.w_support)
    }

    pub fn disturbance_vertices(&self) -> &[DVector<f64>] {
        &self.w_vertices
    }

    pub fn noise_vertices(&self) -> &[DVector<f64>] {
        &self.v_vertices
    }
}

/// Free-function form of [`InfoModel::measurement_update`].
pub fn measurement_update(
    fam: &TemplateFamily,
    sys: &SystemModel,
    yhat: &DVector<f64>,
    eta: &DVector<f64>,
) -> Result<DVector<f64>> {
    InfoModel::new(fam, sys)?.measurement_update(sys, yhat, eta)
}

/// Free-function form of [`InfoModel::propagate`].
pub fn propagate_info(fam: &TemplateFamily, sys: &SystemModel, yhat: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    InfoModel::new(fam, sys)?.propagate(sys, yhat, u)
}

fn sample_in(
    rng: &mut ChaCha8Rng,
    policy: SamplePolicy,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    vertices: &[DVector<f64>],
    score: impl Fn(&DVector<f64>) -> f64,
) -> DVector<f64> {
    match policy {
        SamplePolicy::UniformVertex => vertices[rng.gen_range(0..vertices.len())].clone(),
        SamplePolicy::AdversarialVertex => {
            let mut best = 0;
            for k in 1..vertices.len() {
                if score(&vertices[k]) > score(&vertices[best]) {
                    best = k;
                }
            }
            vertices[best].clone()
        }
        SamplePolicy::UniformBox => {
            let d = vertices[0].len();
            let lo = DVector::from_fn(d, |i, _| vertices.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min));
            let hi = DVector::from_fn(d, |i, _| vertices.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max));
            loop {
                let p = DVector::from_fn(d, |i, _| if hi[i] > lo[i] { rng.gen_range(lo[i]..=hi[i]) } else { lo[i] });
                if (a * &p - b).max() <= 0.0 {
                    return p;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub horizon: usize,
    pub seed: u64,
    pub disturbance: SamplePolicy,
    pub noise: SamplePolicy,
    /// Compare against a freshly built solver every this many steps (0: never).
    pub cold_check_every: usize,
    pub rigid: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            steps: 30,
            horizon: 10,
            seed: 0,
            disturbance: SamplePolicy::UniformVertex,
            noise: SamplePolicy::UniformVertex,
            cold_check_every: 10,
            rigid: false,
        }
    }
}

/// One completed loop iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// True state when the measurement is taken.
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub yhat_prior: Vec<f64>,
    pub yhat_post: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub status: TubeStatus,
    pub objective: f64,
    pub solve_time: f64,
    pub iterations: u32,
    /// `z₀, …, z_N` of the solved tube.
    pub tube: Vec<Vec<f64>>,
    /// Smallest slack of the state constraints over the vertices of the
    /// posterior and the propagated information sets.
    pub state_margin: f64,
    /// Largest `Y_r x − ŷ_r` over the posterior and the next prior.
    pub containment: f64,
    pub cold_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunStatus {
    Completed,
    QpInfeasible { step: usize },
    NumericalFailure { step: usize, message: String },
    EmptyInformationSet { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub status: RunStatus,
    /// Final true state and prior after the last step.
    pub final_x: Vec<f64>,
    pub final_yhat: Vec<f64>,
}

/// Aggregates of one run, written as the summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: usize,
    pub feasible: bool,
    pub status: RunStatus,
    pub containment_violations: usize,
    pub max_containment: f64,
    pub min_state_margin: f64,
    pub total_solve_time: f64,
    pub max_solve_time: f64,
    pub max_cold_gap: f64,
}

impl ClosedLoopTrace {
    pub fn feasible(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn summary(&self) -> RunSummary {
        let r = &self.records;
        RunSummary {
            seed: self.seed,
            steps: r.len(),
            feasible: self.feasible(),
            status: self.status.clone(),
            containment_violations: r.iter().filter(|s| s.containment > SOUND_TOL).count(),
            max_containment: r.iter().map(|s| s.containment).fold(f64::NEG_INFINITY, f64::max),
            min_state_margin: r.iter().map(|s| s.state_margin).fold(f64::INFINITY, f64::min),
            total_solve_time: r.iter().map(|s| s.solve_time).sum(),
            max_solve_time: r.iter().map(|s| s.solve_time).fold(0.0, f64::max),
            max_cold_gap: r.iter().filter_map(|s| s.cold_gap).fold(0.0, f64::max),
        }
    }

    /// Column names of [`ClosedLoopTrace::write_csv`].
    pub fn csv_header(&self) -> Vec<String> {
        let Some(first) = self.records.first() else { return base_header() };
        let mut h = base_header();
        let add = |h: &mut Vec<String>, name: &str, n: usize| h.extend((0..n).map(|i| format!("{name}{i}")));
        add(&mut h, "x", first.x.len());
        add(&mut h, "eta", first.eta.len());
        add(&mut h, "u", first.u.len());
        add(&mut h, "w", first.w.len());
        add(&mut h, "yhat_prior", first.yhat_prior.len());
        add(&mut h, "yhat_post", first.yhat_post.len());
        if let Some(z0) = first.tube.first() {
            add(&mut h, "z0_", z0.len());
        }
        h
    }

    /// One row per step; fixed column order (see [`ClosedLoopTrace::csv_header`]).
    /// Wall-clock times are left out so that equal seeds give equal bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for s in &self.records {
            let mut row = vec![
                s.step.to_string(),
                serde_json::to_string(&s.status)?.trim_matches('"').to_string(),
                fmt(s.objective),
                s.iterations.to_string(),
                fmt(s.state_margin),
                fmt(s.containment),
                s.cold_gap.map(fmt).unwrap_or_default(),
            ];
            for v in [&s.x, &s.eta, &s.u, &s.w, &s.yhat_prior, &s.yhat_post] {
                row.extend(v.iter().copied().map(fmt));
            }
            if let Some(z0) = s.tube.first() {
                row.extend(z0.iter().copied().map(fmt));
            }
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn base_header() -> Vec<String> {
    ["step", "status", "objective", "iterations", "state_margin", "containment", "cold_gap"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// The online controller: the full tube QP or its rigid reduction.
pub enum Controller {
    Dual(Box<OcpSolver>),
    Rigid { ocp: Box<RigidOcp>, steady: SteadyState },
}

impl Controller {
    /// Builds the controller for `X₀ = P(ŷ)` around the given invariant ensemble.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sys: &SystemModel,
        cost: &CostSpec,
        meta: &MetaTemplate,
        steady: &SteadyState,
        horizon: usize,
        yhat: &DVector<f64>,
        rigid: bool,
        settings: Settings,
    ) -> Result<Self> {
        if rigid {
            let r = ocp::build_rigid(sys, cost, meta, steady, horizon, yhat)?;
            Ok(Controller::Rigid { ocp: Box::new(r), steady: steady.clone() })
        } else {
            let o = ocp::build_dual_ocp(sys, cost, meta, horizon, yhat, &OcpOptions::default().with_terminal(steady.z.clone()))?;
            Ok(Controller::Dual(Box::new(OcpSolver::new(o, settings))))
        }
    }

    /// Solves from `ŷ`; rigid plans are returned lifted to a full tube.
    pub fn plan(&mut self, meta: &MetaTemplate, yhat: &DVector<f64>, settings: &Settings) -> Result<TubeSolution> {
        match self {
            Controller::Dual(s) => s.solve_from(yhat),
            Controller::Rigid { ocp, steady } => {
                ocp.set_initial(yhat)?;
                let t = Instant::now();
                let plan = ocp.solve(settings)?;
                let mut tube = ocp::lift_rigid(meta, steady, &plan);
                tube.objective = plan.objective;
                tube.solve_time = t.elapsed().as_secs_f64();
                Ok(tube)
            }
        }
    }

    fn cold(&self) -> Result<Option<TubeSolution>> {
        match self {
            Controller::Dual(s) => s.solve_cold().map(Some),
            Controller::Rigid { .. } => Ok(None),
        }
    }
}

/// Everything a closed-loop run needs besides the seed.
pub struct ClosedLoop<'a> {
    pub sys: &'a SystemModel,
    pub cost: &'a CostSpec,
    pub meta: &'a MetaTemplate,
    pub steady: &'a SteadyState,
    pub settings: Settings,
}

impl ClosedLoop<'_> {
    /// Runs `cfg.steps` iterations of measure → update → solve → recover →
    /// apply → propagate; stops at the first failed solve.
    pub fn run(&self, x_init: &DVector<f64>, yhat_init: &DVector<f64>, cfg: &SimConfig) -> Result<ClosedLoopTrace> {
        let (sys, meta) = (self.sys, self.meta);
        let info = InfoModel::new(meta.family(), sys)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let y = info.facets().clone();
        if (&y * x_init - yhat_init).max() > SOUND_TOL {
            return Err(Error::Invalid("initial state outside the initial information set".into()));
        }
        let mut ctrl = Controller::new(sys, self.cost, meta, self.steady, cfg.horizon, yhat_init, cfg.rigid, self.settings.clone())?;
        let mut x = x_init.clone();
        let mut yhat = yhat_init.clone();
        let mut records = Vec::with_capacity(cfg.steps);
        let mut status = RunStatus::Completed;
        let margin_of = |pts: &[DVector<f64>]| -> f64 {
            pts.iter().map(|p| -sys.state.violation(p)).fold(f64::INFINITY, f64::min)
        };
        for step in 0..cfg.steps {
            // i) measure
            let v = sample_in(&mut rng, cfg.noise, &sys.noise.a, &sys.noise.b, info.noise_vertices(), |v| {
                let eta = &sys.c * &x + v;
                info.measurement_update(sys, &yhat, &eta)
                    .and_then(|yp| info.vertices(&yp))
                    .map(|pts| -margin_of(&pts))
                    .unwrap_or(f64::NEG_INFINITY)
            });
            let eta = &sys.c * &x + &v;
            let x_meas = x.clone();
            // ii) update
            let post = match info.measurement_update(sys, &yhat, &eta) {
                Ok(p) => p,
                Err(Error::EmptyInformationSet) => {
                    status = RunStatus::EmptyInformationSet { step };
                    break;
                }
                Err(e) => return Err(e),
            };
            let mut containment = (&y * &x - &post).max();
            let post_vertices = info.vertices(&post)?;
            // iii) solve
            let tube = ctrl.plan(meta, &post, &self.settings)?;
            if tube.status != TubeStatus::Solved {
                warn!("seed {} step {step}: tube QP {:?}", cfg.seed, tube.status);
                status = match tube.status {
                    TubeStatus::Infeasible => RunStatus::QpInfeasible { step },
                    s => RunStatus::NumericalFailure { step, message: format!("{s:?}") },
                };
                break;
            }
            let cold_gap = if cfg.cold_check_every > 0 && step % cfg.cold_check_every == 0 {
                ctrl.cold()?.map(|c| (c.objective - tube.objective).abs() / (1.0 + tube.objective.abs()))
            } else {
                None
            };
            // iv) recover
            let u = ocp::recover_control(meta, &tube, &post)?.u;
            // v) apply and propagate
            let w = sample_in(&mut rng, cfg.disturbance, info.facets(), &sys.wbar, info.disturbance_vertices(), |w| {
                sys.state.violation(&(&sys.a * &x + &sys.b * &u + w))
            });
            x = &sys.a * &x + &sys.b * &u + &w;
            let prior = info.propagate(sys, &post, &u)?;
            containment = containment.max((&y * &x - &prior).max());
            let state_margin = margin_of(&post_vertices).min(margin_of(&info.vertices(&prior)?));
            debug!("seed {} step {step}: u = {:.4}, margin {:.4}, {:.3}s", cfg.seed, u[0], state_margin, tube.solve_time);
            records.push(StepRecord {
                step,
                x: x_meas.as_slice().to_vec(),
                eta: eta.as_slice().to_vec(),
                yhat_prior: yhat.as_slice().to_vec(),
                yhat_post: post.as_slice().to_vec(),
                u: u.as_slice().to_vec(),
                w: w.as_slice().to_vec(),
                status: tube.status,
                objective: tube.objective,
                solve_time: tube.solve_time,
                iterations: tube.iterations,
                tube: tube.z.iter().map(|z| z.as_slice().to_vec()).collect(),
                state_margin,
                containment,
                cold_gap,
            });
            yhat = prior;
        }
        Ok(ClosedLoopTrace {
            seed: cfg.seed,
            records,
            status,
            final_x: x.as_slice().to_vec(),
            final_yhat: yhat.as_slice().to_vec(),
        })
    }
}

/// A state drawn uniformly from the box `[lo, hi]`.
pub fn sample_box(seed: u64, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    DVector::from_fn(lo.len(), |i, _| rng.gen_range(lo[i]..=hi[i]))
}

/// Runs one closed loop per seed, spread over the available threads.
pub fn run_batch(
    lp: &ClosedLoop<'_>,
    x_lo: &[f64],
    x_hi: &[f64],
    yhat_init: &DVector<f64>,
    base: &SimConfig,
    seeds: &[u64],
) -> Result<Vec<ClosedLoopTrace>> {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(seeds.len().max(1));
    let chunks: Vec<Vec<u64>> = (0..threads).map(|t| seeds.iter().copied().skip(t).step_by(threads).collect()).collect();
    let results: Vec<Result<Vec<ClosedLoopTrace>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|&seed| {
                            let cfg = SimConfig { seed, ..base.clone() };
                            let x0 = sample_box(seed, x_lo, x_hi);
                            let t = lp.run(&x0, yhat_init, &cfg);
                            if let Ok(tr) = &t {
                                info!("seed {seed}: {:?} after {} steps", tr.status, tr.records.len());
                            }
                            t
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(seeds.len());
    for r in results {
        out.extend(r?);
    }
    out.sort_by_key(|t| seeds.iter().position(|&s| s == t.seed));
    Ok(out)
}

/// Open-loop execution of one plan's control law `μ_k(X) = Σθ_ju_{k,j}`
/// for `k < N`, returning the realized priors `ŷ_1, …, ŷ_N` (no measurements
/// beyond the sensor bound already encoded in the tube).
pub fn follow_plan(
    sys: &SystemModel,
    meta: &MetaTemplate,
    tube: &TubeSolution,
    yhat0: &DVector<f64>,
    etas: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let info = InfoModel::new(meta.family(), sys)?;
    let mut yhat = yhat0.clone();
    let mut out = Vec::new();
    for k in 0..tube.horizon() {
        let post = match etas.get(k) {
            Some(eta) if k > 0 => info.measurement_update(sys, &yhat, eta)?,
            _ => yhat.clone(),
        };
        let stage = TubeSolution {
            zeta: tube.zeta[k..].to_vec(),
            u: tube.u[k..].to_vec(),
            z: tube.z[k..].to_vec(),
            xi: tube.xi[k..].to_vec(),
            ..tube.clone()
        };
        let u = ocp::recover_control(meta, &stage, &post)?.u;
        yhat = info.propagate(sys, &post, &u)?;
        out.push(yhat.clone());
    }
    Ok(out)
}
