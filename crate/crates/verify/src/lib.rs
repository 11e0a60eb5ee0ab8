//! Acceptance audit of the case study. Each criterion is a function returning
//! an [`Outcome`]; [`run`] evaluates a selection of them.

use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polytube::case_study;
use polytube::ensemble::{self, IntersectionMode};
use polytube::figure;
use polytube::ocp::{self, CostSpec, OcpOptions, SteadyState, SystemModel, TubeSolution};
use polytube::polytope::{self, VPolytope};
use polytube::qp::{self, QuadraticProgram, Settings, SparseMatrix, INF};
use polytube::sim::{self, ClosedLoop, SamplePolicy, SimConfig};
use polytube::template::{validate_consistency, MetaTemplate, SensorTemplate, IDENTITY_TOL};
use polytube::tutorial;
use polytube::{Error, Result};
use polytube_oracle as oracle;

pub const CRITERIA: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Set when a failure is an understood property of the published data.
    pub known_deviation: Option<String>,
    pub elapsed: f64,
}

impl Outcome {
    /// Failed without a documented reason.
    pub fn unexpected_failure(&self) -> bool {
        !self.passed && self.known_deviation.is_none()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {} ({:.1} s): {}", self.id, self.title, self.elapsed, self.detail)?;
        if let Some(k) = &self.known_deviation {
            write!(f, " | known deviation: {k}")?;
        }
        Ok(())
    }
}

/// Sample counts; the defaults are the acceptance values.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seeds: u64,
    pub steps: usize,
    pub random_qps: usize,
    pub rigid_sets: usize,
    pub random_zetas: usize,
    pub directions: usize,
    pub rng_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { seeds: 100, steps: 30, random_qps: 200, rigid_sets: 10, random_zetas: 20, directions: 64, rng_seed: 7 }
    }
}

/// Case-study data shared between criteria; the invariant ensemble is solved once.
pub struct Context {
    pub meta: MetaTemplate,
    pub sys: SystemModel,
    pub cost: CostSpec,
    pub cfg: VerifyConfig,
    steady: OnceLock<SteadyState>,
}

impl Context {
    pub fn new(cfg: VerifyConfig) -> Result<Self> {
        Ok(Context {
            meta: case_study::meta_template()?,
            sys: case_study::system(),
            cost: case_study::cost(case_study::TAU),
            cfg,
            steady: OnceLock::new(),
        })
    }

    pub fn steady(&self) -> Result<&SteadyState> {
        if let Some(s) = self.steady.get() {
            return Ok(s);
        }
        let s = ocp::solve_invariant(&self.sys, &self.cost, &self.meta, &Settings::precise())?;
        Ok(self.steady.get_or_init(|| s))
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.rng_seed.wrapping_mul(1000).wrapping_add(salt))
    }

    fn solve_first_prediction(&self, cost: &CostSpec) -> Result<TubeSolution> {
        let z_s = self.steady()?.z.clone();
        let yhat = case_study::initial_parameter();
        let opts = OcpOptions::default().with_terminal(z_s);
        let o = ocp::build_dual_ocp(&self.sys, cost, &self.meta, case_study::HORIZON, &yhat, &opts)?;
        let sol = o.solve(&Settings::precise())?;
        if !sol.is_solved() {
            return Err(Error::Numerical(format!("first prediction ended with {:?}", sol.status)));
        }
        Ok(sol)
    }
}

struct Check {
    passed: bool,
    detail: String,
    known: Option<String>,
}

fn check(passed: bool, detail: String) -> Check {
    Check { passed, detail, known: None }
}

const TITLES: [&str; 10] = [
    "Template audit",
    "Invariant ensemble",
    "Problem-size formulas",
    "First prediction",
    "Intrinsic separation",
    "Tutorial example",
    "Hull identity",
    "Closed-loop soundness",
    "Solver regression",
    "Rigid conservatism",
];

/// Runtime budgets in seconds (criteria without one use infinity).
const BUDGETS: [f64; 10] = [10.0, 60.0, f64::INFINITY, 120.0, f64::INFINITY, f64::INFINITY, f64::INFINITY, 1800.0, f64::INFINITY, f64::INFINITY];

/// Evaluates one criterion, timing it against its budget.
pub fn evaluate(ctx: &Context, id: u8) -> Outcome {
    let idx = (id as usize).clamp(1, 10) - 1;
    let t = Instant::now();
    let res = match id {
        1 => template_audit(ctx),
        2 => invariant_ensemble(ctx),
        3 => problem_size(ctx),
        4 => first_prediction(ctx),
        5 => intrinsic_separation(ctx),
        6 => tutorial_example(),
        7 => hull_identity(ctx),
        8 => closed_loop(ctx),
        9 => solver_regression(ctx),
        10 => rigid_conservatism(ctx),
        _ => Err(Error::Invalid(format!("no criterion {id}"))),
    };
    let elapsed = t.elapsed().as_secs_f64();
    let mut out = match res {
        Ok(c) => Outcome { id, title: TITLES[idx], passed: c.passed, detail: c.detail, known_deviation: c.known, elapsed },
        Err(e) => Outcome { id, title: TITLES[idx], passed: false, detail: format!("error: {e}"), known_deviation: None, elapsed },
    };
    if elapsed > BUDGETS[idx] {
        out.passed = false;
        out.detail.push_str(&format!("; over the {:.0} s budget", BUDGETS[idx]));
    }
    out
}

/// Evaluates the given criteria in order.
pub fn run(ctx: &Context, ids: &[u8]) -> Vec<Outcome> {
    ids.iter().map(|&id| evaluate(ctx, id)).collect()
}

fn template_audit(_ctx: &Context) -> Result<Check> {
    let meta = case_study::meta_template()?;
    let fam = meta.family();
    let rep = validate_consistency(fam, &meta);
    let (nu, nbar, nj) = (fam.num_vertices(), meta.num_meta_vertices(), meta.num_extreme());
    let counts = nu == 6 && nbar == 68 && nj == 60;
    let worst_required = rep.checks.iter().filter(|c| c.required).map(|c| c.residual).fold(0.0, f64::max);
    let literal: Vec<String> = rep.checks.iter().filter(|c| !c.required).map(|c| format!("{} res {:.1e}", c.name, c.residual)).collect();
    let all_ok = rep.checks.iter().all(|c| c.residual <= IDENTITY_TOL);
    let detail = format!(
        "ν={nu} ν̄={nbar} |𝕁|={nj}; translation identities max res {worst_required:.1e}; literal {}",
        literal.join(", ")
    );
    let known = (!all_ok && counts && worst_required <= IDENTITY_TOL).then(|| {
        "with the published Z and H the literal forms HZ=0 and Ω_jZ=I do not hold; \
         the forms the derivations use (HZY=0, Ω_jZY=Y) hold to machine precision"
            .to_string()
    });
    Ok(Check { passed: all_ok && counts, detail, known })
}

fn invariant_ensemble(ctx: &Context) -> Result<Check> {
    let (meta, sys) = (&ctx.meta, &ctx.sys);
    let steady = ctx.steady()?;
    let audit = ocp::audit_tube(sys, meta, &steady.as_tube(), None, None).max_violation();
    let step = ensemble::ensemble_step(meta, sys, &steady.z, &steady.u, IntersectionMode::Exact)?;
    let step_relaxed = ensemble::ensemble_step(meta, sys, &steady.z, &steady.u, IntersectionMode::Relaxed)?;
    let growth = (&step - &steady.z).max();
    let sensor = SensorTemplate { vbar: sys.vbar.clone() };
    let exact = ensemble::intersect_sensor(meta, &steady.z, &sensor, IntersectionMode::Exact)?;
    let relaxed = ensemble::intersect_sensor(meta, &steady.z, &sensor, IntersectionMode::Relaxed)?;
    let gap = (&exact - &relaxed).amax().max((&step - &step_relaxed).amax());
    let qp_gap = (&steady.zeta - &exact).amax();
    let passed = audit <= 1e-6 && growth <= 1e-6 && gap <= 1e-6 && qp_gap <= 1e-6;
    Ok(check(
        passed,
        format!(
            "z_s={}; audit {audit:.1e}; max(z⁺−z_s) {growth:.1e}; |ζ_exact−ζ_relaxed| {gap:.1e}; |ζ_s(QP)−ζ_exact| {qp_gap:.1e}",
            fmt_vec(&steady.z, 3)
        ),
    ))
}

fn problem_size(ctx: &Context) -> Result<Check> {
    let (meta, sys) = (&ctx.meta, &ctx.sys);
    let z_s = ctx.steady()?.z.clone();
    let yhat = case_study::initial_parameter();
    let o = ocp::build_dual_ocp(sys, &ctx.cost, meta, case_study::HORIZON, &yhat, &OcpOptions::literal().with_terminal(z_s))?;
    let formula = ocp::complexity(meta, sys, case_study::HORIZON);
    let n_opt = o.num_vars();
    let n_term = o.terminal_rows().len();
    let n_con = o.num_rows() - n_term;
    let passed = n_opt == 4368 && n_con == 40288 && formula.n_opt == n_opt && formula.n_con == n_con;
    Ok(check(
        passed,
        format!("built n_opt={n_opt}, n_con={n_con} (+{n_term} terminal-indicator rows); formula n_opt={}, n_con={}", formula.n_opt, formula.n_con),
    ))
}

fn corners(poly: &VPolytope) -> Vec<[f64; 2]> {
    poly.vertices.iter().map(|v| [v[0], v[1]]).collect()
}

fn first_prediction(ctx: &Context) -> Result<Check> {
    let (meta, sys) = (&ctx.meta, &ctx.sys);
    let z_s = ctx.steady()?.z.clone();
    let sol = ctx.solve_first_prediction(&ctx.cost)?;
    let hull0 = ensemble::extrinsic_hull(meta, &sol.z[0])?;
    let target = VPolytope::axis_box(&case_study::X0_LO, &case_study::X0_HI);
    let haus = polytope::hausdorff(&hull0, &target)?;
    let haus_oracle = oracle::hausdorff_2d(&corners(&hull0), &corners(&target));
    let active: Vec<usize> = (0..sol.horizon()).filter(|&k| !figure::active_vertices(meta, sys, &sol.zeta[k]).is_empty()).collect();
    let first = active.first().copied();
    let term = (sol.z.last().expect("tube") - &z_s).max();
    let passed = haus.max(haus_oracle) <= 1e-6 && first == Some(2) && term <= 1e-6;
    Ok(check(
        passed,
        format!(
            "(a) Hausdorff(hull₀, [17,23]²) {haus:.1e} (oracle {haus_oracle:.1e}); (b) active stages {active:?}; (c) max(z_N−z_s) {term:.1e}; objective {:.3}",
            sol.objective
        ),
    ))
}

/// `sζ_s + t·base + ZYa + e` with `e ≥ 0`, kept only when strictly inside the
/// meta cone (`HZY = 0` makes the first three terms cone-feasible).
fn random_zeta(meta: &MetaTemplate, zeta_s: &DVector<f64>, base: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let zy = meta.ensemble() * meta.family().facets();
    loop {
        let a = DVector::from_fn(zy.ncols(), |_, _| rng.gen_range(-10.0..10.0));
        let e = DVector::from_fn(zeta_s.len(), |_, _| rng.gen_range(0.0..3.0));
        let zeta = zeta_s * rng.gen_range(0.2..2.0) + base * rng.gen_range(0.0..1.5) + &zy * a + e;
        if (meta.meta_cone() * &zeta).max() < -1e-6 * (1.0 + zeta.amax()) {
            return zeta;
        }
    }
}

fn random_controls(n: usize, nu: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..n).map(|_| DVector::from_fn(nu, |_, _| rng.gen_range(-10.0..10.0))).collect()
}

fn intrinsic_separation(ctx: &Context) -> Result<Check> {
    let (meta, sys) = (&ctx.meta, &ctx.sys);
    let steady = ctx.steady()?;
    let mut rng = ctx.rng(5);
    let nj = meta.num_extreme();
    let nu = sys.num_inputs();
    let zyb = meta.ensemble() * meta.family().facets() * &sys.b;
    let base = ensemble::cone_feasible(meta, &steady.z)?;

    // (a) translation covariance
    let mut cov: f64 = 0.0;
    let mut intr: f64 = 0.0;
    let mut samples = vec![steady.z.clone()];
    samples.extend((0..10).map(|_| random_zeta(meta, &steady.zeta, &base, &mut rng)));
    for z in &samples {
        let u = random_controls(nj, nu, &mut rng);
        let delta = DVector::from_fn(nu, |_, _| rng.gen_range(-20.0..20.0));
        let shifted: Vec<DVector<f64>> = u.iter().map(|v| v + &delta).collect();
        let z1 = ensemble::ensemble_step(meta, sys, z, &u, IntersectionMode::Exact)?;
        let z2 = ensemble::ensemble_step(meta, sys, z, &shifted, IntersectionMode::Exact)?;
        cov = cov.max((&z2 - &z1 - &zyb * &delta).amax());
        intr = intr.max((z2[0] - z1[0]).abs().max((z2[1] - z1[1]).abs()));
    }
    let ok_a = cov <= 1e-9 && intr <= 1e-9;

    // (b) two tight tubes from the same initial ensemble
    let z0 = meta.ensemble() * case_study::initial_parameter();
    let (mut za, mut zb) = (z0.clone(), z0.clone());
    let mut ok_b = true;
    let mut tube_a = vec![za.clone()];
    for _ in 0..case_study::HORIZON {
        za = ensemble::ensemble_step(meta, sys, &za, &random_controls(nj, nu, &mut rng), IntersectionMode::Exact)?;
        zb = ensemble::ensemble_step(meta, sys, &zb, &random_controls(nj, nu, &mut rng), IntersectionMode::Exact)?;
        ok_b &= ensemble::intrinsically_equivalent(meta, &za, meta, &zb)?;
        tube_a.push(za.clone());
    }
    let discriminates = !ensemble::intrinsically_equivalent(meta, &tube_a[0], meta, &tube_a[1])?;

    // (c) intrinsic trajectories for τ ∈ {0, 0.01, 1}
    let intrinsic = |t: &[DVector<f64>]| -> Vec<[f64; 2]> { t.iter().map(|z| [z[0], z[1]]).collect() };
    let reference = ctx.solve_first_prediction(&case_study::cost(0.01))?;
    let heavy = ctx.solve_first_prediction(&case_study::cost(1.0))?;
    let zero = ctx.solve_first_prediction(&case_study::cost(0.0))?;
    let mut tight = vec![z0.clone()];
    for k in 0..zero.horizon() {
        tight.push(ensemble::ensemble_step(meta, sys, &tight[k], &zero.u[k], IntersectionMode::Exact)?);
    }
    let dist = |a: &[[f64; 2]], b: &[[f64; 2]]| a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs())).fold(0.0, f64::max);
    let r = intrinsic(&reference.z);
    let d_heavy = dist(&r, &intrinsic(&heavy.z));
    let d_zero = dist(&r, &intrinsic(&tight));
    let ok_c = d_heavy <= 1e-6 && d_zero <= 1e-6;

    Ok(check(
        ok_a && ok_b && discriminates && ok_c,
        format!(
            "(a) max|Δz⁺−ZYBδ| {cov:.1e}, max|Δz₁,₂| {intr:.1e} over {} ensembles; (b) equivalent at every step: {ok_b} (control: z₀≁z₁ {discriminates}); \
             (c) |z₁,₂(τ=1)−z₁,₂(τ=0.01)| {d_heavy:.1e}, |tight(τ=0)−z₁,₂(τ=0.01)| {d_zero:.1e}",
            samples.len()
        ),
    ))
}

/// Endpoints of every `P(y)` over the vertices of `ℙ(ζ)`, all by brute force.
fn oracle_union_points(meta: &MetaTemplate, zeta: &DVector<f64>) -> Vec<DVector<f64>> {
    let fam = meta.family();
    let f = meta.param_set_matrix();
    let b = meta.param_set_rhs(zeta);
    let y = fam.facets();
    let scale = 1e-9 * (1.0 + zeta.amax());
    oracle::vertices(&f, &b, scale).iter().flat_map(|v| oracle::vertices(y, v, scale)).collect()
}

fn tutorial_example() -> Result<Check> {
    let meta = tutorial::meta_template()?;
    let prior = tutorial::prior();
    let post = ensemble::intersect_sensor(&meta, &prior, &tutorial::sensor(), IntersectionMode::Exact)?;
    let mp = ensemble::measures(&meta, &prior)?;
    let mq = ensemble::measures(&meta, &post)?;
    let prior_diam = oracle::diameter(&oracle_union_points(&meta, &prior));
    let post_diam = oracle::diameter(&oracle_union_points(&meta, &post));
    let exact = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let passed = exact(mp.intrinsic_dev, 6.0)
        && exact(mp.extrinsic_diam, 6.0)
        && exact(prior_diam, 6.0)
        && exact(mq.intrinsic_dev, 2.0)
        && exact(mq.extrinsic_diam, 6.0)
        && exact(post_diam, 6.0);
    Ok(check(
        passed,
        format!(
            "prior: intrinsic {:.9}, diameter {:.9} (oracle {prior_diam:.9}); posterior: intrinsic {:.9}, extrinsic {:.9} (oracle {post_diam:.9})",
            mp.intrinsic_dev, mp.extrinsic_diam, mq.intrinsic_dev, mq.extrinsic_diam
        ),
    ))
}

fn hull_identity(ctx: &Context) -> Result<Check> {
    let meta = &ctx.meta;
    let steady = ctx.steady()?;
    let mut rng = ctx.rng(7);
    let base = ensemble::cone_feasible(meta, &steady.z)?;
    let mut zetas = vec![steady.zeta.clone()];
    zetas.extend((0..ctx.cfg.random_zetas).map(|_| random_zeta(meta, &steady.zeta, &base, &mut rng)));
    let fam = meta.family();
    let nd = ctx.cfg.directions;
    let dirs: Vec<DVector<f64>> = (0..nd)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / nd as f64;
            DVector::from_vec(vec![t.cos(), t.sin()])
        })
        .collect();
    let mut worst: f64 = 0.0;
    for zeta in &zetas {
        let hull = ensemble::extrinsic_hull(meta, zeta)?;
        let pts: Vec<DVector<f64>> = meta.extreme_maps().into_iter().flat_map(|o| fam.vertices(&(o * zeta))).collect();
        let union = oracle_union_points(meta, zeta);
        let scale = 1.0 + zeta.amax();
        for d in &dirs {
            let h = hull.support(d)?;
            let direct = oracle::support(&pts, d);
            let brute = oracle::support(&union, d);
            worst = worst.max((h - direct).abs().max((h - brute).abs()) / scale);
        }
    }
    Ok(check(
        worst <= 1e-8,
        format!("{} ensembles × {nd} directions: max relative support residual {worst:.1e} (hull vs max over 𝕁 vs brute-force union)", zetas.len()),
    ))
}

fn closed_loop(ctx: &Context) -> Result<Check> {
    let (meta, sys) = (&ctx.meta, &ctx.sys);
    let steady = ctx.steady()?;
    let lp = ClosedLoop { sys, cost: &ctx.cost, meta, steady, settings: Settings::mpc() };
    let yhat = case_study::initial_parameter();
    let policies = [SamplePolicy::UniformVertex, SamplePolicy::UniformBox, SamplePolicy::AdversarialVertex];
    let mut traces = Vec::new();
    for (p, &policy) in policies.iter().enumerate() {
        let seeds: Vec<u64> = (0..ctx.cfg.seeds).filter(|s| *s as usize % policies.len() == p).collect();
        let base = SimConfig { steps: ctx.cfg.steps, horizon: case_study::HORIZON, disturbance: policy, noise: policy, ..SimConfig::default() };
        traces.extend(sim::run_batch(&lp, &case_study::X0_LO, &case_study::X0_HI, &yhat, &base, &seeds)?);
    }
    let summaries: Vec<_> = traces.iter().map(|t| t.summary()).collect();
    let infeasible = summaries.iter().filter(|s| !s.feasible).count();
    let short = summaries.iter().filter(|s| s.steps != ctx.cfg.steps).count();
    let violations: usize = summaries.iter().map(|s| s.containment_violations).sum();
    let margin = summaries.iter().map(|s| s.min_state_margin).fold(f64::INFINITY, f64::min);
    let max_solve = summaries.iter().map(|s| s.max_solve_time).fold(0.0, f64::max);
    let cold = summaries.iter().map(|s| s.max_cold_gap).fold(0.0, f64::max);
    let passed = infeasible == 0 && short == 0 && violations == 0 && margin >= -1e-6;
    Ok(check(
        passed,
        format!(
            "{} runs × {} steps: {infeasible} infeasible, {violations} containment violations, min x₂+45 over info-set vertices {margin:.3e}, \
             max solve {max_solve:.2} s, max cold-start gap {cold:.1e}",
            traces.len(),
            ctx.cfg.steps
        ),
    ))
}

struct RandomQp {
    qp: QuadraticProgram,
    p: DMatrix<f64>,
    q: DVector<f64>,
    eq: (DMatrix<f64>, DVector<f64>),
    ineq: (DMatrix<f64>, DVector<f64>),
}

/// A strictly convex QP with at most 10 one-sided inequality rows (two-sided
/// rows count twice) and a few equalities, feasible by construction.
fn random_qp(rng: &mut ChaCha8Rng) -> Result<RandomQp> {
    let n = rng.gen_range(1..=50usize);
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) / (n as f64).sqrt());
    let p = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..1.0);
    let p = (&p + p.transpose()) * 0.5;
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let x_feas = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let n_eq = rng.gen_range(0..=n.min(3) / 2 + usize::from(n > 3));
    let mut budget = rng.gen_range(1..=10usize);
    let (mut rows, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
    let (mut er, mut ef, mut ir, mut ib) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n_eq {
        let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let v = a.dot(&x_feas);
        rows.push(a.clone());
        lo.push(v);
        hi.push(v);
        er.push(a);
        ef.push(v);
    }
    while budget > 0 {
        let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let v = a.dot(&x_feas);
        let upper = v + rng.gen_range(0.0..0.5);
        if budget >= 2 && rng.gen_bool(0.3) {
            let lower = v - rng.gen_range(0.0..0.5);
            rows.push(a.clone());
            lo.push(lower);
            hi.push(upper);
            ir.push(a.clone());
            ib.push(upper);
            ir.push(-a);
            ib.push(-lower);
            budget -= 2;
        } else {
            rows.push(a.clone());
            lo.push(-INF);
            hi.push(upper);
            ir.push(a);
            ib.push(upper);
            budget -= 1;
        }
    }
    let stack = |r: &[DVector<f64>]| DMatrix::from_fn(r.len(), n, |i, j| r[i][j]);
    let m = stack(&rows);
    let qp = QuadraticProgram::new(SparseMatrix::from_dense(&p), q.as_slice().to_vec(), SparseMatrix::from_dense(&m), lo, hi)?;
    Ok(RandomQp { qp, p, q, eq: (stack(&er), DVector::from_vec(ef)), ineq: (stack(&ir), DVector::from_vec(ib)) })
}

fn solver_regression(ctx: &Context) -> Result<Check> {
    let mut rng = ctx.rng(9);
    let settings = Settings::precise();
    let (mut dx, mut dobj, mut gap) = (0.0f64, 0.0f64, 0.0f64);
    let (mut failures, mut no_oracle) = (0, 0);
    let mut max_n = 0;
    for _ in 0..ctx.cfg.random_qps {
        let case = random_qp(&mut rng)?;
        max_n = max_n.max(case.q.len());
        let res = qp::solve(&case.qp, &settings)?;
        let Some(reference) = oracle::active_set_qp(&case.p, &case.q, &case.eq.0, &case.eq.1, &case.ineq.0, &case.ineq.1) else {
            no_oracle += 1;
            continue;
        };
        if !res.status.is_optimal() {
            failures += 1;
            continue;
        }
        let x = DVector::from_column_slice(&res.x);
        let scale = 1.0 + reference.objective.abs();
        dx = dx.max((&x - &reference.x).amax() / (1.0 + reference.x.amax()));
        dobj = dobj.max((res.objective - reference.objective).abs() / scale);
        gap = gap.max(res.duality_gap() / scale);
    }
    Ok(check(
        failures + no_oracle == 0 && dx <= 1e-6 && dobj <= 1e-6 && gap <= 1e-6,
        format!(
            "{} QPs (n ≤ {max_n}): {failures} unsolved, {no_oracle} without oracle solution, max |x−x_oracle| {dx:.1e}, max objective error {dobj:.1e}, max duality gap {gap:.1e} (relative to 1+|obj|)",
            ctx.cfg.random_qps
        ),
    ))
}

/// A random member of `𝔓(z_s)`: a convex combination of a few vertices of `ℙ(z_s)`.
fn random_member(vertices: &[DVector<f64>], rng: &mut ChaCha8Rng) -> DVector<f64> {
    let k = rng.gen_range(1..=3);
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut y = DVector::zeros(vertices[0].len());
    for wi in w {
        y += &vertices[rng.gen_range(0..vertices.len())] * (wi / total);
    }
    y
}

fn rigid_conservatism(ctx: &Context) -> Result<Check> {
    let (meta, sys, cost) = (&ctx.meta, &ctx.sys, &ctx.cost);
    let steady = ctx.steady()?;
    let mut rng = ctx.rng(10);
    let vertices = ensemble::member_vertices(meta, &steady.z)?;
    let settings = Settings::precise();
    let opts = OcpOptions::default().with_terminal(steady.z.clone());
    let (mut rigid_feasible, mut lift_ok, mut cost_ok) = (0, 0, 0);
    let (mut worst_audit, mut min_margin) = (0.0f64, f64::INFINITY);
    for _ in 0..ctx.cfg.rigid_sets {
        let yhat = random_member(&vertices, &mut rng);
        let full = ocp::build_dual_ocp(sys, cost, meta, case_study::HORIZON, &yhat, &opts)?.solve(&settings)?;
        let rigid = ocp::build_rigid(sys, cost, meta, steady, case_study::HORIZON, &yhat)?;
        let plan = rigid.solve(&settings)?;
        if !plan.status.eq(&ocp::TubeStatus::Solved) {
            continue;
        }
        rigid_feasible += 1;
        let lifted = ocp::lift_rigid(meta, steady, &plan);
        let audit = ocp::audit_tube(sys, meta, &lifted, Some(&yhat), Some(&steady.z)).max_violation();
        worst_audit = worst_audit.max(audit);
        lift_ok += usize::from(audit <= 1e-6);
        if full.is_solved() {
            let margin = lifted.cost(cost)? - full.cost(cost)?;
            min_margin = min_margin.min(margin);
            cost_ok += usize::from(margin >= -1e-6);
        }
    }
    let passed = rigid_feasible > 0 && lift_ok == rigid_feasible && cost_ok == rigid_feasible;
    Ok(check(
        passed,
        format!(
            "{rigid_feasible}/{} rigid-feasible; lifted tubes feasible {lift_ok} (max audit {worst_audit:.1e}); \
             cost ≥ full optimum {cost_ok} (min rigid−full {min_margin:.4e})",
            ctx.cfg.rigid_sets
        ),
    ))
}

fn fmt_vec(v: &DVector<f64>, digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("({})", parts.join(", "))
}
