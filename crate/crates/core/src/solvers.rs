//! Nonlinear drivers for the steady Navier–Stokes equations: Picard, Newton,
//! CDA-Picard (Picard plus nudging toward observations) and the hybrid
//! CDA-Picard→Newton strategy, with Reynolds continuation for reference
//! solutions.
//!
//! Every step solves one saddle-point system
//!
//! ```text
//! ν(∇u,∇v) + γ(∇·u,∇·v) + b*(u_k,u,v) [+ b*(u,u_k,v)] [+ μ(I_H u, I_H v)]
//!     − (p,∇·v) − (∇·u,q) = ⟨f,v⟩ [+ b*(u_k,u_k,v)] [+ μ(I_H(u+ε), I_H v)]
//! ```
//!
//! with lid boundary conditions and the first pressure dof pinned; the
//! returned pressure is shifted to zero mean. Operators are summed entrywise
//! in a fixed order (base, convection, Newton term, nudging) so that, for
//! example, a CDA-Picard system with `μ = 0` is the Picard system bit for bit.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{
    AssembledSystem, CoarseInterpolant, DofMap, FemError, IhMode, LidConditions, NormOperators, NudgingOperator,
    PressureField, SystemAssembler, VelocityField,
};
use crate::linalg::{Factorization, LinalgError, SparseMatrix, SymbolicFactorization};
use crate::observations::ObservationSet;

/// Reynolds numbers used as continuation rungs for reference solutions.
pub const CONTINUATION_LADDER: [f64; 6] = [100.0, 500.0, 1000.0, 3000.0, 5000.0, 10000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Kinematic viscosity `1/Re`.
    pub nu: f64,
    /// Nudging parameter.
    pub mu: f64,
    pub gamma_gd: f64,
    pub tol_residual: f64,
    pub max_iter: usize,
    /// Bound on the `H¹` norm of an iterate beyond which a run is Diverged.
    pub blowup_threshold: f64,
    /// Residual at which the hybrid driver hands over to Newton.
    pub switch_tol: f64,
    pub ih_mode: IhMode,
    pub lid_value: [f64; 2],
    /// Record per-iteration wall time. Off by default so that histories are
    /// byte-reproducible; the column then holds zeros.
    pub record_wall_time: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nu: 1e-2,
            mu: 1.0,
            gamma_gd: 1.0,
            tol_residual: 1e-8,
            max_iter: 500,
            blowup_threshold: 1e4,
            switch_tol: 1e-2,
            ih_mode: IhMode::PointValue,
            lid_value: [1.0, 0.0],
            record_wall_time: false,
        }
    }
}

impl SolverConfig {
    pub fn for_reynolds(re: f64) -> Self {
        Self {
            nu: 1.0 / re,
            ..Self::default()
        }
    }

    pub fn reynolds(&self) -> f64 {
        1.0 / self.nu
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidConfig(m));
        if !(self.nu > 0.0) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.mu >= 0.0) {
            return bad(format!("mu must be nonnegative, got {}", self.mu));
        }
        if !(self.gamma_gd >= 0.0) {
            return bad(format!("gamma_gd must be nonnegative, got {}", self.gamma_gd));
        }
        if !(self.tol_residual > 0.0 && self.tol_residual < self.switch_tol && self.switch_tol < self.blowup_threshold) {
            return bad(format!(
                "need 0 < tol_residual ({}) < switch_tol ({}) < blowup_threshold ({})",
                self.tol_residual, self.switch_tol, self.blowup_threshold
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    Diverged,
}

/// Which linearization produced an iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Picard,
    Newton,
    CdaPicard,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Picard => "picard",
            Phase::Newton => "newton",
            Phase::CdaPicard => "cda_picard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖u_k − u_{k−1}‖_{L²}`.
    pub l2_residual: f64,
    /// `‖u_k − u_ref‖_{L²}` when a reference is supplied.
    pub l2_error: Option<f64>,
    /// `‖u_k‖_{H¹}`.
    pub h1_norm: f64,
    /// Max-norm of the discrete Navier–Stokes residual at `(u_k, p_k)` over
    /// unconstrained rows.
    pub nonlinear_residual: f64,
    pub wall_time_s: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationHistory {
    pub records: Vec<IterationRecord>,
    pub status: Status,
}

impl IterationHistory {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.l2_residual).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.l2_error).collect()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.l2_residual)
    }

    pub fn min_error(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.l2_error).reduce(f64::min)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("linear solve failed at iteration {iteration}: {source}")]
    LinearSolve {
        iteration: usize,
        #[source]
        source: LinalgError,
        history: Box<IterationHistory>,
    },
    #[error("reference continuation failed at Re={re}: {reason}")]
    Reference { re: f64, reason: String },
}

/// Velocity and pressure of one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub velocity: VelocityField,
    pub pressure: PressureField,
}

/// Operators shared by every step of a run on one mesh and viscosity.
pub struct ProblemContext {
    dofmap: Arc<DofMap>,
    assembler: SystemAssembler,
    /// Viscous + grad-div + pressure coupling.
    base: SparseMatrix,
    forcing: Vec<f64>,
    bc: LidConditions,
    norms: NormOperators,
    pressure_weights: Vec<f64>,
    symbolic: Mutex<Option<Arc<SymbolicFactorization>>>,
    nu: f64,
}

impl std::fmt::Debug for ProblemContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemContext")
            .field("n", &self.dofmap.mesh().n())
            .field("nu", &self.nu)
            .finish()
    }
}

impl ProblemContext {
    /// Lid-driven cavity without forcing.
    pub fn cavity(dofmap: Arc<DofMap>, config: &SolverConfig) -> Result<Self, SolverError> {
        Self::new(dofmap, config, None, None)
    }

    /// General setup: `forcing` supplies a body force and `interp` an
    /// interpolant whose nudging couplings the system pattern must hold.
    pub fn new(
        dofmap: Arc<DofMap>,
        config: &SolverConfig,
        forcing: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
        interp: Option<&CoarseInterpolant>,
    ) -> Result<Self, SolverError> {
        config.validate()?;
        let extra = match interp {
            Some(i) if i.mode() == IhMode::CellAverage => NudgingOperator::new(1.0, i.clone())?.couplings(&dofmap),
            _ => Vec::new(),
        };
        let assembler = SystemAssembler::new(dofmap.clone(), &extra);
        let mut base = assembler.viscous_graddiv(config.nu, config.gamma_gd)?;
        base.add_assign(&assembler.coupling()).map_err(FemError::from)?;
        let forcing = match forcing {
            Some(f) => assembler.load(f),
            None => vec![0.0; dofmap.n_total()],
        };
        let bc = LidConditions::new(&dofmap, config.lid_value);
        let norms = NormOperators::new(&dofmap);
        let mut pressure_weights = vec![0.0; dofmap.n_p()];
        for t in 0..dofmap.mesh().n_triangles() {
            let a = dofmap.mesh().signed_area(t) / 3.0;
            for v in dofmap.mesh().triangles()[t] {
                pressure_weights[v] += a;
            }
        }
        Ok(Self {
            dofmap,
            assembler,
            base,
            forcing,
            bc,
            norms,
            pressure_weights,
            symbolic: Mutex::new(None),
            nu: config.nu,
        })
    }

    pub fn dofmap(&self) -> &Arc<DofMap> {
        &self.dofmap
    }

    pub fn assembler(&self) -> &SystemAssembler {
        &self.assembler
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn norms(&self) -> &NormOperators {
        &self.norms
    }

    pub fn boundary_conditions(&self) -> &LidConditions {
        &self.bc
    }

    /// Zero interior velocity carrying the boundary values.
    pub fn initial_guess(&self) -> VelocityField {
        self.bc.lift(&self.dofmap)
    }

    fn factor(&self, m: &SparseMatrix) -> Result<Factorization, LinalgError> {
        let sym = {
            let mut guard = self.symbolic.lock().expect("symbolic cache poisoned");
            match guard.as_ref() {
                Some(s) if s.matches(m) => s.clone(),
                _ => {
                    let s = Arc::new(SymbolicFactorization::new(m.pattern().clone())?);
                    *guard = Some(s.clone());
                    s
                }
            }
        };
        Factorization::with_symbolic(sym, m)
    }

    fn split(&self, x: Vec<f64>) -> State {
        let n_u = self.dofmap.n_u();
        let mut p = x[n_u..].to_vec();
        let mean: f64 = p.iter().zip(&self.pressure_weights).map(|(a, w)| a * w).sum();
        p.iter_mut().for_each(|v| *v -= mean);
        let mut u = x;
        u.truncate(n_u);
        State {
            velocity: VelocityField(u),
            pressure: PressureField(p),
        }
    }

    /// Max-norm of the discrete Navier–Stokes residual over unconstrained
    /// rows, given the convection matrix at `state.velocity`.
    fn nonlinear_residual_with(&self, state: &State, conv: &SparseMatrix) -> f64 {
        let mut x = state.velocity.0.clone();
        x.extend_from_slice(&state.pressure.0);
        let mut m = self.base.clone();
        m.add_assign(conv).expect("shared pattern");
        let ax = m.mul_vec(&x);
        let mut constrained = vec![false; x.len()];
        for &(d, _) in self.bc.constrained() {
            constrained[d] = true;
        }
        ax.iter()
            .zip(&self.forcing)
            .zip(&constrained)
            .filter(|(_, &c)| !c)
            .map(|((a, f), _)| (a - f).abs())
            .fold(0.0, f64::max)
    }

    /// Discrete Navier–Stokes residual of a state (see [`IterationRecord`]).
    pub fn nonlinear_residual(&self, state: &State) -> Result<f64, SolverError> {
        let conv = self.assembler.convection(&state.velocity)?;
        Ok(self.nonlinear_residual_with(state, &conv))
    }
}

/// Nudging operator on a context's pattern together with its data term built
/// from the noisy observations.
#[derive(Debug, Clone)]
pub struct Nudging {
    operator: NudgingOperator,
    matrix: SparseMatrix,
    rhs: Vec<f64>,
}

impl Nudging {
    pub fn new(ctx: &ProblemContext, obs: &ObservationSet, mu: f64, mode: IhMode) -> Result<Self, SolverError> {
        let dofmap = ctx.dofmap();
        let interp = CoarseInterpolant::new(dofmap, obs.grid(), mode, Some(&obs.vertex_ids))?;
        let operator = NudgingOperator::new(mu, interp)?;
        let matrix = ctx.assembler.from_entries(&operator.entries(dofmap))?;
        let mut rhs = operator.rhs(dofmap, &obs.noisy)?;
        rhs.resize(dofmap.n_total(), 0.0);
        Ok(Self { operator, matrix, rhs })
    }

    pub fn mu(&self) -> f64 {
        self.operator.mu()
    }

    pub fn operator(&self) -> &NudgingOperator {
        &self.operator
    }
}

/// The linearization used by one step.
#[derive(Debug, Clone, Copy)]
pub enum Stepper<'a> {
    Picard,
    Newton,
    CdaPicard(&'a Nudging),
}

impl Stepper<'_> {
    pub fn phase(&self) -> Phase {
        match self {
            Stepper::Picard => Phase::Picard,
            Stepper::Newton => Phase::Newton,
            Stepper::CdaPicard(_) => Phase::CdaPicard,
        }
    }
}

fn add_vec(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Assembles the step system at `u_k` before boundary conditions.
pub fn assemble_step_system(
    stepper: Stepper<'_>,
    u_k: &VelocityField,
    ctx: &ProblemContext,
) -> Result<AssembledSystem, SolverError> {
    let conv = ctx.assembler.convection(u_k)?;
    assemble_with_convection(stepper, u_k, &conv, ctx)
}

fn assemble_with_convection(
    stepper: Stepper<'_>,
    u_k: &VelocityField,
    conv: &SparseMatrix,
    ctx: &ProblemContext,
) -> Result<AssembledSystem, SolverError> {
    let mut m = ctx.base.clone();
    m.add_assign(conv).map_err(FemError::from)?;
    let mut rhs = ctx.forcing.clone();
    match stepper {
        Stepper::Picard => {}
        Stepper::Newton => {
            let (n, r) = ctx.assembler.newton(u_k)?;
            m.add_assign(&n).map_err(FemError::from)?;
            add_vec(&mut rhs, &r);
        }
        Stepper::CdaPicard(nudging) => {
            if nudging.mu() > 0.0 {
                m.add_assign(&nudging.matrix).map_err(FemError::from)?;
                add_vec(&mut rhs, &nudging.rhs);
            }
        }
    }
    Ok(AssembledSystem::new(m, rhs))
}

fn solve_step(
    stepper: Stepper<'_>,
    u_k: &VelocityField,
    conv: &SparseMatrix,
    ctx: &ProblemContext,
) -> Result<State, LinalgError> {
    let system = assemble_with_convection(stepper, u_k, conv, ctx)
        .map_err(|e| LinalgError::Factorization(e.to_string()))?;
    let system = ctx.bc.apply(system);
    let x = ctx.factor(&system.matrix)?.solve(&system.rhs)?;
    Ok(ctx.split(x))
}

fn one_step(stepper: Stepper<'_>, u_k: &VelocityField, ctx: &ProblemContext) -> Result<State, SolverError> {
    ctx.dofmap.check_velocity(u_k)?;
    let conv = ctx.assembler.convection(u_k)?;
    solve_step(stepper, u_k, &conv, ctx).map_err(|source| SolverError::LinearSolve {
        iteration: 1,
        source,
        history: Box::new(IterationHistory {
            records: Vec::new(),
            status: Status::MaxIter,
        }),
    })
}

/// One Picard step.
pub fn picard_step(u_k: &VelocityField, ctx: &ProblemContext) -> Result<State, SolverError> {
    one_step(Stepper::Picard, u_k, ctx)
}

/// One Newton step.
pub fn newton_step(u_k: &VelocityField, ctx: &ProblemContext) -> Result<State, SolverError> {
    one_step(Stepper::Newton, u_k, ctx)
}

/// One CDA-Picard step nudged toward the noisy observations.
pub fn cda_picard_step(u_k: &VelocityField, nudging: &Nudging, ctx: &ProblemContext) -> Result<State, SolverError> {
    one_step(Stepper::CdaPicard(nudging), u_k, ctx)
}

/// Final state of a run and its history.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: State,
    pub history: IterationHistory,
}

/// Repeats `stepper` from `u0` until the successive-iterate residual drops
/// below `tol_residual` (Converged), the `H¹` norm exceeds
/// `blowup_threshold` (Diverged) or `max_iter` steps have run (MaxIter).
pub fn iterate(
    stepper: Stepper<'_>,
    u0: &VelocityField,
    ctx: &ProblemContext,
    config: &SolverConfig,
    reference: Option<&VelocityField>,
) -> Result<RunOutcome, SolverError> {
    let mut records = Vec::new();
    run_phase(stepper, u0, ctx, config, reference, config.tol_residual, 0, &mut records).map(|(state, status)| {
        RunOutcome {
            state,
            history: IterationHistory { records, status },
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    stepper: Stepper<'_>,
    u0: &VelocityField,
    ctx: &ProblemContext,
    config: &SolverConfig,
    reference: Option<&VelocityField>,
    tol: f64,
    k_offset: usize,
    records: &mut Vec<IterationRecord>,
) -> Result<(State, Status), SolverError> {
    config.validate()?;
    ctx.dofmap.check_velocity(u0)?;
    if let Some(r) = reference {
        ctx.dofmap.check_velocity(r)?;
    }
    let mut u_prev = u0.clone();
    let mut conv = ctx.assembler.convection(&u_prev)?;
    let mut last: Option<State> = None;
    for k in 1..=config.max_iter {
        let clock = Instant::now();
        let state = match solve_step(stepper, &u_prev, &conv, ctx) {
            Ok(s) => s,
            Err(source) => {
                return Err(SolverError::LinearSolve {
                    iteration: k_offset + k,
                    source,
                    history: Box::new(IterationHistory {
                        records: records.clone(),
                        status: Status::Diverged,
                    }),
                })
            }
        };
        let residual = ctx.norms.l2_diff(&state.velocity.0, &u_prev.0);
        let h1 = ctx.norms.h1(&state.velocity.0);
        let error = reference.map(|r| ctx.norms.l2_diff(&state.velocity.0, &r.0));
        conv = ctx.assembler.convection(&state.velocity)?;
        let nonlinear = ctx.nonlinear_residual_with(&state, &conv);
        let wall = if config.record_wall_time {
            clock.elapsed().as_secs_f64()
        } else {
            0.0
        };
        records.push(IterationRecord {
            k: k_offset + k,
            l2_residual: residual,
            l2_error: error,
            h1_norm: h1,
            nonlinear_residual: nonlinear,
            wall_time_s: wall,
            phase: stepper.phase(),
        });
        if !(h1 <= config.blowup_threshold) {
            return Ok((state, Status::Diverged));
        }
        if residual < tol {
            return Ok((state, Status::Converged));
        }
        u_prev = state.velocity.clone();
        last = Some(state);
    }
    Ok((last.expect("max_iter >= 1"), Status::MaxIter))
}

/// CDA-Picard until the residual drops below `switch_tol`, then Newton
/// (without nudging) from that iterate to `tol_residual`. Phase 2 is skipped
/// when phase 1 does not reach the switch tolerance.
pub fn hybrid_cda_newton(
    u0: &VelocityField,
    nudging: &Nudging,
    ctx: &ProblemContext,
    config: &SolverConfig,
    reference: Option<&VelocityField>,
) -> Result<RunOutcome, SolverError> {
    let mut records = Vec::new();
    let (state, status) = run_phase(
        Stepper::CdaPicard(nudging),
        u0,
        ctx,
        config,
        reference,
        config.switch_tol,
        0,
        &mut records,
    )?;
    if status != Status::Converged {
        return Ok(RunOutcome {
            state,
            history: IterationHistory { records, status },
        });
    }
    let offset = records.len();
    let (state, status) = run_phase(
        Stepper::Newton,
        &state.velocity,
        ctx,
        config,
        reference,
        config.tol_residual,
        offset,
        &mut records,
    )?;
    Ok(RunOutcome {
        state,
        history: IterationHistory { records, status },
    })
}

/// Outcome of one continuation rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungReport {
    pub re: f64,
    pub picard_iterations: usize,
    pub newton_iterations: usize,
    pub nonlinear_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub state: State,
    pub re: f64,
    /// Discrete residual of the final state.
    pub nonlinear_residual: f64,
    pub rungs: Vec<RungReport>,
}

/// Continuation rungs for a target Reynolds number.
pub fn continuation_ladder(re_target: f64) -> Vec<f64> {
    let mut rungs: Vec<f64> = CONTINUATION_LADDER.iter().copied().filter(|&r| r < re_target).collect();
    rungs.push(re_target);
    rungs
}

/// Newton tolerance on every continuation rung.
pub const REFERENCE_NEWTON_TOL: f64 = 1e-10;
/// Iteration limits per rung, independent of the run configuration.
pub const REFERENCE_PICARD_MAX_ITER: usize = 500;
pub const REFERENCE_NEWTON_MAX_ITER: usize = 100;

/// Discrete cavity solution at `re_target` by Reynolds continuation: on each
/// rung Picard to residual `1e-2`, then Newton to `1e-10`, warm-started from
/// the previous rung. Only `gamma_gd` and `lid_value` are taken from
/// `config`.
pub fn compute_reference(
    dofmap: Arc<DofMap>,
    re_target: f64,
    config: &SolverConfig,
) -> Result<ReferenceSolution, SolverError> {
    if !(re_target > 0.0) {
        return Err(SolverError::InvalidConfig(format!("Reynolds number must be positive, got {re_target}")));
    }
    let mut u: Option<VelocityField> = None;
    let mut rungs = Vec::new();
    let mut last: Option<(State, f64)> = None;
    for re in continuation_ladder(re_target) {
        let cfg = SolverConfig {
            nu: 1.0 / re,
            mu: 0.0,
            tol_residual: REFERENCE_NEWTON_TOL,
            switch_tol: 1e-2,
            blowup_threshold: 1e4,
            record_wall_time: false,
            ..*config
        };
        let ctx = ProblemContext::cavity(dofmap.clone(), &cfg)?;
        let start = u.take().unwrap_or_else(|| ctx.initial_guess());
        let fail = |reason: String| SolverError::Reference { re, reason };
        let picard_cfg = SolverConfig {
            tol_residual: cfg.switch_tol,
            max_iter: REFERENCE_PICARD_MAX_ITER,
            switch_tol: cfg.switch_tol * 10.0,
            ..cfg
        };
        let picard = iterate(Stepper::Picard, &start, &ctx, &picard_cfg, None).map_err(|e| fail(e.to_string()))?;
        if picard.history.status == Status::Diverged {
            return Err(fail("Picard diverged".into()));
        }
        let newton_cfg = SolverConfig {
            max_iter: REFERENCE_NEWTON_MAX_ITER,
            ..cfg
        };
        let newton = iterate(Stepper::Newton, &picard.state.velocity, &ctx, &newton_cfg, None)
            .map_err(|e| fail(e.to_string()))?;
        if newton.history.status != Status::Converged {
            return Err(fail(format!("Newton ended {:?}", newton.history.status)));
        }
        let resid = ctx.nonlinear_residual(&newton.state)?;
        rungs.push(RungReport {
            re,
            picard_iterations: picard.history.iterations(),
            newton_iterations: newton.history.iterations(),
            nonlinear_residual: resid,
        });
        u = Some(newton.state.velocity.clone());
        last = Some((newton.state, resid));
    }
    let (state, nonlinear_residual) = last.expect("at least one rung");
    Ok(ReferenceSolution {
        state,
        re: re_target,
        nonlinear_residual,
        rungs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn ctx(n: usize, re: f64) -> (ProblemContext, SolverConfig) {
        let cfg = SolverConfig {
            record_wall_time: false,
            ..SolverConfig::for_reynolds(re)
        };
        let d = Arc::new(DofMap::new(Mesh::uniform_cavity(n).unwrap()));
        (ProblemContext::cavity(d, &cfg).unwrap(), cfg)
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        c.switch_tol = 1e-9;
        assert!(c.validate().is_err());
        let c = SolverConfig {
            nu: 0.0,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            mu: -1.0,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ladder_is_clipped() {
        assert_eq!(continuation_ladder(100.0), vec![100.0]);
        assert_eq!(continuation_ladder(3000.0), vec![100.0, 500.0, 1000.0, 3000.0]);
        assert_eq!(continuation_ladder(2000.0), vec![100.0, 500.0, 1000.0, 2000.0]);
        assert_eq!(continuation_ladder(50.0), vec![50.0]);
    }

    #[test]
    fn picard_from_zero_is_stokes() {
        let (c, _) = ctx(4, 100.0);
        let zero = VelocityField::zeros(c.dofmap());
        let sys = assemble_step_system(Stepper::Picard, &zero, &c).unwrap();
        assert_eq!(sys.matrix, c.base);
        let mut stokes = c.assembler().viscous_graddiv(0.01, 1.0).unwrap();
        stokes.add_assign(&c.assembler().coupling()).unwrap();
        assert_eq!(sys.matrix, stokes);
    }

    #[test]
    fn stokes_solution_is_divergence_free_discretely() {
        let (c, _) = ctx(6, 1.0);
        let zero = VelocityField::zeros(c.dofmap());
        let s = picard_step(&zero, &c).unwrap();
        let b = crate::fem::assemble_divergence_coupling(c.dofmap());
        let bu = b.mul_vec(&s.velocity.0);
        assert!(bu.iter().all(|v| v.abs() < 1e-12));
        let mean: f64 = s.pressure.0.iter().zip(&c.pressure_weights).map(|(a, w)| a * w).sum();
        assert!(mean.abs() < 1e-13);
    }

    #[test]
    fn fixed_point_converges_in_one_iteration() {
        let (c, cfg) = ctx(6, 50.0);
        let out = iterate(Stepper::Picard, &c.initial_guess(), &c, &cfg, None).unwrap();
        assert_eq!(out.history.status, Status::Converged);
        let again = iterate(Stepper::Picard, &out.state.velocity, &c, &cfg, None).unwrap();
        assert_eq!(again.history.status, Status::Converged);
        assert_eq!(again.history.iterations(), 1);
    }
}
