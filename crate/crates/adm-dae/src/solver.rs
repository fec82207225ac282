//! Order-by-order decomposition solver for constrained mechanical
//! systems in index-3 form:
//!
//! ```text
//!   dp/dt = v
//!   M(p) dv/dt = f(p, v, t) − Gᵀ(p) λ      G = ∂g/∂p
//!   0 = g(p)
//! ```
//!
//! with consistent initial data g(p₀) = 0, G(p₀)v₀ = 0. Writing every
//! unknown as a component series and matching orders turns the DAE into a
//! chain of linear solves against two constant matrices, M₀ = M(p₀) and
//! G₀ = G(p₀). With L the time derivative and L⁻¹ integration from 0, the
//! step for order n ≥ 2 is
//!
//! ```text
//!   R = L⁻²( f⁽ⁿ⁻²⁾ − Σ_{k=0}^{n−3} [ (Gᵀ)⁽ⁿ⁻²⁻ᵏ⁾ λ⁽ᵏ⁾ + (M)⁽ⁿ⁻²⁻ᵏ⁾ z⁽ᵏ⁾ ] )
//!   S = −g⁽ⁿ⁾ |_{p⁽ⁿ⁾=0}
//!   (G₀ M₀⁻¹ G₀ᵀ) y = G₀ M₀⁻¹ R − S        y = L⁻² λ⁽ⁿ⁻²⁾
//!   p⁽ⁿ⁾ = M₀⁻¹ (R − G₀ᵀ y)
//!   v⁽ⁿ⁻¹⁾ = L p⁽ⁿ⁾,   λ⁽ⁿ⁻²⁾ = L² y
//! ```
//!
//! where the acceleration components z⁽ᵏ⁾ solve M z = f − Gᵀλ order by
//! order through the matrix-inverse convolution of [`crate::adomian`].
//! Both equations of the order-n block system hold by construction:
//! M₀ p⁽ⁿ⁾ + G₀ᵀ y = R and G₀ p⁽ⁿ⁾ = S, the latter being the order-n
//! constraint 0 = g⁽ⁿ⁾ by linearity of g⁽ⁿ⁾ in its top component.
//!
//! No step ever inverts M(p) or forms a symbolic M⁻¹: the division of
//! labor is one LU factorization of M₀, one of the Schur complement
//! G₀ M₀⁻¹ G₀ᵀ, and polynomial arithmetic.
//!
//! The series converges on a window around the expansion point, so
//! [`multistage_solve`] covers longer horizons by restarting the expansion
//! on abutting stages, re-projecting the handed-over state onto the
//! constraint manifold to stop drift from accumulating.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::adomian::{
    adomian_matrix_inverse_apply, adomian_matrix_product, adomian_of, adomian_of_matrix,
    adomian_of_vec, AdomianSequence, ComponentHistory, PolyMatrix,
};
use crate::expr::{evaluate, jacobian, EvalError, Expr, SymbolTable, TIME_SYMBOL};
use crate::linalg::{
    diagnostics, lu_factor, schur_complement, DenseMatrix, DiagnosticsReport, LinalgError,
};
use crate::series::{SeriesError, TimePoly, MAX_CAP};

/// Default expansion order.
pub const DEFAULT_ORDER: usize = 8;

/// Tolerance below which initial data counts as consistent. Violations
/// above it make [`solve_series`] refuse to run.
pub const CONSISTENCY_TOL: f64 = 1e-10;

const PROJECTION_TOL: f64 = 1e-12;
const PROJECTION_MAX_ITER: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum SystemError {
    #[error("{what}: expected {expected} entries, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{n_lambda} constraints exceed the {n_p} coordinates")]
    TooManyConstraints { n_lambda: usize, n_p: usize },
    #[error("{context} references undeclared symbol `{name}`")]
    UndeclaredSymbol { context: &'static str, name: String },
    #[error("{context} may not reference the {role} `{name}`")]
    ForbiddenSymbol {
        context: &'static str,
        role: &'static str,
        name: String,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("expansion order must lie in 3..={max_order}, got {order}")]
    InvalidOrder { order: usize, max_order: usize },
    #[error(
        "initial data violates the constraints: |g(p0)| = {g_residual:.6e}, \
         |G(p0)·v0| = {gv_residual:.6e}, tolerance {tol:.1e}"
    )]
    InconsistentInitialData {
        g_residual: f64,
        gv_residual: f64,
        tol: f64,
    },
    #[error("constraint Jacobian at the expansion point has rank {rank}, needs {needed}")]
    RankDeficientConstraints { rank: usize, needed: usize },
    #[error("mass matrix at the expansion point is singular (rcond {rcond:.3e})")]
    SingularMassMatrix { rcond: f64 },
    #[error(
        "mass matrix is not positive definite on the constraint kernel \
         (smallest eigenvalue {min_eigenvalue:.6e})"
    )]
    IndefiniteOnKernel { min_eigenvalue: f64 },
    #[error("Schur complement G·M⁻¹·Gᵀ is singular at the expansion point")]
    SingularSchur,
    #[error(
        "restart projection stalled at stage {stage}: residual {residual:.3e} \
         after {iterations} iterations"
    )]
    ProjectionStalled {
        stage: usize,
        residual: f64,
        iterations: usize,
    },
    #[error("{context} evaluated to a nonfinite value")]
    NonFinite { context: &'static str },
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

fn map_constraint_error(e: LinalgError) -> SolveError {
    match e {
        LinalgError::RankDeficient { rank, needed } => {
            SolveError::RankDeficientConstraints { rank, needed }
        }
        _ => SolveError::SingularSchur,
    }
}

/// A constrained mechanical system in first-order form, validated on
/// construction: shapes agree, the constraint count does not exceed the
/// coordinate count, every expression references only declared symbols,
/// and the mass matrix and constraints depend on coordinates and
/// parameters alone. The constraint Jacobian is derived symbolically.
#[derive(Debug, Clone)]
pub struct MechanicalSystem {
    symbols: SymbolTable,
    mass: Vec<Vec<Expr>>,
    force: Vec<Expr>,
    constraints: Vec<Expr>,
    jac: Vec<Vec<Expr>>,
    p0: Vec<f64>,
    v0: Vec<f64>,
}

impl MechanicalSystem {
    pub fn new(
        symbols: SymbolTable,
        mass: Vec<Vec<Expr>>,
        force: Vec<Expr>,
        constraints: Vec<Expr>,
        p0: Vec<f64>,
        v0: Vec<f64>,
    ) -> Result<MechanicalSystem, SystemError> {
        let n_p = symbols.n_coordinates();
        let shape = |what, expected, got| {
            if expected != got {
                Err(SystemError::Shape {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        shape("mass matrix rows", n_p, mass.len())?;
        for row in &mass {
            shape("mass matrix columns", n_p, row.len())?;
        }
        shape("force vector", n_p, force.len())?;
        shape("initial positions", n_p, p0.len())?;
        shape("initial velocities", n_p, v0.len())?;
        let n_lambda = constraints.len();
        if n_lambda > n_p {
            return Err(SystemError::TooManyConstraints { n_lambda, n_p });
        }

        let position_only: Vec<(&'static str, &Expr)> = mass
            .iter()
            .flatten()
            .map(|e| ("mass matrix entry", e))
            .chain(constraints.iter().map(|e| ("constraint", e)))
            .collect();
        for (context, e) in position_only {
            for name in e.free_symbols() {
                if !symbols.is_declared(&name) {
                    return Err(SystemError::UndeclaredSymbol { context, name });
                }
                if symbols.velocities().contains(&name) {
                    return Err(SystemError::ForbiddenSymbol {
                        context,
                        role: "velocity",
                        name,
                    });
                }
                if name == TIME_SYMBOL {
                    return Err(SystemError::ForbiddenSymbol {
                        context,
                        role: "time symbol",
                        name,
                    });
                }
            }
        }
        for e in &force {
            for name in e.free_symbols() {
                if !symbols.is_declared(&name) {
                    return Err(SystemError::UndeclaredSymbol {
                        context: "force entry",
                        name,
                    });
                }
            }
        }

        let coord_refs: Vec<&str> = symbols.coordinates().iter().map(String::as_str).collect();
        let jac = jacobian(&constraints, &coord_refs);

        Ok(MechanicalSystem {
            symbols,
            mass,
            force,
            constraints,
            jac,
            p0,
            v0,
        })
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub fn n_coordinates(&self) -> usize {
        self.symbols.n_coordinates()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn mass_exprs(&self) -> &[Vec<Expr>] {
        &self.mass
    }

    pub fn force_exprs(&self) -> &[Expr] {
        &self.force
    }

    pub fn constraint_exprs(&self) -> &[Expr] {
        &self.constraints
    }

    /// Rows of ∂g/∂p, one per constraint.
    pub fn jacobian_exprs(&self) -> &[Vec<Expr>] {
        &self.jac
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn v0(&self) -> &[f64] {
        &self.v0
    }

    fn position_bindings(&self, p: &[f64]) -> HashMap<String, f64> {
        let mut b: HashMap<String, f64> = self
            .symbols
            .parameters()
            .iter()
            .map(|(n, v)| (n.clone(), *v))
            .collect();
        for (name, value) in self.symbols.coordinates().iter().zip(p) {
            b.insert(name.clone(), *value);
        }
        b
    }

    /// Full bindings of a state, for pointwise evaluation of the force.
    pub fn state_bindings(&self, p: &[f64], v: &[f64], t: f64) -> HashMap<String, f64> {
        let mut b = self.position_bindings(p);
        for (name, value) in self.symbols.velocities().iter().zip(v) {
            b.insert(name.clone(), *value);
        }
        b.insert(TIME_SYMBOL.to_string(), t);
        b
    }

    pub fn mass_at(&self, p: &[f64]) -> Result<DenseMatrix, SolveError> {
        let b = self.position_bindings(p);
        let n = self.n_coordinates();
        let mut data = Vec::with_capacity(n * n);
        for row in &self.mass {
            for e in row {
                data.push(evaluate(e, &b)?);
            }
        }
        DenseMatrix::new(n, n, data).map_err(|_| SolveError::NonFinite {
            context: "mass matrix",
        })
    }

    pub fn jacobian_at(&self, p: &[f64]) -> Result<DenseMatrix, SolveError> {
        let b = self.position_bindings(p);
        let mut data = Vec::with_capacity(self.n_constraints() * self.n_coordinates());
        for row in &self.jac {
            for e in row {
                data.push(evaluate(e, &b)?);
            }
        }
        DenseMatrix::new(self.n_constraints(), self.n_coordinates(), data).map_err(|_| {
            SolveError::NonFinite {
                context: "constraint Jacobian",
            }
        })
    }

    pub fn constraints_at(&self, p: &[f64]) -> Result<Vec<f64>, SolveError> {
        let b = self.position_bindings(p);
        self.constraints
            .iter()
            .map(|e| evaluate(e, &b).map_err(SolveError::from))
            .collect()
    }

    /// Stage-length heuristic: keep ‖v₀‖∞ · h at or below 1/2, capped at
    /// unit stages. A proxy for the (unknown) convergence radius, not a
    /// guarantee.
    pub fn suggested_stage_length(&self) -> f64 {
        let speed = self.v0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if speed <= 0.5 {
            1.0
        } else {
            0.5 / speed
        }
    }

    /// Structural checks at the initial position: constraint rank, mass
    /// definiteness on the constraint kernel, saddle nonsingularity.
    pub fn structural_diagnostics(&self) -> Result<DiagnosticsReport, SolveError> {
        let m0 = self.mass_at(&self.p0)?;
        let g0 = self.jacobian_at(&self.p0)?;
        Ok(diagnostics(&m0, &g0))
    }
}

/// Consistency of initial data with the position and velocity constraint
/// levels: ‖g(p₀)‖∞ and ‖G(p₀)v₀‖∞ against a tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub g_residual: f64,
    pub gv_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "position constraint residual |g(p0)|   = {:.6e}\n\
             velocity constraint residual |G(p0)v0| = {:.6e}\n\
             tolerance {:.1e}: {}",
            self.g_residual,
            self.gv_residual,
            self.tol,
            if self.pass {
                "consistent"
            } else {
                "INCONSISTENT"
            }
        )
    }
}

fn inf_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn consistency_at(
    sys: &MechanicalSystem,
    p: &[f64],
    v: &[f64],
    tol: f64,
) -> Result<ConsistencyReport, SolveError> {
    let g = sys.constraints_at(p)?;
    let gmat = sys.jacobian_at(p)?;
    let g_residual = inf_norm(&g);
    let gv_residual = inf_norm(&gmat.matvec(v));
    let pass = g_residual <= tol && gv_residual <= tol;
    Ok(ConsistencyReport {
        g_residual,
        gv_residual,
        tol,
        pass,
    })
}

/// Checks g(p₀) = 0 and G(p₀)v₀ = 0 against `tol`. Report-only; the
/// solver repeats the check with [`CONSISTENCY_TOL`] and refuses on
/// failure.
pub fn check_consistency(
    sys: &MechanicalSystem,
    tol: f64,
) -> Result<ConsistencyReport, SolveError> {
    consistency_at(sys, &sys.p0, &sys.v0, tol)
}

/// The right-hand sides of one order's block system, kept for
/// verification: order n solves M₀p⁽ⁿ⁾ + G₀ᵀL⁻²λ⁽ⁿ⁻²⁾ = r, G₀p⁽ⁿ⁾ = s.
#[derive(Debug, Clone)]
pub struct OrderRecord {
    pub n: usize,
    pub r: Vec<TimePoly>,
    pub s: Vec<TimePoly>,
}

/// Sampled state: positions, velocities, multipliers.
pub type StateSample = (Vec<f64>, Vec<f64>, Vec<f64>);

/// A truncated component series around one expansion point: the histories
/// and their sums. Positions carry orders 0..=n₀, velocities 0..=n₀−1,
/// multipliers 0..=n₀−2; each track is summed in full, so every component
/// ever computed participates in its series.
#[derive(Debug, Clone)]
pub struct SeriesSolution {
    origin: f64,
    order: usize,
    history: ComponentHistory,
    p_sum: Vec<TimePoly>,
    v_sum: Vec<TimePoly>,
    lambda_sum: Vec<TimePoly>,
    records: Vec<OrderRecord>,
}

impl SeriesSolution {
    /// Global time of the expansion point; series evaluate in local time.
    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn history(&self) -> &ComponentHistory {
        &self.history
    }

    pub fn order_records(&self) -> &[OrderRecord] {
        &self.records
    }

    pub fn position_series(&self) -> &[TimePoly] {
        &self.p_sum
    }

    pub fn velocity_series(&self) -> &[TimePoly] {
        &self.v_sum
    }

    pub fn multiplier_series(&self) -> &[TimePoly] {
        &self.lambda_sum
    }

    /// State at local time τ (time past the expansion point): positions,
    /// velocities, multipliers.
    pub fn eval(&self, tau: f64) -> StateSample {
        let at = |polys: &[TimePoly]| polys.iter().map(|p| p.eval(tau)).collect();
        (at(&self.p_sum), at(&self.v_sum), at(&self.lambda_sum))
    }
}

fn sum_track(track: &AdomianSequence<Vec<TimePoly>>, width: usize, cap: usize) -> Vec<TimePoly> {
    let mut sums = vec![TimePoly::zero(cap); width];
    for comps in track.iter() {
        for (sum, c) in sums.iter_mut().zip(comps) {
            *sum = &*sum + c;
        }
    }
    sums
}

fn numeric_matvec_polys(m: &DenseMatrix, x: &[TimePoly], cap: usize) -> Vec<TimePoly> {
    assert_eq!(m.cols(), x.len(), "dimension mismatch");
    (0..m.rows())
        .map(|i| {
            let mut acc = TimePoly::zero(cap);
            for (j, xj) in x.iter().enumerate() {
                let a = m.get(i, j);
                if a != 0.0 {
                    acc = &acc + &xj.scale(a);
                }
            }
            acc
        })
        .collect()
}

/// Runs the order-by-order recursion to the given order from the system's
/// initial data. Refuses inconsistent initial data and structurally
/// unsound systems (rank-deficient constraints, singular mass matrix,
/// indefiniteness on the constraint kernel) with distinct errors.
pub fn solve_series(sys: &MechanicalSystem, order: usize) -> Result<SeriesSolution, SolveError> {
    solve_series_from(sys, order, 0.0, &sys.p0.clone(), &sys.v0.clone())
}

fn solve_series_from(
    sys: &MechanicalSystem,
    order: usize,
    origin: f64,
    p0: &[f64],
    v0: &[f64],
) -> Result<SeriesSolution, SolveError> {
    if !(3..=MAX_CAP).contains(&order) {
        return Err(SolveError::InvalidOrder {
            order,
            max_order: MAX_CAP,
        });
    }
    let consistency = consistency_at(sys, p0, v0, CONSISTENCY_TOL)?;
    if !consistency.pass {
        return Err(SolveError::InconsistentInitialData {
            g_residual: consistency.g_residual,
            gv_residual: consistency.gv_residual,
            tol: consistency.tol,
        });
    }

    let m0 = sys.mass_at(p0)?;
    let g0 = sys.jacobian_at(p0)?;
    let diag = diagnostics(&m0, &g0);
    if !diag.full_rank {
        return Err(SolveError::RankDeficientConstraints {
            rank: diag.g_rank,
            needed: diag.n_lambda,
        });
    }
    if !diag.mass_invertible {
        return Err(SolveError::SingularMassMatrix {
            rcond: diag.mass_rcond,
        });
    }
    if !diag.definite_on_kernel {
        return Err(SolveError::IndefiniteOnKernel {
            min_eigenvalue: diag.kernel_min_eigenvalue.unwrap_or(f64::NAN),
        });
    }
    let fm = lu_factor(&m0).map_err(|_| SolveError::SingularMassMatrix {
        rcond: diag.mass_rcond,
    })?;
    let (_, fs) = schur_complement(&fm, &g0).map_err(map_constraint_error)?;
    let g0t = g0.transpose();

    let cap = order;
    let n_p = sys.n_coordinates();
    let params: Vec<(String, f64)> = sys.symbols.parameters().to_vec();
    let mut hist = ComponentHistory::new(
        sys.symbols.coordinates().to_vec(),
        sys.symbols.velocities().to_vec(),
        cap,
    )
    .with_constants(params)
    .with_origin(origin);

    hist.push_position(p0.iter().map(|&c| TimePoly::constant(c, cap)).collect());
    hist.push_velocity(v0.iter().map(|&c| TimePoly::constant(c, cap)).collect());
    hist.push_position(v0.iter().map(|&c| TimePoly::monomial(1, c, cap)).collect());

    // Gᵀ as an expression matrix (n_p × n_λ).
    let gt_exprs: Vec<Vec<Expr>> = (0..n_p)
        .map(|i| sys.jac.iter().map(|row| row[i].clone()).collect())
        .collect();

    let mut mseq: AdomianSequence<PolyMatrix> = AdomianSequence::new();
    let mut gtseq: AdomianSequence<PolyMatrix> = AdomianSequence::new();
    let mut fseq: AdomianSequence<Vec<TimePoly>> = AdomianSequence::new();
    // Right-hand sides f⁽ʲ⁾ − (Gᵀλ)⁽ʲ⁾ of the acceleration solves, and the
    // accelerations z⁽ʲ⁾ themselves, grown one order per step.
    let mut zrhs: AdomianSequence<Vec<TimePoly>> = AdomianSequence::new();
    let mut zs: Vec<Vec<TimePoly>> = Vec::new();
    let mut records = Vec::new();

    for n in 2..=order {
        let k = n - 2;
        mseq.push(adomian_of_matrix(&sys.mass, &hist, k)?);
        gtseq.push(adomian_of_matrix(&gt_exprs, &hist, k)?);
        fseq.push(adomian_of_vec(&sys.force, &hist, k)?);

        // Acceleration component z⁽ᵏ⁻¹⁾ becomes available now: it needs
        // λ⁽ᵏ⁻¹⁾, which the previous step produced.
        if k >= 1 {
            let j = k - 1;
            let gtl = adomian_matrix_product(&gtseq, hist.multipliers(), j);
            let mut rhs = fseq.get(j).clone();
            for (dst, sub) in rhs.iter_mut().zip(gtl) {
                *dst = &*dst - &sub;
            }
            zrhs.push(rhs);
            let z = adomian_matrix_inverse_apply(&mseq, &zrhs, j, &fm, &zs);
            zs.push(z);
        }

        let mut integrand = fseq.get(k).clone();
        for (l, zl) in zs.iter().enumerate() {
            let gterm = gtseq.get(k - l).matvec(hist.multipliers().get(l));
            let mterm = mseq.get(k - l).matvec(zl);
            for ((dst, gt), mt) in integrand.iter_mut().zip(gterm).zip(mterm) {
                *dst = &(&*dst - &gt) - &mt;
            }
        }
        let r: Vec<TimePoly> = integrand
            .iter()
            .map(|p| p.integrate_twice())
            .collect::<Result<_, _>>()?;

        // S is the order-n constraint with the unknown top component held
        // at zero; the history has no order-n position yet, so the
        // composition reads exactly that.
        let s: Vec<TimePoly> = sys
            .constraints
            .iter()
            .map(|g| Ok(-&adomian_of(g, &hist, n)?))
            .collect::<Result<_, SeriesError>>()?;

        let w = fm.solve_polys(&r);
        let gw = numeric_matvec_polys(&g0, &w, cap);
        let rhs_y: Vec<TimePoly> = gw.iter().zip(&s).map(|(a, b)| a - b).collect();
        let y = fs.solve_polys(&rhs_y);

        let lam: Vec<TimePoly> = y
            .iter()
            .map(|p| p.differentiate().differentiate())
            .collect();
        let gty = numeric_matvec_polys(&g0t, &y, cap);
        let p_rhs: Vec<TimePoly> = r.iter().zip(&gty).map(|(a, b)| a - b).collect();
        let pn = fm.solve_polys(&p_rhs);
        let vn: Vec<TimePoly> = pn.iter().map(|p| p.differentiate()).collect();

        hist.push_multiplier(lam);
        hist.push_position(pn);
        hist.push_velocity(vn);
        records.push(OrderRecord { n, r, s });
    }

    let n_lambda = sys.n_constraints();
    let p_sum = sum_track(hist.positions(), n_p, cap);
    let v_sum = sum_track(hist.velocities(), n_p, cap);
    let lambda_sum = sum_track(hist.multipliers(), n_lambda, cap);

    Ok(SeriesSolution {
        origin,
        order,
        history: hist,
        p_sum,
        v_sum,
        lambda_sum,
        records,
    })
}

/// Consistency residuals around one stage handover: before and after the
/// projection of the handed-over state onto the constraint manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartDiagnostics {
    pub pre_g: f64,
    pub pre_gv: f64,
    pub post_g: f64,
    pub post_gv: f64,
    pub iterations: usize,
}

/// One stage of a multistage solve: its global time interval and the
/// local series. The first stage has no restart diagnostics.
#[derive(Debug, Clone)]
pub struct Stage {
    pub t_start: f64,
    pub t_end: f64,
    pub solution: SeriesSolution,
    pub restart: Option<RestartDiagnostics>,
}

/// Abutting stages covering [0, t_end].
#[derive(Debug, Clone)]
pub struct StagedSolution {
    stages: Vec<Stage>,
}

impl StagedSolution {
    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn t_end(&self) -> f64 {
        self.stages.last().map(|s| s.t_end).unwrap_or(0.0)
    }

    /// The stage containing global time t, and t in that stage's local
    /// clock. Times beyond the covered interval clamp to the nearest
    /// stage.
    pub fn locate(&self, t: f64) -> (&Stage, f64) {
        let idx = self
            .stages
            .partition_point(|s| s.t_end < t)
            .min(self.stages.len() - 1);
        let stage = &self.stages[idx];
        (stage, t - stage.t_start)
    }

    /// State at global time t: positions, velocities, multipliers.
    pub fn eval(&self, t: f64) -> StateSample {
        let (stage, tau) = self.locate(t);
        stage.solution.eval(tau)
    }
}

// One Gauss-Newton step of min ‖p − p̂‖₂ s.t. g(p) = 0: with d the update
// and μ the multiplier, solve G d = −g, d = (p̂ − p) − Gᵀμ through the
// normal equations (G Gᵀ) μ = G(p̂ − p) + g.
fn project_position(
    sys: &MechanicalSystem,
    guess: &[f64],
    stage: usize,
) -> Result<(Vec<f64>, usize), SolveError> {
    let mut p = guess.to_vec();
    for iter in 0..=PROJECTION_MAX_ITER {
        let g = sys.constraints_at(&p)?;
        let residual = inf_norm(&g);
        if residual <= PROJECTION_TOL {
            return Ok((p, iter));
        }
        if iter == PROJECTION_MAX_ITER {
            return Err(SolveError::ProjectionStalled {
                stage,
                residual,
                iterations: iter,
            });
        }
        let gmat = sys.jacobian_at(&p)?;
        let identity = lu_factor(&DenseMatrix::identity(p.len())).expect("identity is regular");
        let (_, fs) = schur_complement(&identity, &gmat).map_err(map_constraint_error)?;
        let to_guess: Vec<f64> = guess.iter().zip(&p).map(|(a, b)| a - b).collect();
        let mut mu_rhs = gmat.matvec(&to_guess);
        for (dst, gi) in mu_rhs.iter_mut().zip(&g) {
            *dst += gi;
        }
        let mu = fs.solve_vec(&mu_rhs);
        let gt_mu = gmat.transpose().matvec(&mu);
        for ((pi, ti), gi) in p.iter_mut().zip(&to_guess).zip(&gt_mu) {
            *pi += ti - gi;
        }
    }
    unreachable!("loop returns or errors within the iteration bound");
}

// M-orthogonal projection of the velocity onto Ker G at the projected
// position: v = v̂ − M⁻¹Gᵀ(G M⁻¹ Gᵀ)⁻¹ G v̂.
fn project_velocity(
    sys: &MechanicalSystem,
    p: &[f64],
    guess: &[f64],
) -> Result<Vec<f64>, SolveError> {
    let m = sys.mass_at(p)?;
    let gmat = sys.jacobian_at(p)?;
    let fm = lu_factor(&m).map_err(|_| SolveError::SingularMassMatrix { rcond: 0.0 })?;
    let (_, fs) = schur_complement(&fm, &gmat).map_err(map_constraint_error)?;
    let y = fs.solve_vec(&gmat.matvec(guess));
    let correction = fm.solve_vec(&gmat.transpose().matvec(&y));
    Ok(guess.iter().zip(&correction).map(|(v, c)| v - c).collect())
}

/// Covers [0, t_end] with ceil(t_end / h) abutting stages, each a series
/// expansion of the given order. Every handover re-projects the previous
/// stage's endpoint state onto the constraint manifold (positions by
/// constrained least squares, velocities M-orthogonally onto Ker G) and
/// records the residuals before and after, so drift cannot accumulate
/// across stages. A single stage is exactly [`solve_series`].
pub fn multistage_solve(
    sys: &MechanicalSystem,
    t_end: f64,
    h: f64,
    order: usize,
) -> Result<StagedSolution, SolveError> {
    assert!(t_end > 0.0, "t_end must be positive");
    assert!(h > 0.0, "stage length must be positive");
    let n_stages = (t_end / h).ceil().max(1.0) as usize;
    let mut stages: Vec<Stage> = Vec::with_capacity(n_stages);
    let mut p = sys.p0.clone();
    let mut v = sys.v0.clone();

    for i in 0..n_stages {
        let t_start = i as f64 * h;
        let t_stop = ((i + 1) as f64 * h).min(t_end);
        let restart = if i == 0 {
            None
        } else {
            let pre = consistency_at(sys, &p, &v, CONSISTENCY_TOL)?;
            let (p_proj, iterations) = project_position(sys, &p, i + 1)?;
            let v_proj = project_velocity(sys, &p_proj, &v)?;
            let post = consistency_at(sys, &p_proj, &v_proj, CONSISTENCY_TOL)?;
            p = p_proj;
            v = v_proj;
            Some(RestartDiagnostics {
                pre_g: pre.g_residual,
                pre_gv: pre.gv_residual,
                post_g: post.g_residual,
                post_gv: post.gv_residual,
                iterations,
            })
        };
        let solution = solve_series_from(sys, order, t_start, &p, &v)?;
        let (p_end, v_end, _) = solution.eval(t_stop - t_start);
        stages.push(Stage {
            t_start,
            t_end: t_stop,
            solution,
            restart,
        });
        p = p_end;
        v = v_end;
    }

    Ok(StagedSolution { stages })
}
