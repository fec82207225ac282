//! Adomian polynomial sequences for the solution components of a
//! constrained mechanical system.
//!
//! The decomposition writes each unknown as a sum of components,
//!
//! ```text
//!   p = Σ p⁽ⁿ⁾,   v = Σ v⁽ⁿ⁾,   λ = Σ λ⁽ⁿ⁾,
//! ```
//!
//! and every nonlinear expression N appearing in the equations inherits an
//! expansion N = Σ N⁽ⁿ⁾ in which the order-n polynomial N⁽ⁿ⁾ depends on
//! components of order at most n. [`ComponentHistory`] stores the
//! components produced so far; [`adomian_of`] extracts N⁽ⁿ⁾ by running the
//! graded composition of [`crate::series`] over them.
//!
//! Matrix-valued expansions get two extra operations. For a matrix A and
//! vector v with sequences A⁽ˡ⁾, v⁽ˡ⁾, the product w = Av expands as the
//! convolution w⁽ᵏ⁾ = Σ_{l≤k} A⁽ˡ⁾v⁽ᵏ⁻ˡ⁾, and the same identity read
//! backwards solves A z = v order by order against the constant matrix
//! A⁽⁰⁾:
//!
//! ```text
//!   A⁽⁰⁾ z⁽ᵏ⁾ = v⁽ᵏ⁾ − Σ_{l<k} A⁽ᵏ⁻ˡ⁾ z⁽ˡ⁾.
//! ```
//!
//! That back-substitution is what lets the solver apply the inverse mass
//! matrix without ever expanding M⁻¹(p) symbolically.
//!
//! [`adomian_via_recursion`] is an independent route to the same
//! polynomials, kept as a test oracle: the classical derivative recursion
//!
//! ```text
//!   N⁽ⁿ⁾ = (1/n) Σ_k Σ_{i=0}^{n−1} (i+1) u_k⁽ⁱ⁺¹⁾ ∂N⁽ⁿ⁻¹⁻ⁱ⁾/∂u_k⁽⁰⁾
//! ```
//!
//! built symbolically with the expression module's own differentiation.

use std::collections::HashMap;

use crate::expr::{differentiate, fold_add, fold_div, fold_mul, substitute, Expr, TIME_SYMBOL};
use crate::linalg::Factorization;
use crate::series::{compose, GradedSeries, SeriesError, TimePoly};

/// Solution components accumulated order by order: positions, velocities,
/// and multipliers as separate tracks. Entry `n` of a track is the order-n
/// component of that unknown, a polynomial of degree at most n.
#[derive(Debug, Clone)]
pub struct ComponentHistory {
    coordinate_names: Vec<String>,
    velocity_names: Vec<String>,
    constants: Vec<(String, f64)>,
    origin: f64,
    positions: AdomianSequence<Vec<TimePoly>>,
    velocities: AdomianSequence<Vec<TimePoly>>,
    multipliers: AdomianSequence<Vec<TimePoly>>,
    cap: usize,
}

impl ComponentHistory {
    pub fn new(
        coordinate_names: Vec<String>,
        velocity_names: Vec<String>,
        cap: usize,
    ) -> ComponentHistory {
        assert_eq!(
            coordinate_names.len(),
            velocity_names.len(),
            "coordinate and velocity lists must pair up"
        );
        ComponentHistory {
            coordinate_names,
            velocity_names,
            constants: Vec::new(),
            origin: 0.0,
            positions: AdomianSequence::new(),
            velocities: AdomianSequence::new(),
            multipliers: AdomianSequence::new(),
            cap,
        }
    }

    /// Fixed parameter values that compositions see at grade 0.
    pub fn with_constants(mut self, constants: Vec<(String, f64)>) -> ComponentHistory {
        self.constants = constants;
        self
    }

    /// Global time at the expansion point. Compositions bind the time
    /// symbol to origin + t, with the constant part at grade 0 and the
    /// linear part at grade 1, so explicitly time-dependent expressions
    /// stay consistent across restarted expansions.
    pub fn with_origin(mut self, origin: f64) -> ComponentHistory {
        self.origin = origin;
        self
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn coordinate_names(&self) -> &[String] {
        &self.coordinate_names
    }

    pub fn velocity_names(&self) -> &[String] {
        &self.velocity_names
    }

    /// Appends the next position component, one polynomial per coordinate.
    /// Components vanish at t = 0 beyond order 0, and to first order
    /// beyond order 1: both integrations start from rest, so the initial
    /// data lives entirely in orders 0 and 1.
    pub fn push_position(&mut self, comps: Vec<TimePoly>) {
        let order = self.positions.len();
        assert_eq!(comps.len(), self.coordinate_names.len());
        for c in &comps {
            assert_eq!(c.cap(), self.cap, "degree caps must match");
            assert!(
                c.degree().is_none_or(|d| d <= order),
                "order-{order} position component has degree beyond {order}"
            );
            if order >= 1 {
                assert_eq!(
                    c.coeff(0),
                    0.0,
                    "position components vanish at 0 beyond order 0"
                );
            }
            if order >= 2 {
                assert_eq!(
                    c.coeff(1),
                    0.0,
                    "position slopes vanish at 0 beyond order 1"
                );
            }
        }
        self.positions.push(comps);
    }

    pub fn push_velocity(&mut self, comps: Vec<TimePoly>) {
        let order = self.velocities.len();
        assert_eq!(comps.len(), self.velocity_names.len());
        for c in &comps {
            assert_eq!(c.cap(), self.cap, "degree caps must match");
            assert!(
                c.degree().is_none_or(|d| d <= order),
                "order-{order} velocity component has degree beyond {order}"
            );
        }
        self.velocities.push(comps);
    }

    pub fn push_multiplier(&mut self, comps: Vec<TimePoly>) {
        let order = self.multipliers.len();
        if let Some(first) = self.multipliers.items.first() {
            assert_eq!(comps.len(), first.len(), "multiplier width must not change");
        }
        for c in &comps {
            assert_eq!(c.cap(), self.cap, "degree caps must match");
            assert!(
                c.degree().is_none_or(|d| d <= order),
                "order-{order} multiplier component has degree beyond {order}"
            );
        }
        self.multipliers.push(comps);
    }

    pub fn positions(&self) -> &AdomianSequence<Vec<TimePoly>> {
        &self.positions
    }

    pub fn velocities(&self) -> &AdomianSequence<Vec<TimePoly>> {
        &self.velocities
    }

    pub fn multipliers(&self) -> &AdomianSequence<Vec<TimePoly>> {
        &self.multipliers
    }

    /// The history as a graded binding for composition at grade `k`:
    /// coordinates and velocities carry their components as grades (orders
    /// past the stored history read as zero), parameters sit at grade 0.
    pub fn as_graded(&self, k: usize) -> GradedSeries {
        let mut args = GradedSeries::new(k, self.cap);
        for (i, name) in self.coordinate_names.iter().enumerate() {
            let grades: Vec<TimePoly> = self
                .positions
                .items
                .iter()
                .take(k + 1)
                .map(|comps| comps[i].clone())
                .collect();
            args.insert(name.clone(), grades);
        }
        for (i, name) in self.velocity_names.iter().enumerate() {
            let grades: Vec<TimePoly> = self
                .velocities
                .items
                .iter()
                .take(k + 1)
                .map(|comps| comps[i].clone())
                .collect();
            args.insert(name.clone(), grades);
        }
        for (name, value) in &self.constants {
            args.insert_constant(name.clone(), *value);
        }
        args.insert(
            TIME_SYMBOL,
            vec![
                TimePoly::constant(self.origin, self.cap),
                TimePoly::t(self.cap),
            ],
        );
        args
    }
}

/// An expansion indexed by order: entry n holds the order-n Adomian
/// polynomial of some expression (scalar, vector, or matrix valued).
#[derive(Debug, Clone, Default)]
pub struct AdomianSequence<T> {
    items: Vec<T>,
}

impl<T> AdomianSequence<T> {
    pub fn new() -> AdomianSequence<T> {
        AdomianSequence { items: Vec::new() }
    }

    pub fn push(&mut self, item: T) {
        self.items.push(item);
    }

    /// The order-n entry; the sequence must extend that far.
    pub fn get(&self, n: usize) -> &T {
        &self.items[n]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.items.iter()
    }
}

impl<T> FromIterator<T> for AdomianSequence<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> AdomianSequence<T> {
        AdomianSequence {
            items: iter.into_iter().collect(),
        }
    }
}

/// Dense matrix with polynomial entries, row major. The degree cap is
/// carried explicitly so that degenerate shapes (a constraint-free system
/// has 0-column Jacobian transposes) still produce polynomials of the
/// right cap.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    cap: usize,
    entries: Vec<TimePoly>,
}

impl PolyMatrix {
    pub fn new(rows: usize, cols: usize, cap: usize, entries: Vec<TimePoly>) -> PolyMatrix {
        assert_eq!(entries.len(), rows * cols, "entry count must match shape");
        for e in &entries {
            assert_eq!(e.cap(), cap, "degree caps must match");
        }
        PolyMatrix {
            rows,
            cols,
            cap,
            entries,
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &TimePoly {
        &self.entries[i * self.cols + j]
    }

    pub fn matvec(&self, x: &[TimePoly]) -> Vec<TimePoly> {
        assert_eq!(x.len(), self.cols, "dimension mismatch");
        (0..self.rows)
            .map(|i| {
                let mut acc = TimePoly::zero(self.cap);
                for (j, xj) in x.iter().enumerate() {
                    acc = &acc + &(self.get(i, j) * xj);
                }
                acc
            })
            .collect()
    }
}

/// The order-n Adomian polynomial of `e` over the given history.
pub fn adomian_of(e: &Expr, hist: &ComponentHistory, n: usize) -> Result<TimePoly, SeriesError> {
    let args = hist.as_graded(n);
    let mut grades = compose(e, &args, n)?;
    Ok(grades.swap_remove(n))
}

/// Componentwise [`adomian_of`] over a vector of expressions.
pub fn adomian_of_vec(
    es: &[Expr],
    hist: &ComponentHistory,
    n: usize,
) -> Result<Vec<TimePoly>, SeriesError> {
    let args = hist.as_graded(n);
    es.iter()
        .map(|e| Ok(compose(e, &args, n)?.swap_remove(n)))
        .collect()
}

/// Entrywise [`adomian_of`] over a matrix of expressions.
pub fn adomian_of_matrix(
    rows: &[Vec<Expr>],
    hist: &ComponentHistory,
    n: usize,
) -> Result<PolyMatrix, SeriesError> {
    let args = hist.as_graded(n);
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    let mut entries = Vec::with_capacity(r * c);
    for row in rows {
        assert_eq!(row.len(), c, "ragged expression matrix");
        for e in row {
            entries.push(compose(e, &args, n)?.swap_remove(n));
        }
    }
    Ok(PolyMatrix::new(r, c, hist.cap(), entries))
}

/// Order-k component of the matrix-vector product A·v, the convolution
/// Σ_{l=0}^{k} A⁽ˡ⁾ v⁽ᵏ⁻ˡ⁾. Both sequences must extend through order k.
/// Terms are added in increasing l for run-to-run determinism.
pub fn adomian_matrix_product(
    a: &AdomianSequence<PolyMatrix>,
    v: &AdomianSequence<Vec<TimePoly>>,
    k: usize,
) -> Vec<TimePoly> {
    let rows = a.get(0).rows();
    let mut acc = vec![TimePoly::zero(a.get(0).cap()); rows];
    for l in 0..=k {
        let term = a.get(l).matvec(v.get(k - l));
        for (dst, t) in acc.iter_mut().zip(term) {
            *dst = &*dst + &t;
        }
    }
    acc
}

/// Order-k component z⁽ᵏ⁾ of the solution of A·z = v, by back-substituting
/// the product convolution against the factored constant matrix A⁽⁰⁾:
///
/// ```text
///   A⁽⁰⁾ z⁽ᵏ⁾ = v⁽ᵏ⁾ − Σ_{l=0}^{k−1} A⁽ᵏ⁻ˡ⁾ z⁽ˡ⁾.
/// ```
///
/// `z_prev` holds exactly the lower-order solutions z⁽⁰⁾, …, z⁽ᵏ⁻¹⁾.
pub fn adomian_matrix_inverse_apply(
    a: &AdomianSequence<PolyMatrix>,
    v: &AdomianSequence<Vec<TimePoly>>,
    k: usize,
    a0: &Factorization,
    z_prev: &[Vec<TimePoly>],
) -> Vec<TimePoly> {
    assert_eq!(z_prev.len(), k, "need the solutions of all lower orders");
    let mut rhs = v.get(k).clone();
    for (l, z) in z_prev.iter().enumerate() {
        let term = a.get(k - l).matvec(z);
        for (dst, t) in rhs.iter_mut().zip(term) {
            *dst = &*dst - &t;
        }
    }
    a0.solve_polys(&rhs)
}

/// Name of the order-i component of `var` when components are represented
/// as free symbols (for the symbolic recursion below).
pub fn component_symbol(var: &str, order: usize) -> String {
    format!("{var}__{order}")
}

/// Order-n Adomian polynomial of `e` as a symbolic expression in the
/// component symbols `var__0`, `var__1`, …, built by the derivative
/// recursion. Independent of the graded composition, so it serves as an
/// oracle for [`adomian_of`]; intended for small n only (the expressions
/// grow quickly).
pub fn adomian_via_recursion(e: &Expr, vars: &[&str], n: usize) -> Expr {
    let heads: HashMap<String, Expr> = vars
        .iter()
        .map(|v| ((*v).to_string(), Expr::Var(component_symbol(v, 0))))
        .collect();
    let mut polys = vec![substitute(e, &heads)];
    for m in 1..=n {
        let mut sum: Option<Expr> = None;
        for v in vars {
            let head = component_symbol(v, 0);
            for i in 0..m {
                let partial = differentiate(&polys[m - 1 - i], &head);
                let term = fold_mul(
                    fold_mul(
                        Expr::Const((i + 1) as f64),
                        Expr::Var(component_symbol(v, i + 1)),
                    ),
                    partial,
                );
                sum = Some(match sum.take() {
                    None => term,
                    Some(acc) => fold_add(acc, term),
                });
            }
        }
        polys.push(fold_div(
            sum.unwrap_or(Expr::Const(0.0)),
            Expr::Const(m as f64),
        ));
    }
    polys.swap_remove(n)
}
