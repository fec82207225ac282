//! Truncated polynomials in time and graded-series composition.
//!
//! [`TimePoly`] is a univariate polynomial in `t` whose arithmetic silently
//! truncates at a degree cap shared by the whole solve. Internally it
//! stores the scaled coefficients `b[k] = k!·c[k]` (the derivative values
//! at 0), so integration (the `L⁻¹` operator), double integration (`L⁻²`),
//! and the derivative (`L`) are pure index shifts: `L∘L⁻¹ = id` holds bit
//! for bit, which no per-coefficient division could guarantee. The public
//! surface speaks ordinary power-basis coefficients; products become
//! binomial-weighted convolutions internally.
//!
//! [`GradedSeries`] and [`compose`] implement the series side of the
//! Adomian construction: each system variable is expanded as a sum of
//! graded components, and composing an expression through that expansion
//! yields, grade by grade, its Adomian polynomials (grade `n` of the result
//! depends only on components of grade `<= n`). Elementary functions are
//! composed by Taylor expansion about the constant grade-0 head `c` of the
//! argument, `F(c + h) = Σ F⁽ᵐ⁾(c)/m! · hᵐ`, with all products done in
//! graded arithmetic. The same engine also performs plain truncated
//! power-series composition (see [`compose_poly`]) by grading each
//! polynomial by degree.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::expr::{Expr, Func};

/// Coefficients smaller than this count as zero in degree reporting and
/// display. Arithmetic never thresholds.
const DEGREE_ZERO_TOL: f64 = 1e-14;

/// Largest supported degree cap. Binomial weights stay exactly
/// representable up to here; solves never get close.
pub(crate) const MAX_CAP: usize = 56;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("integration would reach degree {needed}, beyond the cap {cap}")]
    CapOverflow { needed: usize, cap: usize },
    #[error("grade-0 entry feeding {context} must be a constant polynomial")]
    NonConstantHead { context: &'static str },
    #[error("division by a series with zero grade-0 head")]
    ZeroDivisorHead,
    #[error("{function} of a series with non-positive grade-0 head {head}")]
    NonPositiveHead { function: &'static str, head: f64 },
    #[error("symbol `{name}` has no graded binding")]
    UnboundSymbol { name: String },
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

// Pascal triangle rows 0..=n_max, built by addition so every entry is an
// exact integer (guaranteed below 2^53 by MAX_CAP).
fn binomial_rows(n_max: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut row = vec![1.0; n + 1];
        for i in 1..n {
            row[i] = rows[n - 1][i - 1] + rows[n - 1][i];
        }
        rows.push(row);
    }
    rows
}

/// A real polynomial in `t`, truncated at a global degree cap.
///
/// Viewed through [`coeff`](TimePoly::coeff)/[`coeffs`](TimePoly::coeffs),
/// entry `k` is the coefficient of `t^k`. Trailing zeros may be stored;
/// equality is coefficientwise with missing entries read as zero.
#[derive(Debug, Clone)]
pub struct TimePoly {
    // derivs[k] = k!·(coefficient of t^k); see the module doc.
    derivs: Vec<f64>,
    cap: usize,
}

impl TimePoly {
    fn from_derivs(derivs: Vec<f64>, cap: usize) -> TimePoly {
        assert!(
            cap <= MAX_CAP,
            "degree cap {cap} exceeds the supported {MAX_CAP}"
        );
        debug_assert!(derivs.len() <= cap + 1);
        TimePoly { derivs, cap }
    }

    pub fn zero(cap: usize) -> TimePoly {
        TimePoly::from_derivs(Vec::new(), cap)
    }

    pub fn constant(value: f64, cap: usize) -> TimePoly {
        TimePoly::from_derivs(vec![value], cap)
    }

    /// `coeff * t^degree`, or zero when `degree` exceeds the cap.
    pub fn monomial(degree: usize, coeff: f64, cap: usize) -> TimePoly {
        if degree > cap {
            return TimePoly::zero(cap);
        }
        let mut derivs = vec![0.0; degree + 1];
        derivs[degree] = coeff * factorial(degree);
        TimePoly::from_derivs(derivs, cap)
    }

    /// The identity polynomial `t`.
    pub fn t(cap: usize) -> TimePoly {
        TimePoly::monomial(1, 1.0, cap)
    }

    /// Builds from power-basis coefficients (`coeffs[k]` multiplies `t^k`),
    /// silently dropping entries above the cap: the same truncation rule
    /// all arithmetic follows.
    pub fn from_coeffs(mut coeffs: Vec<f64>, cap: usize) -> TimePoly {
        coeffs.truncate(cap + 1);
        let mut fact = 1.0;
        for (k, c) in coeffs.iter_mut().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            *c *= fact;
        }
        TimePoly::from_derivs(coeffs, cap)
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Coefficient of `t^k` (zero beyond the stored length).
    pub fn coeff(&self, k: usize) -> f64 {
        match self.derivs.get(k) {
            Some(b) => b / factorial(k),
            None => 0.0,
        }
    }

    /// Power-basis coefficient vector, constant term first.
    pub fn coeffs(&self) -> Vec<f64> {
        let mut fact = 1.0;
        self.derivs
            .iter()
            .enumerate()
            .map(|(k, b)| {
                if k > 0 {
                    fact *= k as f64;
                }
                b / fact
            })
            .collect()
    }

    /// Scaled coefficient `k!·c[k]`, the representation the arithmetic
    /// works in. The solver's coefficientwise linear solves use these
    /// directly so no basis conversion touches the recursion.
    pub(crate) fn deriv(&self, k: usize) -> f64 {
        self.derivs.get(k).copied().unwrap_or(0.0)
    }

    /// Builds from scaled coefficients `b[k] = k!·c[k]`.
    pub(crate) fn from_scaled(derivs: Vec<f64>, cap: usize) -> TimePoly {
        let mut p = TimePoly::from_derivs(derivs, cap);
        p.derivs.truncate(cap + 1);
        p
    }

    /// Highest index with a coefficient above the reporting threshold, or
    /// `None` for the (numerically) zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        let mut fact = 1.0;
        let mut top = None;
        for (k, b) in self.derivs.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            if (b / fact).abs() > DEGREE_ZERO_TOL {
                top = Some(k);
            }
        }
        top
    }

    // Highest index with an exactly nonzero coefficient; what the
    // integration overflow check uses.
    fn exact_degree(&self) -> Option<usize> {
        self.derivs.iter().rposition(|b| *b != 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.exact_degree().is_none()
    }

    pub fn scale(&self, s: f64) -> TimePoly {
        TimePoly {
            derivs: self.derivs.iter().map(|b| b * s).collect(),
            cap: self.cap,
        }
    }

    /// The same polynomial under a smaller cap, coefficients above it
    /// dropped.
    pub fn truncated(&self, cap: usize) -> TimePoly {
        let mut derivs = self.derivs.clone();
        derivs.truncate(cap + 1);
        TimePoly::from_derivs(derivs, cap)
    }

    /// Antiderivative with zero constant term (the operator `L⁻¹`): an
    /// exact index shift in the scaled representation. Errors when the
    /// result would need a degree above the cap.
    pub fn integrate(&self) -> Result<TimePoly, SeriesError> {
        match self.exact_degree() {
            None => Ok(TimePoly::zero(self.cap)),
            Some(d) => {
                if d + 1 > self.cap {
                    return Err(SeriesError::CapOverflow {
                        needed: d + 1,
                        cap: self.cap,
                    });
                }
                let mut derivs = Vec::with_capacity(d + 2);
                derivs.push(0.0);
                derivs.extend_from_slice(&self.derivs[..=d]);
                Ok(TimePoly {
                    derivs,
                    cap: self.cap,
                })
            }
        }
    }

    /// `∫₀ᵗ∫₀ᵗ · dt dt`, the operator `L⁻²`.
    pub fn integrate_twice(&self) -> Result<TimePoly, SeriesError> {
        self.integrate()?.integrate()
    }

    /// The derivative (the operator `L`): the inverse index shift, so it
    /// undoes [`integrate`](TimePoly::integrate) bit for bit.
    pub fn differentiate(&self) -> TimePoly {
        if self.derivs.len() <= 1 {
            return TimePoly::zero(self.cap);
        }
        TimePoly {
            derivs: self.derivs[1..].to_vec(),
            cap: self.cap,
        }
    }

    /// Horner evaluation at a point.
    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs().iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Coefficientwise equality, missing trailing entries read as zero. The cap
/// does not participate: `0` under cap 5 equals `0` under cap 8.
impl PartialEq for TimePoly {
    fn eq(&self, other: &Self) -> bool {
        let n = self.derivs.len().max(other.derivs.len());
        (0..n).all(|k| self.deriv(k) == other.deriv(k))
    }
}

impl Add for &TimePoly {
    type Output = TimePoly;
    fn add(self, rhs: &TimePoly) -> TimePoly {
        assert_eq!(self.cap, rhs.cap, "degree caps must match");
        let n = self.derivs.len().max(rhs.derivs.len());
        let derivs = (0..n).map(|k| self.deriv(k) + rhs.deriv(k)).collect();
        TimePoly {
            derivs,
            cap: self.cap,
        }
    }
}

impl Sub for &TimePoly {
    type Output = TimePoly;
    fn sub(self, rhs: &TimePoly) -> TimePoly {
        assert_eq!(self.cap, rhs.cap, "degree caps must match");
        let n = self.derivs.len().max(rhs.derivs.len());
        let derivs = (0..n).map(|k| self.deriv(k) - rhs.deriv(k)).collect();
        TimePoly {
            derivs,
            cap: self.cap,
        }
    }
}

impl Neg for &TimePoly {
    type Output = TimePoly;
    fn neg(self) -> TimePoly {
        self.scale(-1.0)
    }
}

/// Cauchy product, truncated at the cap. In the scaled representation this
/// is a binomial-weighted convolution: `(fg)⁽ⁿ⁾(0) = Σ C(n,i) f⁽ⁱ⁾ g⁽ⁿ⁻ⁱ⁾`.
impl Mul for &TimePoly {
    type Output = TimePoly;
    fn mul(self, rhs: &TimePoly) -> TimePoly {
        assert_eq!(self.cap, rhs.cap, "degree caps must match");
        if self.derivs.is_empty() || rhs.derivs.is_empty() {
            return TimePoly::zero(self.cap);
        }
        let n = (self.derivs.len() + rhs.derivs.len() - 1).min(self.cap + 1);
        let choose = binomial_rows(n - 1);
        let mut derivs = vec![0.0; n];
        for (i, a) in self.derivs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in rhs.derivs.iter().enumerate() {
                if i + j >= n {
                    break;
                }
                derivs[i + j] += choose[i + j][i] * a * b;
            }
        }
        TimePoly {
            derivs,
            cap: self.cap,
        }
    }
}

impl Mul<f64> for &TimePoly {
    type Output = TimePoly;
    fn mul(self, rhs: f64) -> TimePoly {
        self.scale(rhs)
    }
}

impl fmt::Display for TimePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut any = false;
        for (k, c) in self.coeffs().iter().enumerate() {
            if c.abs() <= DEGREE_ZERO_TOL {
                continue;
            }
            if any {
                write!(f, " {} ", if *c < 0.0 { "-" } else { "+" })?;
            } else if *c < 0.0 {
                write!(f, "-")?;
            }
            let m = c.abs();
            match k {
                0 => write!(f, "{m}")?,
                1 => {
                    if m == 1.0 {
                        write!(f, "t")?;
                    } else {
                        write!(f, "{m}*t")?;
                    }
                }
                _ => {
                    if m == 1.0 {
                        write!(f, "t^{k}")?;
                    } else {
                        write!(f, "{m}*t^{k}")?;
                    }
                }
            }
            any = true;
        }
        if !any {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Graded expansions of the system variables: for each variable, a list of
/// [`TimePoly`] components indexed by grade (the power of the expansion
/// parameter). All entries share one degree cap and one grade cap.
///
/// The composition algorithm requires a constant grade-0 head for any
/// variable that reaches an elementary function or a divisor; the solver
/// always satisfies this because order-0 components are the (constant)
/// initial values. Time follows the same discipline: its constant part
/// (the expansion origin) sits at grade 0 and its linear part `t` at
/// grade 1, so explicitly time-dependent expressions compose like any
/// other nonlinearity.
#[derive(Debug, Clone)]
pub struct GradedSeries {
    grade_cap: usize,
    degree_cap: usize,
    entries: HashMap<String, Vec<TimePoly>>,
}

impl GradedSeries {
    pub fn new(grade_cap: usize, degree_cap: usize) -> GradedSeries {
        GradedSeries {
            grade_cap,
            degree_cap,
            entries: HashMap::new(),
        }
    }

    /// Binds a variable to its graded components. Entries beyond the grade
    /// cap are dropped; missing grades read as zero.
    pub fn insert(&mut self, name: impl Into<String>, mut grades: Vec<TimePoly>) {
        grades.truncate(self.grade_cap + 1);
        for g in &grades {
            assert_eq!(g.cap(), self.degree_cap, "degree caps must match");
        }
        self.entries.insert(name.into(), grades);
    }

    /// Binds a variable that does not participate in the expansion (a
    /// parameter): a constant at grade 0.
    pub fn insert_constant(&mut self, name: impl Into<String>, value: f64) {
        let grades = vec![TimePoly::constant(value, self.degree_cap)];
        self.entries.insert(name.into(), grades);
    }

    pub fn grades_of(&self, name: &str) -> Option<&[TimePoly]> {
        self.entries.get(name).map(|v| v.as_slice())
    }

    pub fn grade_cap(&self) -> usize {
        self.grade_cap
    }

    pub fn degree_cap(&self) -> usize {
        self.degree_cap
    }
}

// A value in the graded arithmetic: one TimePoly per grade 0..=k.
#[derive(Debug, Clone)]
struct Graded {
    grades: Vec<TimePoly>,
}

impl Graded {
    fn zero(k: usize, cap: usize) -> Graded {
        Graded {
            grades: vec![TimePoly::zero(cap); k + 1],
        }
    }

    fn constant(c: f64, k: usize, cap: usize) -> Graded {
        let mut g = Graded::zero(k, cap);
        g.grades[0] = TimePoly::constant(c, cap);
        g
    }

    fn k(&self) -> usize {
        self.grades.len() - 1
    }

    fn add(&self, rhs: &Graded) -> Graded {
        Graded {
            grades: self
                .grades
                .iter()
                .zip(&rhs.grades)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    fn sub(&self, rhs: &Graded) -> Graded {
        Graded {
            grades: self
                .grades
                .iter()
                .zip(&rhs.grades)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    fn neg(&self) -> Graded {
        Graded {
            grades: self.grades.iter().map(|a| -a).collect(),
        }
    }

    fn scale(&self, s: f64) -> Graded {
        Graded {
            grades: self.grades.iter().map(|a| a.scale(s)).collect(),
        }
    }

    // Cauchy product across grades; each grade entry is a (cap-truncated)
    // polynomial product.
    fn mul(&self, rhs: &Graded) -> Graded {
        let k = self.k();
        let cap = self.grades[0].cap();
        let mut out = Graded::zero(k, cap);
        for (i, a) in self.grades.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.grades.iter().enumerate() {
                if i + j > k {
                    break;
                }
                out.grades[i + j] = &out.grades[i + j] + &(a * b);
            }
        }
        out
    }

    // The constant grade-0 head required by elementary functions and
    // division, or an error naming the construct that needed it.
    fn constant_head(&self, context: &'static str) -> Result<f64, SeriesError> {
        let g0 = &self.grades[0];
        if g0.derivs.iter().skip(1).any(|c| *c != 0.0) {
            return Err(SeriesError::NonConstantHead { context });
        }
        Ok(g0.coeff(0))
    }

    // Grades 1.. of self, with grade 0 dropped to zero: the tail `h` in the
    // Taylor-about-head composition.
    fn tail(&self) -> Graded {
        let mut t = self.clone();
        t.grades[0] = TimePoly::zero(t.grades[0].cap());
        t
    }

    // Σ_{m=0}^{K} a_m · hᵐ where `a` are Taylor coefficients F⁽ᵐ⁾(c)/m!.
    // `h` must have zero grade 0, so hᵐ only reaches grades >= m.
    fn taylor_sum(a: &[f64], h: &Graded) -> Graded {
        let k = h.k();
        let cap = h.grades[0].cap();
        let mut acc = Graded::constant(a[0], k, cap);
        let mut power = Graded::constant(1.0, k, cap);
        for am in &a[1..] {
            power = power.mul(h);
            acc = acc.add(&power.scale(*am));
        }
        acc
    }
}

// Taylor coefficients F⁽ᵐ⁾(c)/m!, m = 0..=k, for each elementary function
// about the head value c.
fn taylor_table(f: Func, c: f64, k: usize) -> Result<Vec<f64>, SeriesError> {
    let mut a = Vec::with_capacity(k + 1);
    match f {
        Func::Sin | Func::Cos => {
            let (s, co) = c.sin_cos();
            let cycle = if f == Func::Sin {
                [s, co, -s, -co]
            } else {
                [co, -s, -co, s]
            };
            let mut fact = 1.0;
            for m in 0..=k {
                if m > 0 {
                    fact *= m as f64;
                }
                a.push(cycle[m % 4] / fact);
            }
        }
        Func::Exp => {
            a.push(c.exp());
            for m in 1..=k {
                let prev = a[m - 1];
                a.push(prev / m as f64);
            }
        }
        Func::Log => {
            if c <= 0.0 {
                return Err(SeriesError::NonPositiveHead {
                    function: "log",
                    head: c,
                });
            }
            a.push(c.ln());
            let mut cm = 1.0;
            for m in 1..=k {
                cm *= c;
                let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
                a.push(sign / (m as f64 * cm));
            }
        }
        Func::Sqrt => {
            if c <= 0.0 {
                return Err(SeriesError::NonPositiveHead {
                    function: "sqrt",
                    head: c,
                });
            }
            a.push(c.sqrt());
            for m in 1..=k {
                let prev = a[m - 1];
                a.push(prev * (1.5 - m as f64) / (m as f64 * c));
            }
        }
    }
    Ok(a)
}

// 1/(c+h) = Σ (-1)ᵐ/cᵐ⁺¹ · hᵐ.
fn reciprocal_table(c: f64, k: usize) -> Result<Vec<f64>, SeriesError> {
    if c == 0.0 {
        return Err(SeriesError::ZeroDivisorHead);
    }
    let mut a = Vec::with_capacity(k + 1);
    a.push(1.0 / c);
    for m in 1..=k {
        let prev: f64 = a[m - 1];
        a.push(-prev / c);
    }
    Ok(a)
}

fn compose_value(
    e: &Expr,
    args: &GradedSeries,
    k: usize,
    cap: usize,
) -> Result<Graded, SeriesError> {
    match e {
        Expr::Const(c) => Ok(Graded::constant(*c, k, cap)),
        Expr::Var(name) => match args.grades_of(name) {
            Some(grades) => {
                let mut g = Graded::zero(k, cap);
                for (i, value) in grades.iter().enumerate().take(k + 1) {
                    g.grades[i] = value.clone();
                }
                Ok(g)
            }
            None => Err(SeriesError::UnboundSymbol { name: name.clone() }),
        },
        Expr::Neg(a) => Ok(compose_value(a, args, k, cap)?.neg()),
        Expr::Add(a, b) => {
            Ok(compose_value(a, args, k, cap)?.add(&compose_value(b, args, k, cap)?))
        }
        Expr::Sub(a, b) => {
            Ok(compose_value(a, args, k, cap)?.sub(&compose_value(b, args, k, cap)?))
        }
        Expr::Mul(a, b) => {
            Ok(compose_value(a, args, k, cap)?.mul(&compose_value(b, args, k, cap)?))
        }
        Expr::Div(a, b) => {
            let num = compose_value(a, args, k, cap)?;
            let den = compose_value(b, args, k, cap)?;
            let head = den.constant_head("division")?;
            let table = reciprocal_table(head, k)?;
            let inv = Graded::taylor_sum(&table, &den.tail());
            Ok(num.mul(&inv))
        }
        Expr::Pow(a, n) => {
            let base = compose_value(a, args, k, cap)?;
            let mut acc = Graded::constant(1.0, k, cap);
            for _ in 0..*n {
                acc = acc.mul(&base);
            }
            Ok(acc)
        }
        Expr::Call(f, a) => {
            let arg = compose_value(a, args, k, cap)?;
            let head = arg.constant_head(f.name())?;
            let table = taylor_table(*f, head, k)?;
            Ok(Graded::taylor_sum(&table, &arg.tail()))
        }
    }
}

/// Composes an expression with graded arguments and returns grades
/// `0..=k` of the result. Grade `n` of the output is the order-`n` Adomian
/// polynomial of `e` with respect to the supplied components.
pub fn compose(e: &Expr, args: &GradedSeries, k: usize) -> Result<Vec<TimePoly>, SeriesError> {
    Ok(compose_value(e, args, k, args.degree_cap())?.grades)
}

/// Plain truncated power-series composition: evaluates `e` with every
/// symbol bound to a polynomial in `t`, truncating at `cap`.
///
/// Bindings must cover all free symbols of `e`; bind `t` to
/// [`TimePoly::t`] when it occurs. Internally the polynomials are graded by
/// degree, which reduces this to the graded composition above (a degree-`k`
/// part can only influence degrees `>= k`, exactly the grading discipline).
pub fn compose_poly(
    e: &Expr,
    bindings: &HashMap<String, TimePoly>,
    cap: usize,
) -> Result<TimePoly, SeriesError> {
    let mut args = GradedSeries::new(cap, cap);
    for (name, poly) in bindings {
        let grades = (0..=cap)
            .map(|k| {
                TimePoly::from_scaled(
                    vec![0.0; k].into_iter().chain([poly.deriv(k)]).collect(),
                    cap,
                )
            })
            .collect();
        args.insert(name.clone(), grades);
    }
    let grades = compose(e, &args, cap)?;
    let mut sum = TimePoly::zero(cap);
    for g in &grades {
        sum = &sum + g;
    }
    Ok(sum)
}
