use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// Index of a decision variable inside a [`ConvexProgram`](super::ConvexProgram).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ cᵢ·xᵢ + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub(crate) terms: Vec<(VarId, f64)>,
    pub(crate) constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(v: VarId, c: f64) -> Self {
        Self {
            terms: vec![(v, c)],
            constant: 0.0,
        }
    }

    /// Sum of variables with unit coefficients.
    pub fn sum<I: IntoIterator<Item = VarId>>(vars: I) -> Self {
        Self {
            terms: vars.into_iter().map(|v| (v, 1.0)).collect(),
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: VarId, c: f64) -> &mut Self {
        self.terms.push((v, c));
        self
    }

    pub fn with_term(mut self, v: VarId, c: f64) -> Self {
        self.terms.push((v, c));
        self
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    /// Merge duplicate variables and drop exact zeros, sorted by variable index.
    pub fn compacted(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Self {
            terms: out,
            constant: self.constant,
        }
    }

    pub(crate) fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0 .0).max()
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl<T: Into<LinExpr>> Add<T> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: T) -> LinExpr {
        self += rhs;
        self
    }
}

impl<T: Into<LinExpr>> AddAssign<T> for LinExpr {
    fn add_assign(&mut self, rhs: T) {
        let rhs = rhs.into();
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl<T: Into<LinExpr>> Sub<T> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: T) -> LinExpr {
        self -= rhs;
        self
    }
}

impl<T: Into<LinExpr>> SubAssign<T> for LinExpr {
    fn sub_assign(&mut self, rhs: T) {
        let rhs = rhs.into();
        self.terms.extend(rhs.terms.into_iter().map(|(v, c)| (v, -c)));
        self.constant -= rhs.constant;
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

impl Mul<f64> for VarId {
    type Output = LinExpr;
    fn mul(self, k: f64) -> LinExpr {
        LinExpr::term(self, k)
    }
}

impl Mul<VarId> for f64 {
    type Output = LinExpr;
    fn mul(self, v: VarId) -> LinExpr {
        LinExpr::term(v, self)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl<T: Into<LinExpr>> Add<T> for VarId {
    type Output = LinExpr;
    fn add(self, rhs: T) -> LinExpr {
        LinExpr::from(self) + rhs
    }
}

impl<T: Into<LinExpr>> Sub<T> for VarId {
    type Output = LinExpr;
    fn sub(self, rhs: T) -> LinExpr {
        LinExpr::from(self) - rhs
    }
}

impl Neg for VarId {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        LinExpr::term(self, -1.0)
    }
}

/// Convex objective: an affine part plus nonnegatively weighted squares of affine
/// expressions. Every such objective is convex by construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub(crate) linear: LinExpr,
    pub(crate) squares: Vec<(f64, LinExpr)>,
}

impl Objective {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn linear(e: impl Into<LinExpr>) -> Self {
        Self {
            linear: e.into(),
            squares: Vec::new(),
        }
    }

    /// Adds `weight · expr²`. Panics on a negative or non-finite weight, which would
    /// break convexity.
    pub fn add_square(&mut self, weight: f64, expr: impl Into<LinExpr>) -> &mut Self {
        assert!(
            weight >= 0.0 && weight.is_finite(),
            "square weight must be finite and nonnegative, got {weight}"
        );
        if weight > 0.0 {
            self.squares.push((weight, expr.into()));
        }
        self
    }

    pub fn with_square(mut self, weight: f64, expr: impl Into<LinExpr>) -> Self {
        self.add_square(weight, expr);
        self
    }

    pub fn add_linear(&mut self, e: impl Into<LinExpr>) -> &mut Self {
        self.linear += e.into();
        self
    }

    pub fn linear_part(&self) -> &LinExpr {
        &self.linear
    }

    pub fn squares(&self) -> &[(f64, LinExpr)] {
        &self.squares
    }

    pub fn is_linear(&self) -> bool {
        self.squares.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.linear.eval(x)
            + self
                .squares
                .iter()
                .map(|(w, e)| {
                    let r = e.eval(x);
                    w * r * r
                })
                .sum::<f64>()
    }

    pub(crate) fn max_var(&self) -> Option<usize> {
        self.squares
            .iter()
            .filter_map(|(_, e)| e.max_var())
            .chain(self.linear.max_var())
            .max()
    }
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.compacted();
        let mut first = true;
        for (v, c) in &e.terms {
            if first {
                write!(f, "{c} x{}", v.0)?;
                first = false;
            } else if *c < 0.0 {
                write!(f, " - {} x{}", -c, v.0)?;
            } else {
                write!(f, " + {c} x{}", v.0)?;
            }
        }
        if e.constant != 0.0 || first {
            if first {
                write!(f, "{}", e.constant)?;
            } else if e.constant < 0.0 {
                write!(f, " - {}", -e.constant)?;
            } else {
                write!(f, " + {}", e.constant)?;
            }
        }
        Ok(())
    }
}
