//! Coupled linear matrix inequality feasibility.
//!
//! A problem is a set of matrix variables (symmetric or rectangular) and a
//! list of block-structured affine expressions, each of which must be
//! negative definite under a [`DefinitenessMargin`]. [`solve`] searches for
//! a strictly feasible point; [`verify`] checks any candidate using nothing
//! but symmetric eigenvalues. Certificates only come out of [`verify`].

mod solver;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DefinitenessMargin, Matrix, SymMatrix};

pub use solver::{solve, SolveOptions, SolverMethod};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    Rectangular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmiVariable {
    pub name: String,
    pub kind: VarKind,
    pub rows: usize,
    pub cols: usize,
    /// Row-major; `false` pins the entry to zero. For symmetric variables
    /// the upper triangle decides.
    pub mask: Option<Vec<bool>>,
}

impl LmiVariable {
    fn is_free(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i * self.cols + j])
    }

    /// Free scalar coordinates as `(row, col)` pairs. Symmetric variables
    /// list the upper triangle only.
    pub(crate) fn coordinates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            let j0 = if self.kind == VarKind::Symmetric { i } else { 0 };
            for j in j0..self.cols {
                if self.is_free(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// `weight · L · V · R` (or `weight · L · Vᵀ · R`). Missing coefficients
/// stand for identities.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub left: Option<Matrix>,
    pub var: VarId,
    pub transpose: bool,
    pub right: Option<Matrix>,
    pub weight: f64,
}

impl Term {
    pub fn new(var: VarId) -> Self {
        Self { left: None, var, transpose: false, right: None, weight: 1.0 }
    }

    pub fn left(mut self, m: Matrix) -> Self {
        self.left = Some(m);
        self
    }

    pub fn right(mut self, m: Matrix) -> Self {
        self.right = Some(m);
        self
    }

    pub fn transposed(mut self) -> Self {
        self.transpose = !self.transpose;
        self
    }

    pub fn weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }

    fn shape(&self, var: &LmiVariable) -> (usize, usize) {
        let (vr, vc) = if self.transpose { (var.cols, var.rows) } else { (var.rows, var.cols) };
        let r = self.left.as_ref().map_or(vr, Matrix::nrows);
        let c = self.right.as_ref().map_or(vc, Matrix::ncols);
        (r, c)
    }

    fn check(&self, var: &LmiVariable) -> Result<()> {
        let (vr, vc) = if self.transpose { (var.cols, var.rows) } else { (var.rows, var.cols) };
        if let Some(l) = &self.left {
            if l.ncols() != vr {
                return Err(Error::DimensionMismatch(format!(
                    "left coefficient has {} columns, variable `{}` contributes {vr} rows",
                    l.ncols(),
                    var.name
                )));
            }
        }
        if let Some(r) = &self.right {
            if r.nrows() != vc {
                return Err(Error::DimensionMismatch(format!(
                    "right coefficient has {} rows, variable `{}` contributes {vc} columns",
                    r.nrows(),
                    var.name
                )));
            }
        }
        Ok(())
    }

    fn evaluate(&self, value: &Matrix) -> Matrix {
        let v = if self.transpose { value.transpose() } else { value.clone() };
        let lv = match &self.left {
            Some(l) => l * v,
            None => v,
        };
        let lvr = match &self.right {
            Some(r) => lv * r,
            None => lv,
        };
        lvr * self.weight
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Entry {
    Constant(Matrix),
    Term(Term),
}

/// Symmetric block matrix that is affine in the variables.
///
/// Off-diagonal entries placed at `(r, c)` imply their transpose at
/// `(c, r)`, so each off-diagonal block is given once. Entries on diagonal
/// blocks are symmetrized: a contribution `T` counts as `(T + Tᵀ)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineExpr {
    block_dims: Vec<usize>,
    entries: Vec<(usize, usize, Entry)>,
}

impl AffineExpr {
    pub fn new(block_dims: Vec<usize>) -> Self {
        Self { block_dims, entries: Vec::new() }
    }

    /// Single-block expression of dimension `n`.
    pub fn square(n: usize) -> Self {
        Self::new(vec![n])
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn constant(&mut self, row: usize, col: usize, m: Matrix) -> &mut Self {
        self.entries.push((row, col, Entry::Constant(m)));
        self
    }

    pub fn term(&mut self, row: usize, col: usize, t: Term) -> &mut Self {
        self.entries.push((row, col, Entry::Term(t)));
        self
    }

    pub fn variables(&self) -> impl Iterator<Item = VarId> + '_ {
        self.entries.iter().filter_map(|(_, _, e)| match e {
            Entry::Term(t) => Some(t.var),
            Entry::Constant(_) => None,
        })
    }

    fn offset(&self, block: usize) -> usize {
        self.block_dims[..block].iter().sum()
    }

    fn check(&self, vars: &[LmiVariable]) -> Result<()> {
        let nb = self.block_dims.len();
        for (r, c, e) in &self.entries {
            if *r >= nb || *c >= nb {
                return Err(Error::MalformedProblem(format!(
                    "block ({r}, {c}) outside a {nb}x{nb} block layout"
                )));
            }
            let shape = match e {
                Entry::Constant(m) => m.shape(),
                Entry::Term(t) => {
                    let var = vars
                        .get(t.var.0)
                        .ok_or_else(|| Error::UnboundVariable(format!("#{}", t.var.0)))?;
                    t.check(var)?;
                    t.shape(var)
                }
            };
            let want = (self.block_dims[*r], self.block_dims[*c]);
            if shape != want {
                return Err(Error::DimensionMismatch(format!(
                    "block ({r}, {c}) must be {}x{}, entry is {}x{}",
                    want.0, want.1, shape.0, shape.1
                )));
            }
        }
        Ok(())
    }

    /// Raw (unsymmetrized) accumulation. `include_constant` toggles the
    /// constant part so the same routine yields linear basis images.
    fn accumulate(&self, lookup: &dyn Fn(VarId) -> Result<Option<Matrix>>, include_constant: bool) -> Result<Matrix> {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for (r, c, e) in &self.entries {
            let block = match e {
                Entry::Constant(m) if include_constant => m.clone(),
                Entry::Constant(_) => continue,
                Entry::Term(t) => match lookup(t.var)? {
                    Some(v) => t.evaluate(&v),
                    None => continue,
                },
            };
            let (ro, co) = (self.offset(*r), self.offset(*c));
            let mut view = out.view_mut((ro, co), block.shape());
            view += &block;
            if r != c {
                let mut mirror = out.view_mut((co, ro), (block.ncols(), block.nrows()));
                mirror += block.transpose();
            }
        }
        Ok(out)
    }
}

/// Numeric values for variables, keyed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment(BTreeMap<VarId, Matrix>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: VarId, value: Matrix) -> &mut Self {
        self.0.insert(id, value);
        self
    }

    pub fn with(mut self, id: VarId, value: Matrix) -> Self {
        self.0.insert(id, value);
        self
    }

    pub fn get(&self, id: VarId) -> Option<&Matrix> {
        self.0.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &Matrix)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }
}

/// Evaluate an expression at an assignment.
pub fn assemble(expr: &AffineExpr, assignment: &Assignment) -> Result<SymMatrix> {
    let lookup = |id: VarId| {
        assignment
            .get(id)
            .cloned()
            .map(Some)
            .ok_or_else(|| Error::UnboundVariable(format!("#{}", id.0)))
    };
    SymMatrix::new(expr.accumulate(&lookup, true)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub expr: AffineExpr,
}

/// Variables plus constraints `expr ≺ 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LmiProblem {
    vars: Vec<LmiVariable>,
    constraints: Vec<Constraint>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.push_var(LmiVariable { name: name.into(), kind: VarKind::Symmetric, rows: n, cols: n, mask: None })
    }

    pub fn rectangular(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.push_var(LmiVariable { name: name.into(), kind: VarKind::Rectangular, rows, cols, mask: None })
    }

    fn push_var(&mut self, v: LmiVariable) -> VarId {
        self.vars.push(v);
        VarId(self.vars.len() - 1)
    }

    /// Pin entries to zero (`false` in the row-major mask).
    pub fn set_mask(&mut self, id: VarId, mask: Vec<bool>) -> Result<()> {
        let var = self
            .vars
            .get_mut(id.0)
            .ok_or_else(|| Error::UnboundVariable(format!("#{}", id.0)))?;
        if mask.len() != var.rows * var.cols {
            return Err(Error::DimensionMismatch(format!(
                "mask for `{}` needs {} entries, got {}",
                var.name,
                var.rows * var.cols,
                mask.len()
            )));
        }
        var.mask = Some(mask);
        Ok(())
    }

    pub fn constrain(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        expr.check(&self.vars)?;
        self.constraints.push(Constraint { name: name.into(), expr });
        Ok(())
    }

    /// `var ≻ 0`, posed as `−var ≺ 0`.
    pub fn positive_definite(&mut self, id: VarId) -> Result<()> {
        let var = self
            .vars
            .get(id.0)
            .ok_or_else(|| Error::UnboundVariable(format!("#{}", id.0)))?;
        if var.kind != VarKind::Symmetric {
            return Err(Error::MalformedProblem(format!("`{}` is not symmetric", var.name)));
        }
        let name = format!("{} > 0", var.name);
        let mut e = AffineExpr::square(var.rows);
        e.term(0, 0, Term::new(id).weight(-1.0));
        self.constrain(&name, e)
    }

    pub fn variables(&self) -> &[LmiVariable] {
        &self.vars
    }

    pub fn variable(&self, id: VarId) -> &LmiVariable {
        &self.vars[id.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn validate(&self) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(Error::MalformedProblem("no constraints".into()));
        }
        for (i, v) in self.vars.iter().enumerate() {
            if !self.constraints.iter().any(|c| c.expr.variables().any(|id| id.0 == i)) {
                return Err(Error::MalformedProblem(format!(
                    "variable `{}` does not appear in any constraint",
                    v.name
                )));
            }
        }
        Ok(())
    }

    /// Zero value for every variable.
    pub fn zero_assignment(&self) -> Assignment {
        let mut a = Assignment::new();
        for (i, v) in self.vars.iter().enumerate() {
            a.insert(VarId(i), Matrix::zeros(v.rows, v.cols));
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub max_eig: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<ConstraintCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Largest `λ_max − threshold` over constraints (≤ 0 means pass).
    pub fn worst_slack(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_eig - c.threshold)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_eig(&self) -> f64 {
        self.checks.iter().map(|c| c.max_eig).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Independent certificate check: assemble each constraint and compare its
/// largest eigenvalue against the margin threshold.
pub fn verify(problem: &LmiProblem, assignment: &Assignment, margin: DefinitenessMargin) -> Result<VerifyReport> {
    for (i, v) in problem.vars.iter().enumerate() {
        let val = assignment
            .get(VarId(i))
            .ok_or_else(|| Error::UnboundVariable(v.name.clone()))?;
        if val.shape() != (v.rows, v.cols) {
            return Err(Error::DimensionMismatch(format!(
                "value for `{}` is {}x{}, expected {}x{}",
                v.name,
                val.nrows(),
                val.ncols(),
                v.rows,
                v.cols
            )));
        }
    }
    let checks = problem
        .constraints
        .iter()
        .map(|c| {
            let m = assemble(&c.expr, assignment)?;
            let max_eig = m.max_eigval();
            let threshold = margin.threshold(m.frobenius_norm());
            Ok(ConstraintCheck { name: c.name.clone(), max_eig, threshold, pass: max_eig <= threshold })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport { checks })
}

/// A verified feasible point. Only constructible through verification.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiCertificate {
    assignment: Assignment,
    checks: Vec<ConstraintCheck>,
    margin: DefinitenessMargin,
}

impl LmiCertificate {
    /// Verify `assignment` and wrap it. Fails with `VerificationFailed`
    /// if any constraint misses the margin.
    pub fn from_verified(problem: &LmiProblem, assignment: Assignment, margin: DefinitenessMargin) -> Result<Self> {
        let report = verify(problem, &assignment, margin)?;
        if !report.passed() {
            let failing: Vec<_> = report
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{} (λ_max = {:.3e}, needs ≤ {:.3e})", c.name, c.max_eig, c.threshold))
                .collect();
            return Err(Error::VerificationFailed(failing.join("; ")));
        }
        Ok(Self { assignment, checks: report.checks, margin })
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn value(&self, id: VarId) -> &Matrix {
        self.assignment.get(id).expect("certificate covers every variable")
    }

    pub fn checks(&self) -> &[ConstraintCheck] {
        &self.checks
    }

    pub fn margin(&self) -> DefinitenessMargin {
        self.margin
    }

    /// Largest constraint eigenvalue.
    pub fn max_eig(&self) -> f64 {
        self.checks.iter().map(|c| c.max_eig).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// What the solver achieved when it could not produce a certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct IndeterminateReport {
    /// Smallest achieved value of the largest constraint eigenvalue.
    pub best_max_eig: f64,
    /// Smallest achieved excess over the margin threshold.
    pub best_slack: f64,
    pub iterations: usize,
    pub restarts: usize,
}

impl fmt::Display for IndeterminateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "no verified point after {} iterations over {} restarts (best λ_max = {:.3e}, slack = {:.3e})",
            self.iterations, self.restarts, self.best_max_eig, self.best_slack
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn assemble_simple_expressions() {
        let mut prob = LmiProblem::new();
        let p = prob.symmetric("P", 2);
        let mut e = AffineExpr::square(2);
        e.term(0, 0, Term::new(p).weight(-1.0));
        let a = Assignment::new().with(p, Matrix::identity(2, 2));
        assert_eq!(assemble(&e, &a).unwrap().into_matrix(), -Matrix::identity(2, 2));

        let mut prob = LmiProblem::new();
        let p = prob.symmetric("P", 1);
        let mut e = AffineExpr::square(1);
        e.term(0, 0, Term::new(p).left(s(0.5)).right(s(0.5)));
        e.term(0, 0, Term::new(p).weight(-1.0));
        let v = assemble(&e, &Assignment::new().with(p, s(1.0))).unwrap();
        assert!((v.as_matrix()[(0, 0)] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn off_diagonal_blocks_are_mirrored() {
        let mut prob = LmiProblem::new();
        let y = prob.rectangular("Y", 1, 2);
        let mut e = AffineExpr::new(vec![2, 1]);
        e.term(1, 0, Term::new(y).weight(2.0));
        e.constant(1, 1, s(-3.0));
        prob.constrain("c", e.clone()).unwrap();
        let val = Matrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let m = assemble(&e, &Assignment::new().with(y, val)).unwrap().into_matrix();
        assert_eq!(m[(2, 0)], 2.0);
        assert_eq!(m[(0, 2)], 2.0);
        assert_eq!(m[(1, 2)], -2.0);
        assert_eq!(m[(2, 2)], -3.0);
    }

    #[test]
    fn unbound_variable_is_reported() {
        let mut prob = LmiProblem::new();
        let p = prob.symmetric("P", 1);
        let mut e = AffineExpr::square(1);
        e.term(0, 0, Term::new(p));
        assert!(matches!(assemble(&e, &Assignment::new()), Err(Error::UnboundVariable(_))));
    }

    #[test]
    fn malformed_blocks_are_rejected() {
        let mut prob = LmiProblem::new();
        let p = prob.symmetric("P", 2);
        let mut e = AffineExpr::square(3);
        e.term(0, 0, Term::new(p));
        assert!(prob.constrain("bad", e).is_err());
        let mut e = AffineExpr::square(2);
        e.term(0, 0, Term::new(p).left(Matrix::zeros(2, 3)));
        assert!(prob.constrain("bad", e).is_err());
        let unused = prob.symmetric("Q", 1);
        prob.positive_definite(p).unwrap();
        assert!(prob.validate().is_err());
        prob.positive_definite(unused).unwrap();
        prob.validate().unwrap();
    }

    #[test]
    fn verify_rejects_zero_on_positivity() {
        let mut prob = LmiProblem::new();
        let p = prob.symmetric("P", 2);
        prob.positive_definite(p).unwrap();
        let margin = DefinitenessMargin::default();
        assert!(!verify(&prob, &prob.zero_assignment(), margin).unwrap().passed());
        let ok = Assignment::new().with(p, Matrix::identity(2, 2));
        assert!(verify(&prob, &ok, margin).unwrap().passed());
        assert!(LmiCertificate::from_verified(&prob, prob.zero_assignment(), margin).is_err());
    }

    #[test]
    fn diagonal_terms_are_symmetrized() {
        let mut prob = LmiProblem::new();
        let y = prob.rectangular("Y", 2, 2);
        let mut e = AffineExpr::square(2);
        e.term(0, 0, Term::new(y));
        prob.constrain("c", e.clone()).unwrap();
        let val = Matrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let m = assemble(&e, &Assignment::new().with(y, val)).unwrap().into_matrix();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }
}
