use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

/// Index of a decision variable inside its [`super::LmiProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

/// Handle to a matrix decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVar {
    pub(crate) id: VarId,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
}

impl MatrixVar {
    pub fn id(&self) -> VarId {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of free scalars.
    pub fn scalars(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    /// Position of entry `(i, j)` among the free scalars (column-major; the
    /// upper triangle for symmetric variables).
    pub(crate) fn scalar_index(&self, i: usize, j: usize) -> usize {
        if self.symmetric {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            b * (b + 1) / 2 + a
        } else {
            i + j * self.rows
        }
    }

    /// Rebuild the matrix value from its free scalars.
    pub(crate) fn unpack(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| x[self.scalar_index(i, j)])
    }

    /// The variable as an affine expression.
    pub fn expr(&self) -> AffineExpr {
        AffineExpr {
            constant: DMatrix::zeros(self.rows, self.cols),
            terms: vec![Term {
                var: self.id,
                row0: 0,
                col0: 0,
                kind: TermKind::Product {
                    left: DMatrix::identity(self.rows, self.rows),
                    transposed: false,
                    right: DMatrix::identity(self.cols, self.cols),
                },
            }],
        }
    }

    /// `v · coeff` for a scalar variable `v`.
    ///
    /// # Panics
    /// If the variable is not 1×1.
    pub fn times(&self, coeff: &DMatrix<f64>) -> AffineExpr {
        assert_eq!(
            self.shape(),
            (1, 1),
            "`times` needs a scalar variable, `{}` is not",
            self.name
        );
        AffineExpr {
            constant: DMatrix::zeros(coeff.nrows(), coeff.ncols()),
            terms: vec![Term {
                var: self.id,
                row0: 0,
                col0: 0,
                kind: TermKind::Scaled { coeff: coeff.clone() },
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TermKind {
    /// `left · V · right` or `left · Vᵀ · right`.
    Product {
        left: DMatrix<f64>,
        transposed: bool,
        right: DMatrix<f64>,
    },
    /// `v · coeff` for a scalar variable.
    Scaled { coeff: DMatrix<f64> },
}

/// One variable-dependent summand, placed at `(row0, col0)` of the expression.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Term {
    pub(crate) var: VarId,
    pub(crate) row0: usize,
    pub(crate) col0: usize,
    pub(crate) kind: TermKind,
}

impl Term {
    fn shape(&self) -> (usize, usize) {
        match &self.kind {
            TermKind::Product { left, right, .. } => (left.nrows(), right.ncols()),
            TermKind::Scaled { coeff } => coeff.shape(),
        }
    }

    fn transpose(&self) -> Term {
        let kind = match &self.kind {
            TermKind::Product {
                left,
                transposed,
                right,
            } => TermKind::Product {
                left: right.transpose(),
                transposed: !transposed,
                right: left.transpose(),
            },
            TermKind::Scaled { coeff } => TermKind::Scaled {
                coeff: coeff.transpose(),
            },
        };
        Term {
            var: self.var,
            row0: self.col0,
            col0: self.row0,
            kind,
        }
    }

    fn scale(&mut self, s: f64) {
        match &mut self.kind {
            TermKind::Product { left, .. } => *left *= s,
            TermKind::Scaled { coeff } => *coeff *= s,
        }
    }

    /// `m · (term placed in an expression)`, which is again a single term.
    fn premul(&self, m: &DMatrix<f64>) -> Term {
        let (h, _) = self.shape();
        let slice = m.columns(self.row0, h);
        let kind = match &self.kind {
            TermKind::Product {
                left,
                transposed,
                right,
            } => TermKind::Product {
                left: slice * left,
                transposed: *transposed,
                right: right.clone(),
            },
            TermKind::Scaled { coeff } => TermKind::Scaled { coeff: slice * coeff },
        };
        Term {
            var: self.var,
            row0: 0,
            col0: self.col0,
            kind,
        }
    }

    fn postmul(&self, m: &DMatrix<f64>) -> Term {
        let (_, w) = self.shape();
        let slice = m.rows(self.col0, w);
        let kind = match &self.kind {
            TermKind::Product {
                left,
                transposed,
                right,
            } => TermKind::Product {
                left: left.clone(),
                transposed: *transposed,
                right: right * slice,
            },
            TermKind::Scaled { coeff } => TermKind::Scaled { coeff: coeff * slice },
        };
        Term {
            var: self.var,
            row0: self.row0,
            col0: 0,
            kind,
        }
    }
}

/// Matrix-valued expression `C + Σ Lᵢ Vᵢ Rᵢ` that is affine in the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    pub(crate) constant: DMatrix<f64>,
    pub(crate) terms: Vec<Term>,
}

/// Constant part plus one coefficient matrix per free scalar.
#[derive(Debug, Clone)]
pub(crate) struct Linearized {
    pub(crate) constant: DMatrix<f64>,
    pub(crate) coeffs: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    /// Variables appearing in the expression, in order of first use.
    pub fn variables(&self) -> Vec<VarId> {
        let mut out: Vec<VarId> = Vec::new();
        for t in &self.terms {
            if !out.contains(&t.var) {
                out.push(t.var);
            }
        }
        out
    }

    /// `m · self`.
    ///
    /// # Panics
    /// On incompatible dimensions.
    pub fn premul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(
            m.ncols(),
            self.nrows(),
            "premul: {}×{} times {:?}",
            m.nrows(),
            m.ncols(),
            self.shape()
        );
        Self {
            constant: m * &self.constant,
            terms: self.terms.iter().map(|t| t.premul(m)).collect(),
        }
    }

    /// `self · m`.
    ///
    /// # Panics
    /// On incompatible dimensions.
    pub fn postmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(
            self.ncols(),
            m.nrows(),
            "postmul: {:?} times {}×{}",
            self.shape(),
            m.nrows(),
            m.ncols()
        );
        Self {
            constant: &self.constant * m,
            terms: self.terms.iter().map(|t| t.postmul(m)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(Term::transpose).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.constant *= s;
        for t in &mut out.terms {
            t.scale(s);
        }
        out
    }

    /// `self + c·I`.
    pub fn shift(&self, c: f64) -> Self {
        assert!(self.is_square(), "shift needs a square expression");
        let mut out = self.clone();
        for i in 0..out.nrows() {
            out.constant[(i, i)] += c;
        }
        out
    }

    /// `trace(self)` as a 1×1 expression.
    pub fn trace(&self) -> Self {
        assert!(self.is_square(), "trace needs a square expression");
        let n = self.nrows();
        let mut acc = Self::zeros(1, 1);
        for i in 0..n {
            let e = DMatrix::from_fn(1, n, |_, j| if i == j { 1.0 } else { 0.0 });
            acc = acc + self.premul(&e).postmul(&e.transpose());
        }
        acc
    }

    /// Block matrix from a grid of expressions.
    ///
    /// # Panics
    /// When heights differ along a block row or widths differ along a block column.
    pub fn block(grid: &[&[&AffineExpr]]) -> Self {
        assert!(!grid.is_empty() && !grid[0].is_empty(), "empty block grid");
        let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
        let widths: Vec<usize> = grid[0].iter().map(|e| e.ncols()).collect();
        let rows = heights.iter().sum();
        let cols = widths.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            assert_eq!(
                row.len(),
                widths.len(),
                "block row {bi} has a different number of blocks"
            );
            let mut c0 = 0;
            for (bj, e) in row.iter().enumerate() {
                assert_eq!(
                    e.shape(),
                    (heights[bi], widths[bj]),
                    "block ({bi}, {bj}) has the wrong shape"
                );
                out.constant.view_mut((r0, c0), e.shape()).copy_from(&e.constant);
                out.terms.extend(e.terms.iter().map(|t| Term {
                    row0: t.row0 + r0,
                    col0: t.col0 + c0,
                    ..t.clone()
                }));
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    /// Symmetric block matrix `[[a, b], [bᵀ, d]]`.
    pub fn sym2(a: &AffineExpr, b: &AffineExpr, d: &AffineExpr) -> Self {
        let bt = b.transpose();
        Self::block(&[&[a, b], &[&bt, d]])
    }

    /// Value of the expression at `values` (indexed by variable id).
    pub fn eval(&self, values: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = &values[t.var.0];
            let (h, w) = t.shape();
            let val = match &t.kind {
                TermKind::Product {
                    left,
                    transposed,
                    right,
                } => {
                    if *transposed {
                        left * v.transpose() * right
                    } else {
                        left * v * right
                    }
                }
                TermKind::Scaled { coeff } => coeff * v[(0, 0)],
            };
            let mut blk = out.view_mut((t.row0, t.col0), (h, w));
            blk += val;
        }
        out
    }

    /// Coefficients with respect to the free scalars; `offsets[id]` is the
    /// position of the first scalar of each variable.
    pub(crate) fn linearize(&self, vars: &[MatrixVar], offsets: &[usize]) -> Linearized {
        let (rows, cols) = self.shape();
        let mut coeffs: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        for t in &self.terms {
            let var = &vars[t.var.0];
            let (h, w) = t.shape();
            for i in 0..var.rows {
                for j in 0..var.cols {
                    let contrib = match &t.kind {
                        TermKind::Product {
                            left,
                            transposed,
                            right,
                        } => {
                            // V[i,j] sits at Vᵀ[j,i] when transposed
                            let (a, b) = if *transposed { (j, i) } else { (i, j) };
                            left.column(a) * right.row(b)
                        }
                        TermKind::Scaled { coeff } => coeff.clone(),
                    };
                    if contrib.iter().all(|&c| c == 0.0) {
                        continue;
                    }
                    let idx = offsets[t.var.0] + var.scalar_index(i, j);
                    let entry = coeffs.entry(idx).or_insert_with(|| DMatrix::zeros(rows, cols));
                    let mut blk = entry.view_mut((t.row0, t.col0), (h, w));
                    blk += contrib;
                }
            }
        }
        Linearized {
            constant: self.constant.clone(),
            coeffs,
        }
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;

    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "adding expressions of different shapes");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;

    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + rhs.scale(-1.0)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;

    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;

    fn mul(self, rhs: f64) -> AffineExpr {
        self.scale(rhs)
    }
}

impl Add<&DMatrix<f64>> for AffineExpr {
    type Output = AffineExpr;

    fn add(mut self, rhs: &DMatrix<f64>) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "adding a constant of a different shape");
        self.constant += rhs;
        self
    }
}

impl Sub<&DMatrix<f64>> for AffineExpr {
    type Output = AffineExpr;

    fn sub(mut self, rhs: &DMatrix<f64>) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "subtracting a constant of a different shape");
        self.constant -= rhs;
        self
    }
}
