//! A small matrix-valued reverse-mode gradient tape.
//!
//! Every node holds a dense matrix; scalars are `1 x 1`. Only the operations
//! needed for GP marginal likelihoods and Gaussian KL divergences of
//! network-parameterized priors are provided.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::GpError;
use crate::linalg::cholesky_jittered;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `A Bᵀ`
    MatMulT(Var, Var),
    /// `A + 1 bᵀ` with `b` a column of length `cols(A)`.
    AddBias(Var, Var),
    Tanh(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    /// `s A` with `s` a `1 x 1` node.
    ScaleBy(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    AddDiagConst(Var),
    /// Pairwise squared distances between the rows.
    SqDist(Var),
    LogDet(Var),
    /// `yᵀ A⁻¹ y` for a column `y`.
    QuadSolve(Var, Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Chol(Cholesky<f64, Dyn>),
    Solved(DMatrix<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
    needs_grad: bool,
    aux: Aux,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op, needs_grad: bool, aux: Aux) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    /// A differentiable input.
    pub fn param(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf, true, Aux::None)
    }

    pub fn constant(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf, false, Aux::None)
    }

    pub fn param_scalar(&mut self, v: f64) -> Var {
        self.param(scalar(v))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b).transpose();
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulT(a, b), ng, Aux::None)
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        let bias = self.value(b);
        assert_eq!(bias.nrows(), v.ncols(), "bias length");
        for mut row in v.row_iter_mut() {
            for (c, x) in row.iter_mut().enumerate() {
                *x += bias[(c, 0)];
            }
        }
        let ng = self.ng(&[a, b]);
        self.push(v, Op::AddBias(a, b), ng, Aux::None)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(&[a]);
        self.push(v, Op::Tanh(a), ng, Aux::None)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.ng(&[a]);
        self.push(v, Op::Exp(a), ng, Aux::None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng, Aux::None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Sub(a, b), ng, Aux::None)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MulElem(a, b), ng, Aux::None)
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let v = self.value(a) * self.scalar_value(s);
        let ng = self.ng(&[a, s]);
        self.push(v, Op::ScaleBy(a, s), ng, Aux::None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let ng = self.ng(&[a]);
        self.push(v, Op::ScaleConst(a, c), ng, Aux::None)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).add_scalar(c);
        let ng = self.ng(&[a]);
        self.push(v, Op::AddConst(a), ng, Aux::None)
    }

    pub fn add_diag(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.nrows().min(v.ncols()) {
            v[(i, i)] += c;
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::AddDiagConst(a), ng, Aux::None)
    }

    pub fn sq_dist(&mut self, f: Var) -> Var {
        let x = self.value(f);
        let n = x.nrows();
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let d = (x.row(i) - x.row(j)).norm_squared();
                v[(i, j)] = d;
                v[(j, i)] = d;
            }
        }
        let ng = self.ng(&[f]);
        self.push(v, Op::SqDist(f), ng, Aux::None)
    }

    /// `ln |A|` of a symmetric positive definite matrix.
    pub fn logdet(&mut self, a: Var) -> Result<Var, GpError> {
        let (chol, _) = cholesky_jittered(self.value(a).clone())?;
        let v = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ng = self.ng(&[a]);
        Ok(self.push(scalar(v), Op::LogDet(a), ng, Aux::Chol(chol)))
    }

    /// `yᵀ A⁻¹ y` for symmetric positive definite `A`.
    pub fn quad_solve(&mut self, a: Var, y: Var) -> Result<Var, GpError> {
        let (chol, _) = cholesky_jittered(self.value(a).clone())?;
        let yv = self.value(y);
        let sol = chol.solve(yv);
        let v = yv.dot(&sol);
        let ng = self.ng(&[a, y]);
        Ok(self.push(scalar(v), Op::QuadSolve(a, y), ng, Aux::Solved(sol)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        let ng = self.ng(&[a]);
        self.push(scalar(v), Op::Sum(a), ng, Aux::None)
    }

    /// Gradients of the scalar `root` with respect to every node; `None` for
    /// nodes that do not influence it or need no gradient.
    pub fn backward(&self, root: Var) -> Vec<Option<DMatrix<f64>>> {
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = &node.value;
            let mut acc = |v: Var, d: DMatrix<f64>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => *e += d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &g * bv);
                    acc(*b, g.transpose() * av);
                }
                Op::AddBias(a, b) => {
                    let ones = DMatrix::from_element(g.nrows(), 1, 1.0);
                    acc(*b, g.transpose() * ones);
                    acc(*a, g.clone());
                }
                Op::Tanh(a) => acc(*a, g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi))),
                Op::Exp(a) => acc(*a, g.component_mul(y)),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g.clone());
                }
                Op::MulElem(a, b) => {
                    acc(*a, g.component_mul(self.value(*b)));
                    acc(*b, g.component_mul(self.value(*a)));
                }
                Op::ScaleBy(a, s) => {
                    let av = self.value(*a);
                    acc(*s, scalar(g.dot(av)));
                    acc(*a, &g * self.scalar_value(*s));
                }
                Op::ScaleConst(a, c) => acc(*a, &g * *c),
                Op::AddConst(a) | Op::AddDiagConst(a) => acc(*a, g.clone()),
                Op::SqDist(f) => {
                    let x = self.value(*f);
                    let s = &g + g.transpose();
                    let rows = DMatrix::from_diagonal(&s.column_sum());
                    acc(*f, (rows - &s) * x * 2.0);
                }
                Op::LogDet(a) => {
                    if let Aux::Chol(chol) = &node.aux {
                        acc(*a, chol.inverse() * g[(0, 0)]);
                    }
                }
                Op::QuadSolve(a, yv) => {
                    if let Aux::Solved(sol) = &node.aux {
                        let s = g[(0, 0)];
                        acc(*yv, sol * (2.0 * s));
                        acc(*a, sol * sol.transpose() * (-s));
                    }
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    acc(*a, DMatrix::from_element(av.nrows(), av.ncols(), g[(0, 0)]));
                }
            }
        }
        grads
    }
}
