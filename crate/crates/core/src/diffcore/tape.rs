//! Eager reverse-mode tape over dense 2-D tensors.
//!
//! Every node's value is computed when the node is recorded. The backward
//! pass records its adjoints as ordinary nodes on the same tape, so a
//! gradient can itself be differentiated. Hessian-vector products are
//! obtained by running `backward` twice (reverse-over-reverse).

use ndarray::{s, Array2, Axis, Zip};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// m×n plus a 1×n row broadcast down the rows.
    AddRow(Var, Var),
    /// m×n → 1×n
    SumRows(Var),
    /// 1×n → m×n
    TileRows(Var),
    /// m×n → m×1
    SumCols(Var),
    /// m×1 → m×n
    TileCols(Var),
    /// (k·g)×n → k×n, summing consecutive groups of g rows.
    GroupSumRows(Var, usize),
    /// k×n → (k·g)×n, each row repeated g times consecutively.
    RepeatRows(Var, usize),
    Sum(Var),
    /// 1×1 → m×n
    Fill(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Powf(Var, f64),
    Cos(Var),
    Sin(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    /// m×w → m×total with the input placed at column `offset`.
    PadCols(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of tensor operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.dim(), (1, 1));
        t[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that gradients are taken with respect to.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.ng(&[a]);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let ng = self.ng(&[a]);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let value = self.value(a) + self.value(row);
        let ng = self.ng(&[a, row]);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.ng(&[a]);
        self.push(value, Op::SumRows(a), ng)
    }

    pub fn tile_rows(&mut self, a: Var, m: usize) -> Var {
        let src = self.value(a);
        debug_assert_eq!(src.nrows(), 1);
        let value = src.broadcast((m, src.ncols())).unwrap().to_owned();
        let ng = self.ng(&[a]);
        self.push(value, Op::TileRows(a), ng)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(&[a]);
        self.push(value, Op::SumCols(a), ng)
    }

    pub fn tile_cols(&mut self, a: Var, n: usize) -> Var {
        let src = self.value(a);
        debug_assert_eq!(src.ncols(), 1);
        let value = src.broadcast((src.nrows(), n)).unwrap().to_owned();
        let ng = self.ng(&[a]);
        self.push(value, Op::TileCols(a), ng)
    }

    pub fn group_sum_rows(&mut self, a: Var, group: usize) -> Var {
        let src = self.value(a);
        let (m, n) = src.dim();
        assert!(group > 0 && m % group == 0, "row count not divisible by group");
        let mut value = Array2::zeros((m / group, n));
        for (i, row) in src.outer_iter().enumerate() {
            let mut dst = value.row_mut(i / group);
            dst += &row;
        }
        let ng = self.ng(&[a]);
        self.push(value, Op::GroupSumRows(a, group), ng)
    }

    pub fn repeat_rows(&mut self, a: Var, group: usize) -> Var {
        let src = self.value(a);
        let (k, n) = src.dim();
        let mut value = Array2::zeros((k * group, n));
        for (i, mut row) in value.outer_iter_mut().enumerate() {
            row.assign(&src.row(i / group));
        }
        let ng = self.ng(&[a]);
        self.push(value, Op::RepeatRows(a, group), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn fill(&mut self, a: Var, m: usize, n: usize) -> Var {
        let x = self.scalar(a);
        let value = Array2::from_elem((m, n), x);
        let ng = self.ng(&[a]);
        self.push(value, Op::Fill(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.ng(&[a]);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).mapv(|x| x.powf(p));
        let ng = self.ng(&[a]);
        self.push(value, Op::Powf(a, p), ng)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::cos);
        let ng = self.ng(&[a]);
        self.push(value, Op::Cos(a), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sin);
        let ng = self.ng(&[a]);
        self.push(value, Op::Sin(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let ng = self.ng(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(&[a]);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    fn pad_cols(&mut self, a: Var, offset: usize, total: usize) -> Var {
        let src = self.value(a);
        let (m, w) = src.dim();
        let mut value = Array2::zeros((m, total));
        value.slice_mut(s![.., offset..offset + w]).assign(src);
        let ng = self.ng(&[a]);
        self.push(value, Op::PadCols(a, offset), ng)
    }

    /// Sum of squares of all entries.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.sum(sq)
    }

    /// Frobenius inner product ⟨a, b⟩.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, g: Var) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        adj[target.0] = Some(match adj[target.0] {
            Some(prev) => self.add(prev, g),
            None => g,
        });
    }

    /// Gradients of the scalar `out` with respect to each of `wrt`.
    ///
    /// The adjoints are recorded on this tape, so the returned handles can be
    /// fed to another `backward` call. Inputs that `out` does not depend on
    /// receive a zero tensor of the matching shape.
    pub fn backward(&mut self, out: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let n = out.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; n];
        if self.nodes[out.0].needs_grad {
            adj[out.0] = Some(self.scalar_constant(1.0));
        }

        for i in (0..n).rev() {
            let Some(gy) = adj[i] else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs_grad(a) {
                        let bt = self.transpose(b);
                        let ga = self.matmul(gy, bt);
                        self.accumulate(&mut adj, a, ga);
                    }
                    if self.needs_grad(b) {
                        let at = self.transpose(a);
                        let gb = self.matmul(at, gy);
                        self.accumulate(&mut adj, b, gb);
                    }
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(gy);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, a, gy);
                    self.accumulate(&mut adj, b, gy);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adj, a, gy);
                    if self.needs_grad(b) {
                        let gb = self.scale(gy, -1.0);
                        self.accumulate(&mut adj, b, gb);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs_grad(a) {
                        let ga = self.mul(gy, b);
                        self.accumulate(&mut adj, a, ga);
                    }
                    if self.needs_grad(b) {
                        let gb = self.mul(gy, a);
                        self.accumulate(&mut adj, b, gb);
                    }
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(gy, c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::AddScalar(a) => self.accumulate(&mut adj, a, gy),
                Op::AddRow(a, row) => {
                    self.accumulate(&mut adj, a, gy);
                    if self.needs_grad(row) {
                        let gr = self.sum_rows(gy);
                        self.accumulate(&mut adj, row, gr);
                    }
                }
                Op::SumRows(a) => {
                    let m = self.shape(a).0;
                    let ga = self.tile_rows(gy, m);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::TileRows(a) => {
                    let ga = self.sum_rows(gy);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SumCols(a) => {
                    let c = self.shape(a).1;
                    let ga = self.tile_cols(gy, c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::TileCols(a) => {
                    let ga = self.sum_cols(gy);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::GroupSumRows(a, g) => {
                    let ga = self.repeat_rows(gy, g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::RepeatRows(a, g) => {
                    let ga = self.group_sum_rows(gy, g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Sum(a) => {
                    let (m, c) = self.shape(a);
                    let ga = self.fill(gy, m, c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Fill(a) => {
                    let ga = self.sum(gy);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Tanh(a) => {
                    // d tanh = 1 - y², written in terms of the output node so
                    // that the adjoint stays differentiable.
                    let y = Var(i);
                    let y2 = self.mul(y, y);
                    let neg = self.scale(y2, -1.0);
                    let d = self.add_scalar(neg, 1.0);
                    let ga = self.mul(gy, d);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let mask = self.value(a).mapv(|x| if x > 0.0 { 1.0 } else { slope });
                    let mask = self.constant(mask);
                    let ga = self.mul(gy, mask);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Powf(a, p) => {
                    let pm1 = self.powf(a, p - 1.0);
                    let d = self.scale(pm1, p);
                    let ga = self.mul(gy, d);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Cos(a) => {
                    let sn = self.sin(a);
                    let d = self.scale(sn, -1.0);
                    let ga = self.mul(gy, d);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Sin(a) => {
                    let cs = self.cos(a);
                    let ga = self.mul(gy, cs);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(p).1;
                        if self.needs_grad(p) {
                            let gp = self.slice_cols(gy, start, start + w);
                            self.accumulate(&mut adj, p, gp);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let total = self.shape(a).1;
                    let ga = self.pad_cols(gy, start, total);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::PadCols(a, offset) => {
                    let w = self.shape(a).1;
                    let ga = self.slice_cols(gy, offset, offset + w);
                    self.accumulate(&mut adj, a, ga);
                }
            }
        }

        wrt.iter()
            .map(|&v| match adj.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(v);
                    self.constant(Array2::zeros(shape))
                }
            })
            .collect()
    }

    /// True when every entry of `v` is finite.
    pub fn is_finite(&self, v: Var) -> bool {
        let mut ok = true;
        Zip::from(self.value(v)).for_each(|x| ok &= x.is_finite());
        ok
    }
}
