//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Only the operations the reference transformer needs are provided. Every
//! value is a 2-D array; vectors are `1 x n` rows.

use ndarray::{s, ArcArray2, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Array2<f64>),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Gather(Var, Vec<usize>),
    SelectRow(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: ArcArray2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Array2<f64>, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: value.into_shared(),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.shared_leaf(value.into_shared(), requires_grad)
    }

    /// A leaf that shares its buffer with the caller instead of copying it.
    pub fn shared_leaf(&mut self, value: ArcArray2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArcArray2<f64> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k), &[a])
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, m: Array2<f64>) -> Var {
        let v = self.value(a) * &m;
        self.push(v, Op::MulConst(a, m), &[a])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            0.5 * x * (1.0 + fast_tanh(u))
        });
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push(v, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise layer normalization followed by `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let m = xv.ncols() as f64;
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / m;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / m;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row *= is;
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Mean over rows, giving a `1 x m` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a), &[a])
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let v = self.value(table).select(Axis(0), ids);
        self.push(v, Op::Gather(table, ids.to_vec()), &[table])
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Var {
        let v = self.value(a).slice(s![row..row + 1, ..]).to_owned();
        self.push(v, Op::SelectRow(a, row), &[a])
    }

    /// Back-propagates `seed` (the gradient of some scalar with respect to
    /// `out`) through the tape.
    pub fn backward(&self, out: Var, seed: Array2<f64>) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(seed.dim(), self.value(out).dim(), "seed shape mismatch");
        grads[out.0] = Some(seed);

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::MulConst(a, m) => accumulate(&mut grads, *a, g * m),
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    ga.zip_mut_with(x, |gv, &x| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = fast_tanh(u);
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        grow.zip_mut_with(&yrow, |gv, &yv| *gv = yv * (*gv - dot));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.needs(*beta) {
                        accumulate(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*gamma) {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *gamma, gg);
                    }
                    if self.needs(*x) {
                        let m = xhat.ncols() as f64;
                        let dxhat = &g * self.value(*gamma);
                        let mut gx = Array2::zeros(xhat.dim());
                        for r in 0..xhat.nrows() {
                            let dh = dxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_dh = dh.sum();
                            let sum_dh_xh: f64 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
                            let k = inv_std[r] / m;
                            for c in 0..xhat.ncols() {
                                gx[[r, c]] = k * (m * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.needs(*p) {
                            accumulate(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let row = &g / n as f64;
                    let ga = row
                        .broadcast(self.value(*a).dim())
                        .expect("broadcast")
                        .to_owned();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::SelectRow(a, row) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.row_mut(*row).assign(&g.row(0));
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// Gradients of leaves that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

// libm's tanh goes through expm1 and dominates the GELU cost.
fn fast_tanh(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        return u - u * u * u / 3.0;
    }
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(sum(w * f(x)))/dx against central differences.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, x0: Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let y = build(&mut tape, x);
        let w = random(&mut rng, tape.value(y).nrows(), tape.value(y).ncols());
        let grads = tape.backward(y, w.clone());
        let analytic = grads.get(x).unwrap().clone();

        let eval = |xv: Array2<f64>| {
            let mut t = Tape::new();
            let x = t.leaf(xv, false);
            let y = build(&mut t, x);
            (t.value(y) * &w).sum()
        };
        let h = 1e-5;
        for idx in ndarray::indices(x0.dim()) {
            let mut plus = x0.clone();
            plus[idx] += h;
            let mut minus = x0.clone();
            minus[idx] -= h;
            let fd = (eval(plus) - eval(minus)) / (2.0 * h);
            let a = analytic[idx];
            assert!(
                (a - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "at {idx:?}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn matmul_and_add_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(&mut rng, 3, 2);
        let r = random(&mut rng, 1, 2);
        check(
            move |t, x| {
                let bv = t.leaf(b.clone(), false);
                let rv = t.leaf(r.clone(), false);
                let m = t.matmul(x, bv);
                t.add_row(m, rv)
            },
            random(&mut rng, 4, 3),
        );
    }

    #[test]
    fn gelu_softmax_layernorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random(&mut rng, 1, 5);
        let b = random(&mut rng, 1, 5);
        check(
            move |t, x| {
                let gv = t.leaf(g.clone(), false);
                let bv = t.leaf(b.clone(), false);
                let n = t.layer_norm(x, gv, bv);
                let a = t.gelu(n);
                t.softmax_rows(a)
            },
            random(&mut rng, 3, 5),
        );
    }

    #[test]
    fn slicing_concat_transpose_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(
            |t, x| {
                let a = t.slice_cols(x, 0, 2);
                let b = t.slice_cols(x, 2, 2);
                let bt = t.transpose(b);
                let p = t.matmul(a, bt);
                let c = t.concat_cols(&[p, a]);
                let sc = t.scale(c, 0.5);
                let s = t.select_row(sc, 1);
                let m = t.mean_rows(sc);
                t.add(s, m)
            },
            random(&mut rng, 3, 4),
        );
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut tape = Tape::new();
        let table = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]], true);
        let rows = tape.gather(table, &[1, 1, 0]);
        assert_eq!(
            tape.value(rows),
            &array![[3.0, 4.0], [3.0, 4.0], [1.0, 2.0]]
        );
        let g = tape.backward(rows, Array2::ones((3, 2)));
        assert_eq!(g.get(table).unwrap(), &array![[1.0, 1.0], [2.0, 2.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0]], false);
        let b = tape.leaf(array![[2.0]], true);
        let c = tape.matmul(a, b);
        let g = tape.backward(c, array![[1.0]]);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap()[[0, 0]], 1.0);
    }
}
