//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A `Tape` records operations during the forward pass; `backward` walks
//! the recording in reverse creation order, which is a valid reverse
//! topological order, visiting every node exactly once. Gradients are
//! accumulated in double precision. With gradients disabled the same ops
//! compute values only.

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Array {
        Array { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Array {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Array { rows, cols, data }
    }

    pub fn scalar(x: f64) -> Array {
        Array { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn row(data: Vec<f64>) -> Array {
        Array { rows: 1, cols: data.len(), data }
    }

    pub fn column(data: Vec<f64>) -> Array {
        Array { rows: data.len(), cols: 1, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Position on the tape, usable as an index into the backward output.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Matmul(Var, Var),
    /// Adds a [1, n] row to every row of a [m, n] matrix.
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<usize>),
    /// Min/max per (segment, column); the winning row index is recorded so
    /// the gradient routes only to the argmin/argmax element (ties resolve
    /// to the lowest row index).
    SegmentMin(Var, Vec<i64>),
    SegmentMax(Var, Vec<i64>),
    SumAll(Var),
    MeanAll(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Clamp(Var, f64, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
}

struct Node {
    value: Array,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Tape {
    pub fn new(grad_enabled: bool) -> Tape {
        Tape { nodes: Vec::new(), grad_enabled }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        let op = if self.grad_enabled { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "sub shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "div shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p / q).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let out = Array { rows: x.rows, cols: x.cols, data: x.data.iter().map(|p| -p).collect() };
        self.push(out, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let out = Array { rows: x.rows, cols: x.cols, data: x.data.iter().map(|p| p * c).collect() };
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let out = Array { rows: x.rows, cols: x.cols, data: x.data.iter().map(|p| p + c).collect() };
        self.push(out, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.cols, y.rows, "matmul inner dimension mismatch");
        let out = matmul_arrays(x, y, false, false);
        self.push(out, Op::Matmul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(r.rows, 1, "bias must be a single row");
        assert_eq!(x.cols, r.cols, "bias width mismatch");
        let mut out = x.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] += r.data[j];
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows;
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols).sum();
        let mut out = Array::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let x = &self.nodes[p.0].value;
            assert_eq!(x.rows, rows, "concat row mismatch");
            for i in 0..rows {
                out.data[i * total + offset..i * total + offset + x.cols]
                    .copy_from_slice(&x.data[i * x.cols..(i + 1) * x.cols]);
            }
            offset += x.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = &self.nodes[a.0].value;
        assert!(start + len <= x.cols);
        let mut out = Array::zeros(x.rows, len);
        for i in 0..x.rows {
            out.data[i * len..(i + 1) * len]
                .copy_from_slice(&x.data[i * x.cols + start..i * x.cols + start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = &self.nodes[a.0].value;
        let mut out = Array::zeros(idx.len(), x.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.data[i * x.cols..(i + 1) * x.cols]
                .copy_from_slice(&x.data[r * x.cols..(r + 1) * x.cols]);
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn segment_sum(&mut self, a: Var, seg: &[usize], n_segments: usize) -> Var {
        let x = &self.nodes[a.0].value;
        assert_eq!(seg.len(), x.rows);
        let mut out = Array::zeros(n_segments, x.cols);
        for (i, &s) in seg.iter().enumerate() {
            for j in 0..x.cols {
                out.data[s * x.cols + j] += x.data[i * x.cols + j];
            }
        }
        self.push(out, Op::SegmentSum(a, seg.to_vec()))
    }

    pub fn segment_mean(&mut self, a: Var, seg: &[usize], n_segments: usize) -> Var {
        let x = &self.nodes[a.0].value;
        assert_eq!(seg.len(), x.rows);
        let mut counts = vec![0usize; n_segments];
        for &s in seg {
            counts[s] += 1;
        }
        let mut out = Array::zeros(n_segments, x.cols);
        for (i, &s) in seg.iter().enumerate() {
            for j in 0..x.cols {
                out.data[s * x.cols + j] += x.data[i * x.cols + j];
            }
        }
        for s in 0..n_segments {
            if counts[s] > 0 {
                for j in 0..x.cols {
                    out.data[s * x.cols + j] /= counts[s] as f64;
                }
            }
        }
        self.push(out, Op::SegmentMean(a, seg.to_vec(), counts))
    }

    pub fn segment_min(&mut self, a: Var, seg: &[usize], n_segments: usize) -> Var {
        self.segment_extreme(a, seg, n_segments, true)
    }

    pub fn segment_max(&mut self, a: Var, seg: &[usize], n_segments: usize) -> Var {
        self.segment_extreme(a, seg, n_segments, false)
    }

    fn segment_extreme(&mut self, a: Var, seg: &[usize], n_segments: usize, min: bool) -> Var {
        let x = &self.nodes[a.0].value;
        assert_eq!(seg.len(), x.rows);
        let mut out = Array::zeros(n_segments, x.cols);
        let mut arg: Vec<i64> = vec![-1; n_segments * x.cols];
        for (i, &s) in seg.iter().enumerate() {
            for j in 0..x.cols {
                let v = x.data[i * x.cols + j];
                let slot = s * x.cols + j;
                let better = if arg[slot] < 0 {
                    true
                } else if min {
                    v < out.data[slot]
                } else {
                    v > out.data[slot]
                };
                if better {
                    out.data[slot] = v;
                    arg[slot] = i as i64;
                }
            }
        }
        // empty segments keep zero values and route no gradient
        let op = if min { Op::SegmentMin(a, arg) } else { Op::SegmentMax(a, arg) };
        self.push(out, op)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let out = Array::scalar(x.data.iter().sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let out = Array::scalar(x.data.iter().sum::<f64>() / x.len() as f64);
        self.push(out, Op::MeanAll(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data.iter().map(|&p| if p > 0.0 { p } else { slope * p }).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data.iter().map(|&p| softplus(p)).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data.iter().map(|&p| p.ln()).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data.iter().map(|&p| p.exp()).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data.iter().map(|&p| p * p).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Square(a))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p.min(*q)).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Minimum(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p.max(*q)).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Maximum(a, b))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data.iter().map(|&p| p.clamp(lo, hi)).collect();
        let out = Array { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Per-row layer normalization with learnable gain and bias.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        assert_eq!(g.rows, 1);
        assert_eq!(b.rows, 1);
        assert_eq!(g.cols, x.cols);
        assert_eq!(b.cols, x.cols);
        let n = x.cols as f64;
        let mut out = Array::zeros(x.rows, x.cols);
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; x.rows];
        for i in 0..x.rows {
            let row = &x.data[i * x.cols..(i + 1) * x.cols];
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..x.cols {
                let h = (row[j] - mean) * is;
                xhat[i * x.cols + j] = h;
                out.data[i * x.cols + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x: a, gamma, beta, xhat, inv_std })
    }

    /// Backpropagates from a scalar root. Gradients accumulate per node and
    /// can be read with `grad` afterwards.
    pub fn backward(&mut self, root: Var) -> Vec<Option<Array>> {
        assert!(self.grad_enabled, "tape built without gradients");
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            self.step_backward(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        grads
    }

    fn step_backward(&self, i: usize, gout: &Array, grads: &mut Vec<Option<Array>>) {
        let ensure = |grads: &mut Vec<Option<Array>>, v: Var, rows: usize, cols: usize| {
            if grads[v.0].is_none() {
                grads[v.0] = Some(Array::zeros(rows, cols));
            }
        };
        let shape = |tape: &Tape, v: Var| {
            let a = &tape.nodes[v.0].value;
            (a.rows, a.cols)
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    let (r, c) = shape(self, *v);
                    ensure(grads, *v, r, c);
                    let g = grads[v.0].as_mut().unwrap();
                    for (gd, go) in g.data.iter_mut().zip(&gout.data) {
                        *gd += go;
                    }
                }
            }
            Op::Sub(a, b) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for (gd, go) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&gout.data) {
                    *gd += go;
                }
                let (r, c) = shape(self, *b);
                ensure(grads, *b, r, c);
                for (gd, go) in grads[b.0].as_mut().unwrap().data.iter_mut().zip(&gout.data) {
                    *gd -= go;
                }
            }
            Op::Mul(a, b) => {
                let bv = self.nodes[b.0].value.data.clone();
                let av = self.nodes[a.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for ((gd, go), q) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&gout.data).zip(&bv) {
                    *gd += go * q;
                }
                ensure(grads, *b, r, c);
                for ((gd, go), p) in grads[b.0].as_mut().unwrap().data.iter_mut().zip(&gout.data).zip(&av) {
                    *gd += go * p;
                }
            }
            Op::Div(a, b) => {
                let bv = self.nodes[b.0].value.data.clone();
                let av = self.nodes[a.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for ((gd, go), q) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&gout.data).zip(&bv) {
                    *gd += go / q;
                }
                ensure(grads, *b, r, c);
                let g = grads[b.0].as_mut().unwrap();
                for k in 0..g.data.len() {
                    g.data[k] -= gout.data[k] * av[k] / (bv[k] * bv[k]);
                }
            }
            Op::Neg(a) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for (gd, go) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&gout.data) {
                    *gd -= go;
                }
            }
            Op::Scale(a, k) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for (gd, go) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&gout.data) {
                    *gd += go * k;
                }
            }
            Op::AddScalar(a) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for (gd, go) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&gout.data) {
                    *gd += go;
                }
            }
            Op::Matmul(a, b) => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let da = matmul_arrays(gout, &bv, false, true);
                let db = matmul_arrays(&av, gout, true, false);
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for (gd, d) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&da.data) {
                    *gd += d;
                }
                let (r, c) = shape(self, *b);
                ensure(grads, *b, r, c);
                for (gd, d) in grads[b.0].as_mut().unwrap().data.iter_mut().zip(&db.data) {
                    *gd += d;
                }
            }
            Op::AddRow(a, row) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                for (gd, go) in grads[a.0].as_mut().unwrap().data.iter_mut().zip(&gout.data) {
                    *gd += go;
                }
                let (_, rc) = shape(self, *row);
                ensure(grads, *row, 1, rc);
                let g = grads[row.0].as_mut().unwrap();
                for i in 0..gout.rows {
                    for j in 0..gout.cols {
                        g.data[j] += gout.data[i * gout.cols + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = shape(self, *p);
                    ensure(grads, *p, r, c);
                    let g = grads[p.0].as_mut().unwrap();
                    for i in 0..r {
                        for j in 0..c {
                            g.data[i * c + j] += gout.data[i * gout.cols + offset + j];
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for i in 0..gout.rows {
                    for j in 0..gout.cols {
                        g.data[i * c + start + j] += gout.data[i * gout.cols + j];
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for (i, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        g.data[src * c + j] += gout.data[i * c + j];
                    }
                }
            }
            Op::SegmentSum(a, seg) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for (i, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        g.data[i * c + j] += gout.data[s * c + j];
                    }
                }
            }
            Op::SegmentMean(a, seg, counts) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for (i, &s) in seg.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    for j in 0..c {
                        g.data[i * c + j] += gout.data[s * c + j] * inv;
                    }
                }
            }
            Op::SegmentMin(a, arg) | Op::SegmentMax(a, arg) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for (slot, &src_row) in arg.iter().enumerate() {
                    if src_row >= 0 {
                        let j = slot % c;
                        g.data[src_row as usize * c + j] += gout.data[slot];
                    }
                }
            }
            Op::SumAll(a) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for gd in g.data.iter_mut() {
                    *gd += gout.data[0];
                }
            }
            Op::MeanAll(a) => {
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                let inv = 1.0 / (r * c) as f64;
                for gd in g.data.iter_mut() {
                    *gd += gout.data[0] * inv;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let xs = self.nodes[a.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for k in 0..g.data.len() {
                    g.data[k] += gout.data[k] * if xs[k] > 0.0 { 1.0 } else { *slope };
                }
            }
            Op::Softplus(a) => {
                let xs = self.nodes[a.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for k in 0..g.data.len() {
                    g.data[k] += gout.data[k] * sigmoid(xs[k]);
                }
            }
            Op::Log(a) => {
                let xs = self.nodes[a.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for k in 0..g.data.len() {
                    g.data[k] += gout.data[k] / xs[k];
                }
            }
            Op::Exp(a) => {
                let out = self.nodes[i].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for k in 0..g.data.len() {
                    g.data[k] += gout.data[k] * out[k];
                }
            }
            Op::Square(a) => {
                let xs = self.nodes[a.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for k in 0..g.data.len() {
                    g.data[k] += gout.data[k] * 2.0 * xs[k];
                }
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(self.nodes[i].op, Op::Minimum(..));
                let av = self.nodes[a.0].value.data.clone();
                let bv = self.nodes[b.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                ensure(grads, *b, r, c);
                for k in 0..gout.data.len() {
                    // ties route to the first operand
                    let take_a = if is_min { av[k] <= bv[k] } else { av[k] >= bv[k] };
                    if take_a {
                        grads[a.0].as_mut().unwrap().data[k] += gout.data[k];
                    } else {
                        grads[b.0].as_mut().unwrap().data[k] += gout.data[k];
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let xs = self.nodes[a.0].value.data.clone();
                let (r, c) = shape(self, *a);
                ensure(grads, *a, r, c);
                let g = grads[a.0].as_mut().unwrap();
                for k in 0..g.data.len() {
                    if xs[k] >= *lo && xs[k] <= *hi {
                        g.data[k] += gout.data[k];
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let xhat = xhat.clone();
                let inv_std = inv_std.clone();
                let gv = self.nodes[gamma.0].value.data.clone();
                let (r, c) = shape(self, *x);
                ensure(grads, *x, r, c);
                ensure(grads, *gamma, 1, c);
                ensure(grads, *beta, 1, c);
                {
                    let g = grads[beta.0].as_mut().unwrap();
                    for i in 0..r {
                        for j in 0..c {
                            g.data[j] += gout.data[i * c + j];
                        }
                    }
                }
                {
                    let g = grads[gamma.0].as_mut().unwrap();
                    for i in 0..r {
                        for j in 0..c {
                            g.data[j] += gout.data[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                let g = grads[x.0].as_mut().unwrap();
                let n = c as f64;
                for i in 0..r {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let dxh = gout.data[i * c + j] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[i * c + j];
                    }
                    mean_dxhat /= n;
                    mean_dxhat_xhat /= n;
                    for j in 0..c {
                        let dxh = gout.data[i * c + j] * gv[j];
                        g.data[i * c + j] +=
                            inv_std[i] * (dxh - mean_dxhat - xhat[i * c + j] * mean_dxhat_xhat);
                    }
                }
            }
        }
    }
}

fn matmul_arrays(a: &Array, b: &Array, transpose_a: bool, transpose_b: bool) -> Array {
    let (m, k1) = if transpose_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if transpose_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k1, k2);
    let mut out = Array::zeros(m, n);
    for i in 0..m {
        for k in 0..k1 {
            let aik = if transpose_a { a.at(k, i) } else { a.at(i, k) };
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                let bkj = if transpose_b { b.at(j, k) } else { b.at(k, j) };
                out.data[i * n + j] += aik * bkj;
            }
        }
    }
    out
}

pub fn softplus(x: f64) -> f64 {
    // stable: max(x, 0) + ln(1 + exp(-|x|))
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
