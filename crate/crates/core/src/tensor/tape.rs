use super::Tensor;
use std::cell::RefCell;

enum Rule {
    MatMul { a: Tensor, b: Tensor },
    Add { a: Tensor, b: Tensor },
    Sub { a: Tensor, b: Tensor },
    Mul { a: Tensor, b: Tensor },
    Scale { a: Tensor, factor: f64 },
    AddScalar { a: Tensor },
    ConcatCols { parts: Vec<Tensor> },
    Relu { a: Tensor },
    LeakyRelu { a: Tensor, slope: f64 },
    Sigmoid { a: Tensor },
    RowSoftmax { a: Tensor, mask: Option<Vec<bool>> },
    ReduceMean { a: Tensor, axis: usize },
    ReduceMax { a: Tensor, argmax: Vec<usize>, axis: usize },
    SquaredL2 { a: Tensor, b: Tensor },
    CrossEntropy { logits: Tensor, class: usize },
    SelectRows { a: Tensor, indices: Vec<usize> },
    Transpose { a: Tensor },
}

struct Node {
    out: Tensor,
    rule: Rule,
}

/// Records operations for reverse-mode differentiation.
///
/// Records are kept in creation order, which is a topological order of the
/// computation graph; `backward` walks them once in reverse. A tape built
/// with [`Tape::eval`] records nothing and is used for inference passes.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A non-recording tape for forward-only passes.
    pub fn eval() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn record(&self, values: Vec<f64>, rows: usize, cols: usize, rule: Rule, needs: bool) -> Tensor {
        let out = Tensor::matrix(rows, cols, values);
        if self.recording && needs {
            {
                let mut inner = out.inner.borrow_mut();
                inner.needs_grad = true;
            }
            self.nodes.borrow_mut().push(Node {
                out: out.clone(),
                rule,
            });
        }
        out
    }

    /// Matrix product: (m x k) * (k x n) -> (m x n).
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (m, ka) = a.shape();
        let (kb, n) = b.shape();
        assert_eq!(
            ka, kb,
            "matmul: incompatible shapes [{m}, {ka}] x [{kb}, {n}]"
        );
        let out = a.with_values(|av| b.with_values(|bv| matmul_raw(av, bv, m, ka, n)));
        let needs = a.needs_grad() || b.needs_grad();
        self.record(
            out,
            m,
            n,
            Rule::MatMul {
                a: a.clone(),
                b: b.clone(),
            },
            needs,
        )
    }

    /// Elementwise sum. `b` may also be a single row (1 x c), broadcast
    /// over the rows of `a` — the bias case.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (r, c) = a.shape();
        let (br, bc) = b.shape();
        let broadcast = br == 1 && r > 1;
        assert!(
            bc == c && (br == r || broadcast),
            "add: incompatible shapes [{r}, {c}] + [{br}, {bc}]"
        );
        let out = a.with_values(|av| {
            b.with_values(|bv| {
                let mut out = av.to_vec();
                if broadcast {
                    for i in 0..r {
                        for j in 0..c {
                            out[i * c + j] += bv[j];
                        }
                    }
                } else {
                    for (o, x) in out.iter_mut().zip(bv) {
                        *o += x;
                    }
                }
                out
            })
        });
        let needs = a.needs_grad() || b.needs_grad();
        self.record(
            out,
            r,
            c,
            Rule::Add {
                a: a.clone(),
                b: b.clone(),
            },
            needs,
        )
    }

    /// Elementwise difference of equal shapes.
    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (r, c) = a.shape();
        let (br, bc) = b.shape();
        assert!(
            br == r && bc == c,
            "sub: incompatible shapes [{r}, {c}] - [{br}, {bc}]"
        );
        let out = a.with_values(|av| {
            b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x - y).collect::<Vec<_>>())
        });
        let needs = a.needs_grad() || b.needs_grad();
        self.record(
            out,
            r,
            c,
            Rule::Sub {
                a: a.clone(),
                b: b.clone(),
            },
            needs,
        )
    }

    /// Elementwise product. `b` may also be a single column (r x 1),
    /// broadcast over the columns of `a` — the gating case.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (r, c) = a.shape();
        let (br, bc) = b.shape();
        let broadcast = bc == 1 && c > 1;
        assert!(
            br == r && (bc == c || broadcast),
            "mul: incompatible shapes [{r}, {c}] * [{br}, {bc}]"
        );
        let out = a.with_values(|av| {
            b.with_values(|bv| {
                let mut out = av.to_vec();
                if broadcast {
                    for i in 0..r {
                        for j in 0..c {
                            out[i * c + j] *= bv[i];
                        }
                    }
                } else {
                    for (o, y) in out.iter_mut().zip(bv) {
                        *o *= y;
                    }
                }
                out
            })
        });
        let needs = a.needs_grad() || b.needs_grad();
        self.record(
            out,
            r,
            c,
            Rule::Mul {
                a: a.clone(),
                b: b.clone(),
            },
            needs,
        )
    }

    pub fn scale(&self, a: &Tensor, factor: f64) -> Tensor {
        let (r, c) = a.shape();
        let out = a.with_values(|av| av.iter().map(|x| x * factor).collect::<Vec<_>>());
        let needs = a.needs_grad();
        self.record(out, r, c, Rule::Scale { a: a.clone(), factor }, needs)
    }

    pub fn add_scalar(&self, a: &Tensor, value: f64) -> Tensor {
        let (r, c) = a.shape();
        let out = a.with_values(|av| av.iter().map(|x| x + value).collect::<Vec<_>>());
        let needs = a.needs_grad();
        self.record(out, r, c, Rule::AddScalar { a: a.clone() }, needs)
    }

    /// Concatenate along the column axis; all parts share a row count.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat: no operands");
        let r = parts[0].rows();
        let mut total = 0;
        for p in parts {
            let (pr, pc) = p.shape();
            assert_eq!(
                pr, r,
                "concat: incompatible shapes [{r}, _] vs [{pr}, {pc}]"
            );
            total += pc;
        }
        let mut out = vec![0.0; r * total];
        let mut col0 = 0;
        for p in parts {
            let pc = p.cols();
            p.with_values(|pv| {
                for i in 0..r {
                    out[i * total + col0..i * total + col0 + pc]
                        .copy_from_slice(&pv[i * pc..(i + 1) * pc]);
                }
            });
            col0 += pc;
        }
        let needs = parts.iter().any(|p| p.needs_grad());
        self.record(
            out,
            r,
            total,
            Rule::ConcatCols {
                parts: parts.iter().map(|p| (*p).clone()).collect(),
            },
            needs,
        )
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        let (r, c) = a.shape();
        let out = a.with_values(|av| av.iter().map(|x| x.max(0.0)).collect::<Vec<_>>());
        let needs = a.needs_grad();
        self.record(out, r, c, Rule::Relu { a: a.clone() }, needs)
    }

    pub fn leaky_relu(&self, a: &Tensor, slope: f64) -> Tensor {
        let (r, c) = a.shape();
        let out = a.with_values(|av| {
            av.iter()
                .map(|&x| if x > 0.0 { x } else { slope * x })
                .collect::<Vec<_>>()
        });
        let needs = a.needs_grad();
        self.record(out, r, c, Rule::LeakyRelu { a: a.clone(), slope }, needs)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        let (r, c) = a.shape();
        let out = a.with_values(|av| {
            av.iter()
                .map(|&x| 1.0 / (1.0 + (-x).exp()))
                .collect::<Vec<_>>()
        });
        let needs = a.needs_grad();
        self.record(out, r, c, Rule::Sigmoid { a: a.clone() }, needs)
    }

    /// Softmax over each row. With a mask, only unmasked (true) entries
    /// participate in the normalization; masked entries output 0. A fully
    /// masked row outputs all zeros.
    pub fn row_softmax(&self, a: &Tensor, mask: Option<&[bool]>) -> Tensor {
        let (r, c) = a.shape();
        if let Some(m) = mask {
            assert_eq!(
                m.len(),
                r * c,
                "row_softmax: mask length {} does not match shape [{r}, {c}]",
                m.len()
            );
        }
        let out = a.with_values(|av| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                let row = &av[i * c..(i + 1) * c];
                let live = |j: usize| mask.map_or(true, |m| m[i * c + j]);
                let mut max = f64::NEG_INFINITY;
                for (j, &x) in row.iter().enumerate() {
                    if live(j) && x > max {
                        max = x;
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue; // fully masked row
                }
                let mut denom = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    if live(j) {
                        let e = (x - max).exp();
                        out[i * c + j] = e;
                        denom += e;
                    }
                }
                for j in 0..c {
                    out[i * c + j] /= denom;
                }
            }
            out
        });
        let needs = a.needs_grad();
        self.record(
            out,
            r,
            c,
            Rule::RowSoftmax {
                a: a.clone(),
                mask: mask.map(|m| m.to_vec()),
            },
            needs,
        )
    }

    /// Mean along an axis: axis 0 collapses rows to a 1 x c result, axis 1
    /// collapses columns to r x 1.
    pub fn reduce_mean(&self, a: &Tensor, axis: usize) -> Tensor {
        let (r, c) = a.shape();
        assert!(axis < 2, "reduce_mean: axis {axis} out of range");
        let (out, or, oc) = a.with_values(|av| {
            if axis == 0 {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += av[i * c + j];
                    }
                }
                out.iter_mut().for_each(|x| *x /= r as f64);
                (out, 1, c)
            } else {
                let mut out = vec![0.0; r];
                for i in 0..r {
                    out[i] = av[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64;
                }
                (out, r, 1)
            }
        });
        let needs = a.needs_grad();
        self.record(out, or, oc, Rule::ReduceMean { a: a.clone(), axis }, needs)
    }

    /// Max along an axis, with gradient routed to the first maximal entry
    /// of each slice (ties break toward the lowest index).
    pub fn reduce_max(&self, a: &Tensor, axis: usize) -> Tensor {
        let (r, c) = a.shape();
        assert!(axis < 2, "reduce_max: axis {axis} out of range");
        let (out, argmax, or, oc) = a.with_values(|av| {
            if axis == 0 {
                let mut out = vec![f64::NEG_INFINITY; c];
                let mut arg = vec![0usize; c];
                for j in 0..c {
                    for i in 0..r {
                        if av[i * c + j] > out[j] {
                            out[j] = av[i * c + j];
                            arg[j] = i;
                        }
                    }
                }
                (out, arg, 1, c)
            } else {
                let mut out = vec![f64::NEG_INFINITY; r];
                let mut arg = vec![0usize; r];
                for i in 0..r {
                    for j in 0..c {
                        if av[i * c + j] > out[i] {
                            out[i] = av[i * c + j];
                            arg[i] = j;
                        }
                    }
                }
                (out, arg, r, 1)
            }
        });
        let needs = a.needs_grad();
        self.record(
            out,
            or,
            oc,
            Rule::ReduceMax {
                a: a.clone(),
                argmax,
                axis,
            },
            needs,
        )
    }

    /// Sum of squared differences over all entries; scalar output.
    pub fn squared_l2_distance(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (r, c) = a.shape();
        let (br, bc) = b.shape();
        assert!(
            r == br && c == bc,
            "squared_l2_distance: incompatible shapes [{r}, {c}] vs [{br}, {bc}]"
        );
        let out = a.with_values(|av| {
            b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        });
        let needs = a.needs_grad() || b.needs_grad();
        self.record(
            vec![out],
            1,
            1,
            Rule::SquaredL2 {
                a: a.clone(),
                b: b.clone(),
            },
            needs,
        )
    }

    /// Cross-entropy of a single logit row against the true class:
    /// -log softmax(logits)[class]. Numerically stable via log-sum-exp.
    pub fn cross_entropy(&self, logits: &Tensor, class: usize) -> Tensor {
        let (r, c) = logits.shape();
        assert_eq!(r, 1, "cross_entropy: logits must be a single row, got [{r}, {c}]");
        assert!(
            class < c,
            "cross_entropy: class {class} out of range for {c} logits"
        );
        let out = logits.with_values(|lv| {
            let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lv.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            lse - lv[class]
        });
        let needs = logits.needs_grad();
        self.record(
            vec![out],
            1,
            1,
            Rule::CrossEntropy {
                logits: logits.clone(),
                class,
            },
            needs,
        )
    }

    /// Gather rows by index; indices may repeat (an embedding lookup).
    /// Gradients scatter-add back into the source rows.
    pub fn select_rows(&self, a: &Tensor, indices: &[usize]) -> Tensor {
        let (r, c) = a.shape();
        assert!(!indices.is_empty(), "select_rows: no indices");
        for &i in indices {
            assert!(
                i < r,
                "select_rows: index {i} out of range for [{r}, {c}]"
            );
        }
        let out = a.with_values(|av| {
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                out.extend_from_slice(&av[i * c..(i + 1) * c]);
            }
            out
        });
        let needs = a.needs_grad();
        self.record(
            out,
            indices.len(),
            c,
            Rule::SelectRows {
                a: a.clone(),
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    pub fn transpose(&self, a: &Tensor) -> Tensor {
        let (r, c) = a.shape();
        let out = a.with_values(|av| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = av[i * c + j];
                }
            }
            out
        });
        let needs = a.needs_grad();
        self.record(out, c, r, Rule::Transpose { a: a.clone() }, needs)
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// into every tensor on a path from a parameter to the loss; parameters
    /// keep theirs until the optimizer consumes them.
    pub fn backward(&self, loss: &Tensor) {
        let (r, c) = loss.shape();
        assert!(
            r == 1 && c == 1,
            "backward: loss must be scalar, got shape [{r}, {c}]"
        );
        loss.seed_grad_one();
        let nodes = self.nodes.borrow();
        for node in nodes.iter().rev() {
            // Node outputs are never parameters, so their grads are consumed
            // here; all consumers of an output appear later on the tape.
            let dout = match node.out.take_grad() {
                Some(g) => g,
                None => continue, // not on a path to the loss
            };
            propagate(&node.rule, &node.out, &dout);
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn propagate(rule: &Rule, out: &Tensor, dout: &[f64]) {
    match rule {
        Rule::MatMul { a, b } => {
            let (m, k) = a.shape();
            let n = b.cols();
            if a.needs_grad() {
                // dA = dC * B^T
                let da = b.with_values(|bv| {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += dout[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    da
                });
                a.accumulate_grad(&da);
            }
            if b.needs_grad() {
                // dB = A^T * dC
                let db = a.with_values(|av| {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * dout[i * n + j];
                            }
                        }
                    }
                    db
                });
                b.accumulate_grad(&db);
            }
        }
        Rule::Add { a, b } => {
            let (r, c) = a.shape();
            if a.needs_grad() {
                a.accumulate_grad(dout);
            }
            if b.needs_grad() {
                if b.rows() == 1 && r > 1 {
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += dout[i * c + j];
                        }
                    }
                    b.accumulate_grad(&db);
                } else {
                    b.accumulate_grad(dout);
                }
            }
        }
        Rule::Sub { a, b } => {
            if a.needs_grad() {
                a.accumulate_grad(dout);
            }
            if b.needs_grad() {
                let neg: Vec<f64> = dout.iter().map(|g| -g).collect();
                b.accumulate_grad(&neg);
            }
        }
        Rule::Mul { a, b } => {
            let (r, c) = a.shape();
            let broadcast = b.cols() == 1 && c > 1;
            if a.needs_grad() {
                let da = b.with_values(|bv| {
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            let bvv = if broadcast { bv[i] } else { bv[i * c + j] };
                            da[i * c + j] = dout[i * c + j] * bvv;
                        }
                    }
                    da
                });
                a.accumulate_grad(&da);
            }
            if b.needs_grad() {
                let db = a.with_values(|av| {
                    if broadcast {
                        let mut db = vec![0.0; r];
                        for i in 0..r {
                            for j in 0..c {
                                db[i] += dout[i * c + j] * av[i * c + j];
                            }
                        }
                        db
                    } else {
                        dout.iter().zip(av).map(|(g, x)| g * x).collect()
                    }
                });
                b.accumulate_grad(&db);
            }
        }
        Rule::Scale { a, factor } => {
            if a.needs_grad() {
                let da: Vec<f64> = dout.iter().map(|g| g * factor).collect();
                a.accumulate_grad(&da);
            }
        }
        Rule::AddScalar { a } => {
            if a.needs_grad() {
                a.accumulate_grad(dout);
            }
        }
        Rule::ConcatCols { parts } => {
            let r = parts[0].rows();
            let total: usize = parts.iter().map(|p| p.cols()).sum();
            let mut col0 = 0;
            for p in parts {
                let pc = p.cols();
                if p.needs_grad() {
                    let mut dp = vec![0.0; r * pc];
                    for i in 0..r {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&dout[i * total + col0..i * total + col0 + pc]);
                    }
                    p.accumulate_grad(&dp);
                }
                col0 += pc;
            }
        }
        Rule::Relu { a } => {
            if a.needs_grad() {
                let da = a.with_values(|av| {
                    av.iter()
                        .zip(dout)
                        .map(|(&x, g)| if x > 0.0 { *g } else { 0.0 })
                        .collect::<Vec<_>>()
                });
                a.accumulate_grad(&da);
            }
        }
        Rule::LeakyRelu { a, slope } => {
            if a.needs_grad() {
                let da = a.with_values(|av| {
                    av.iter()
                        .zip(dout)
                        .map(|(&x, g)| if x > 0.0 { *g } else { slope * g })
                        .collect::<Vec<_>>()
                });
                a.accumulate_grad(&da);
            }
        }
        Rule::Sigmoid { a } => {
            if a.needs_grad() {
                let da = out.with_values(|s| {
                    s.iter()
                        .zip(dout)
                        .map(|(&s, g)| g * s * (1.0 - s))
                        .collect::<Vec<_>>()
                });
                a.accumulate_grad(&da);
            }
        }
        Rule::RowSoftmax { a, mask } => {
            if a.needs_grad() {
                let (r, c) = a.shape();
                let da = out.with_values(|s| {
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += dout[i * c + j] * s[i * c + j];
                        }
                        for j in 0..c {
                            let live = mask.as_ref().map_or(true, |m| m[i * c + j]);
                            if live {
                                da[i * c + j] = s[i * c + j] * (dout[i * c + j] - dot);
                            }
                        }
                    }
                    da
                });
                a.accumulate_grad(&da);
            }
        }
        Rule::ReduceMean { a, axis } => {
            if a.needs_grad() {
                let (r, c) = a.shape();
                let mut da = vec![0.0; r * c];
                if *axis == 0 {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = dout[j] / r as f64;
                        }
                    }
                } else {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = dout[i] / c as f64;
                        }
                    }
                }
                a.accumulate_grad(&da);
            }
        }
        Rule::ReduceMax { a, argmax, axis } => {
            if a.needs_grad() {
                let (r, c) = a.shape();
                let mut da = vec![0.0; r * c];
                if *axis == 0 {
                    for (j, &i) in argmax.iter().enumerate() {
                        da[i * c + j] = dout[j];
                    }
                } else {
                    for (i, &j) in argmax.iter().enumerate() {
                        da[i * c + j] = dout[i];
                    }
                }
                a.accumulate_grad(&da);
            }
        }
        Rule::SquaredL2 { a, b } => {
            let g = dout[0];
            let diff: Vec<f64> =
                a.with_values(|av| b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x - y).collect()));
            if a.needs_grad() {
                let da: Vec<f64> = diff.iter().map(|d| 2.0 * d * g).collect();
                a.accumulate_grad(&da);
            }
            if b.needs_grad() {
                let db: Vec<f64> = diff.iter().map(|d| -2.0 * d * g).collect();
                b.accumulate_grad(&db);
            }
        }
        Rule::CrossEntropy { logits, class } => {
            if logits.needs_grad() {
                let g = dout[0];
                let da = logits.with_values(|lv| {
                    let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = lv.iter().map(|x| (x - max).exp()).sum();
                    lv.iter()
                        .enumerate()
                        .map(|(j, &x)| {
                            let p = (x - max).exp() / denom;
                            g * (p - if j == *class { 1.0 } else { 0.0 })
                        })
                        .collect::<Vec<_>>()
                });
                logits.accumulate_grad(&da);
            }
        }
        Rule::SelectRows { a, indices } => {
            if a.needs_grad() {
                let (r, c) = a.shape();
                let mut da = vec![0.0; r * c];
                for (pos, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += dout[pos * c + j];
                    }
                }
                a.accumulate_grad(&da);
            }
        }
        Rule::Transpose { a } => {
            if a.needs_grad() {
                let (r, c) = a.shape();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = dout[j * r + i];
                    }
                }
                a.accumulate_grad(&da);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matmul_small_case() {
        let tape = Tape::eval();
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = tape.matmul(&a, &b);
        assert_eq!(c.to_vec(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    #[should_panic(expected = "matmul: incompatible shapes [2, 3] x [2, 2]")]
    fn matmul_shape_mismatch_names_shapes() {
        let tape = Tape::eval();
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 2);
        let _ = tape.matmul(&a, &b);
    }

    #[test]
    fn row_softmax_symmetry() {
        let tape = Tape::eval();
        let x = Tensor::vector(vec![0.0, 0.0]);
        let s = tape.row_softmax(&x, None);
        assert_eq!(s.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn row_softmax_rows_sum_to_one_with_mask() {
        let tape = Tape::eval();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let mask = vec![true, false, true, true, true, true];
        let s = tape.row_softmax(&x, Some(&mask));
        let v = s.to_vec();
        assert_close(v[0] + v[2], 1.0, 1e-12);
        assert_eq!(v[1], 0.0);
        assert_close(v[3] + v[4] + v[5], 1.0, 1e-12);
        assert!(v.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn row_softmax_fully_masked_row_is_zero() {
        let tape = Tape::eval();
        let x = Tensor::matrix(1, 2, vec![3.0, 4.0]);
        let s = tape.row_softmax(&x, Some(&[false, false]));
        assert_eq!(s.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn squared_l2_identity_is_zero() {
        let tape = Tape::eval();
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(tape.squared_l2_distance(&a, &b).item(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let tape = Tape::eval();
        let logits = Tensor::vector(vec![0.0, 0.0]);
        let l = tape.cross_entropy(&logits, 0);
        assert_close(l.item(), std::f64::consts::LN_2, 1e-12);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x ∘ x) => dloss/dx = 2x
        let tape = Tape::new();
        let x = Tensor::param(1, 3, vec![1.0, 2.0, 3.0]);
        let sq = tape.mul(&x, &x);
        let ones = Tensor::matrix(3, 1, vec![1.0; 3]);
        let loss = tape.matmul(&sq, &ones);
        tape.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_of_squared_distance() {
        let tape = Tape::new();
        let a = Tensor::param(1, 2, vec![1.0, 0.0]);
        let b = Tensor::vector(vec![0.0, 0.0]);
        let d = tape.squared_l2_distance(&a, &b);
        tape.backward(&d);
        assert_eq!(a.grad().unwrap(), vec![2.0, 0.0]);
        assert!(b.grad().is_none(), "constants receive no gradient");
    }

    #[test]
    fn backward_accumulates_across_two_paths() {
        // z = a*x + b*x uses x twice; dz/dx must be a + b.
        let tape = Tape::new();
        let x = Tensor::param(1, 1, vec![0.7]);
        let a = Tensor::scalar(3.0);
        let b = Tensor::scalar(5.0);
        let p1 = tape.mul(&a, &x);
        let p2 = tape.mul(&b, &x);
        let z = tape.add(&p1, &p2);
        tape.backward(&z);
        assert_eq!(x.grad().unwrap(), vec![8.0]);
    }

    #[test]
    #[should_panic(expected = "backward: loss must be scalar")]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = Tensor::param(1, 2, vec![1.0, 2.0]);
        let y = tape.relu(&x);
        tape.backward(&y);
    }

    #[test]
    fn eval_tape_records_nothing() {
        let tape = Tape::eval();
        let x = Tensor::param(1, 2, vec![1.0, -1.0]);
        let _ = tape.relu(&x);
        assert!(tape.is_empty());
    }

    #[test]
    fn constant_only_ops_are_not_recorded() {
        let tape = Tape::new();
        let x = Tensor::vector(vec![1.0, -1.0]);
        let _ = tape.relu(&x);
        assert!(tape.is_empty());
    }

    #[test]
    fn select_rows_accumulates_repeats() {
        let tape = Tape::new();
        let table = Tensor::param(3, 2, vec![0.0; 6]);
        let picked = tape.select_rows(&table, &[1, 1, 2]);
        let flat = tape.reduce_mean(&picked, 0); // 1x2, each entry mean of 3 rows
        let ones = Tensor::matrix(2, 1, vec![1.0, 1.0]);
        let loss = tape.matmul(&flat, &ones);
        tape.backward(&loss);
        let g = table.grad().unwrap();
        // row 1 used twice, row 2 once, row 0 never
        assert_eq!(g[0], 0.0);
        assert_close(g[2], 2.0 / 3.0, 1e-12);
        assert_close(g[4], 1.0 / 3.0, 1e-12);
    }

    #[test]
    fn reduce_max_routes_to_first_maximum() {
        let tape = Tape::new();
        let x = Tensor::param(2, 2, vec![1.0, 5.0, 5.0, 0.0]);
        let m = tape.reduce_max(&x, 0); // column max: [5 (row1), 5 (row0)]
        assert_eq!(m.to_vec(), vec![5.0, 5.0]);
        let ones = Tensor::matrix(2, 1, vec![1.0, 1.0]);
        let loss = tape.matmul(&m, &ones);
        tape.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn transpose_roundtrip_values() {
        let tape = Tape::eval();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = tape.transpose(&x);
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = Tensor::param(2, 2, vec![0.3, -0.7, 1.9, 0.2]);
            let w = Tensor::param(2, 2, vec![0.11, -0.5, 0.77, 0.01]);
            let h = tape.relu(&tape.matmul(&x, &w));
            let s = tape.row_softmax(&h, None);
            s.to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "bit-identical forward values");
    }
}
