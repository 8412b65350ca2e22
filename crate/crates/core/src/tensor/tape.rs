use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Square,
    Relu,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Matmul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Concat(Var, Var),
    Softmax(Var),
    /// Saves the probability vector for the backward pass.
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Pick(Var, usize),
    AddScalar(Var),
    Scale(Var, f64),
    Sum(Var),
    AddN(Vec<Var>),
    EmbeddingMean {
        table: Var,
        ids: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of a forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn elementwise_check(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
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

    /// Drops every recorded node. Parameter values are untouched.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_vars.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a parameter. Repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&var) = self.param_vars.get(&id) {
            return var;
        }
        let var = self.push(store.get(id).value.clone(), Op::Param(id));
        self.param_vars.insert(id, var);
        var
    }

    /// `[m×k]·[k×n] → [m×n]`, or `[m×k]·[k] → [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        };
        if ta.rank() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let out = match tb.shape() {
            &[kb] if kb == k => {
                let mut out = vec![0.0; m];
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &ta.data()[i * k..(i + 1) * k];
                    *o = row.iter().zip(tb.data()).map(|(x, y)| x * y).sum();
                }
                Tensor::vector(out)
            }
            &[kb, n] if kb == k => {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = ta.data()[i * k + p];
                        let b_row = &tb.data()[p * n..(p + 1) * n];
                        for (o, &b_pj) in out[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                            *o += a_ip * b_pj;
                        }
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            _ => return Err(mismatch()),
        };
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        };
        elementwise_check(name, ta, tb)?;
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Binary(op, a, b)))
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Var {
        let tx = self.value(x);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Square => |v| v * v,
            UnaryOp::Relu => |v| v.max(0.0),
        };
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|&v| f(v)).collect(),
        };
        self.push(out, Op::Unary(op, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Square, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        for t in [ta, tb] {
            if !t.is_vector() {
                return Err(TensorError::NotVector {
                    op: "concat",
                    shape: t.shape().to_vec(),
                });
            }
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        Ok(self.push(Tensor::vector(data), Op::Concat(a, b)))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var, TensorError> {
        let t = self.value(logits);
        if !t.is_vector() {
            return Err(TensorError::NotVector {
                op: "softmax",
                shape: t.shape().to_vec(),
            });
        }
        let out = Tensor::vector(softmax(t.data()));
        Ok(self.push(out, Op::Softmax(logits)))
    }

    /// Returns the scalar loss `-ln softmax(logits)[label]` together with the
    /// probability vector.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        label: usize,
    ) -> Result<(Var, Tensor), TensorError> {
        let t = self.value(logits);
        if !t.is_vector() {
            return Err(TensorError::NotVector {
                op: "softmax_cross_entropy",
                shape: t.shape().to_vec(),
            });
        }
        if label >= t.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: label,
                len: t.len(),
            });
        }
        let z = t.data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        let loss = log_sum - z[label];
        let probs = softmax(z);
        let var = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs: probs.clone(),
            },
        );
        Ok((var, Tensor::vector(probs)))
    }

    /// Scalar coordinate `x[index]` of a vector.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if !t.is_vector() {
            return Err(TensorError::NotVector {
                op: "pick",
                shape: t.shape().to_vec(),
            });
        }
        if index >= t.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "pick",
                index,
                len: t.len(),
            });
        }
        let v = t.data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick(x, index)))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v + c).collect(),
        };
        self.push(out, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v * c).collect(),
        };
        self.push(out, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Elementwise sum of equally shaped values.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("add_n of no inputs".into()))?;
        let mut acc = self.value(*first).clone();
        for &x in &xs[1..] {
            let t = self.value(x);
            elementwise_check("add_n", &acc, t)?;
            acc.add_assign(t);
        }
        Ok(self.push(acc, Op::AddN(xs.to_vec())))
    }

    /// Mean of the rows `table[ids[t]]`.
    pub fn embedding_mean(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(TensorError::InvalidArgument(format!(
                "embedding table must be a matrix, got {:?}",
                t.shape()
            )));
        }
        if ids.is_empty() {
            return Err(TensorError::InvalidArgument(
                "embedding mean over zero positions".into(),
            ));
        }
        let (rows, dim) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; dim];
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding_mean",
                    index: id,
                    len: rows,
                });
            }
            for (o, v) in out.iter_mut().zip(&t.data()[id * dim..(id + 1) * dim]) {
                *o += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(
            Tensor::vector(out),
            Op::EmbeddingMean {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradients reaching parameter leaves
    /// are added into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients, TensorError> {
        let seed = self.value(loss);
        if seed.len() != 1 {
            return Err(TensorError::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor {
            shape: seed.shape().to_vec(),
            data: vec![1.0],
        });
        let mut visited = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            visited.push(idx);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if id.0 >= store.len() || store.get(*id).grad.shape() != g.shape() {
                        return Err(TensorError::UnknownParam(format!("#{}", id.0)));
                    }
                    store.get_mut(*id).grad.add_assign(&g);
                }
                Op::Matmul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let mut ga = ta.zeros_like();
                    let mut gb = tb.zeros_like();
                    if tb.is_vector() {
                        for i in 0..m {
                            let gi = g.data()[i];
                            for p in 0..k {
                                ga.data[i * k + p] += gi * tb.data()[p];
                                gb.data[p] += ta.data()[i * k + p] * gi;
                            }
                        }
                    } else {
                        let n = tb.shape()[1];
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    let gij = g.data()[i * n + j];
                                    acc += gij * tb.data()[p * n + j];
                                    gb.data[p * n + j] += ta.data()[i * k + p] * gij;
                                }
                                ga.data[i * k + p] += acc;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Binary(op, a, b) => {
                    let (ga, gb) = match op {
                        BinaryOp::Add => (g.clone(), g),
                        BinaryOp::Sub => {
                            let neg = map(&g, |v| -v);
                            (g, neg)
                        }
                        BinaryOp::Mul => {
                            let (ta, tb) = (self.value(*a), self.value(*b));
                            (zip(&g, tb, |gv, bv| gv * bv), zip(&g, ta, |gv, av| gv * av))
                        }
                    };
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Unary(op, x) => {
                    let gx = match op {
                        UnaryOp::Sigmoid => zip(&g, &node.value, |gv, y| gv * y * (1.0 - y)),
                        UnaryOp::Tanh => zip(&g, &node.value, |gv, y| gv * (1.0 - y * y)),
                        UnaryOp::Square => zip(&g, self.value(*x), |gv, xv| 2.0 * xv * gv),
                        UnaryOp::Relu => {
                            zip(&g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                        }
                    };
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat(a, b) => {
                    let split = self.value(*a).len();
                    let (left, right) = g.data().split_at(split);
                    accumulate(&mut grads, *a, Tensor::vector(left.to_vec()));
                    accumulate(&mut grads, *b, Tensor::vector(right.to_vec()));
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let dot: f64 = g.data().iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = y
                        .iter()
                        .zip(g.data())
                        .map(|(yi, gi)| yi * (gi - dot))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::vector(gx));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let s = g.data()[0];
                    let gx = probs
                        .iter()
                        .enumerate()
                        .map(|(c, p)| s * (p - if c == *label { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut grads, *logits, Tensor::vector(gx));
                }
                Op::Pick(x, index) => {
                    let mut gx = self.value(*x).zeros_like();
                    gx.data[*index] = g.data()[0];
                    accumulate(&mut grads, *x, gx);
                }
                Op::AddScalar(x) => accumulate(&mut grads, *x, g),
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, map(&g, |v| v * c));
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    let tx = self.value(*x);
                    let gx = Tensor {
                        shape: tx.shape().to_vec(),
                        data: vec![s; tx.len()],
                    };
                    accumulate(&mut grads, *x, gx);
                }
                Op::AddN(xs) => {
                    for &x in xs {
                        accumulate(&mut grads, x, g.clone());
                    }
                }
                Op::EmbeddingMean { table, ids } => {
                    let tt = self.value(*table);
                    let dim = tt.shape()[1];
                    let inv = 1.0 / ids.len() as f64;
                    let mut gt = tt.zeros_like();
                    for &id in ids {
                        for (o, gv) in gt.data[id * dim..(id + 1) * dim].iter_mut().zip(g.data()) {
                            *o += gv * inv;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
            }
        }
        Ok(Gradients { grads, visited })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    /// Checks d(sum(w ⊙ out))/d(input) for one input slot against central
    /// differences, with a fixed random weighting `w` to mix coordinates.
    fn check_op(
        shapes: &[Vec<usize>],
        build: impl Fn(&mut Tape, &[Var]) -> Var,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|s| Tensor::new(s.clone(), random(&mut rng, s.iter().product())).unwrap())
            .collect();
        let objective = |inputs: &[Tensor], tape: &mut Tape| -> (Var, Vec<Var>) {
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = build(tape, &vars);
            let n = tape.value(out).len();
            let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let w = tape.constant(Tensor::new(tape.value(out).shape().to_vec(), random(&mut wrng, n)).unwrap());
            let prod = tape.mul(out, w).unwrap();
            (tape.sum(prod), vars)
        };
        let mut tape = Tape::new();
        let (loss, vars) = objective(&inputs, &mut tape);
        let grads = tape.backward(loss, &mut ParamStore::new()).unwrap();
        let mut worst: f64 = 0.0;
        for (slot, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[slot])
                .cloned()
                .unwrap_or_else(|| input.zeros_like());
            let numeric = finite_difference(
                |x| {
                    let mut perturbed = inputs.clone();
                    perturbed[slot] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
                    let mut t = Tape::new();
                    let (l, _) = objective(&perturbed, &mut t);
                    t.value(l).item().unwrap()
                },
                input.data(),
                1e-5,
            );
            worst = worst.max(max_rel(analytic.data(), &numeric));
        }
        worst
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let col = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let out = tape.matmul(eye, col).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 4.0]);
        assert_eq!(tape.value(out).shape(), &[2, 1]);

        let row = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let out = tape.matmul(row, col).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(
            tape.matmul(a, b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        for seed in 0..5 {
            let err = check_op(&[vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap(), seed);
            assert!(err < 1e-4, "seed {seed}: {err}");
            let err = check_op(&[vec![3, 4], vec![4]], |t, v| t.matmul(v[0], v[1]).unwrap(), seed);
            assert!(err < 1e-4, "matvec seed {seed}: {err}");
        }
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(vec![4]));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5; 4]);

        let a = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let zero = tape.constant(Tensor::zeros(vec![3]));
        let m = tape.mul(a, zero).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0, 0.0, 0.0]);

        let short = tape.constant(Tensor::zeros(vec![2]));
        assert!(tape.add(a, short).is_err());
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(x);
        let loss = tape.sum(s);
        let grads = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25]);
        let numeric = finite_difference(|v| 1.0 / (1.0 + (-v[0]).exp()), &[0.0], 1e-5);
        assert!((numeric[0] - 0.25).abs() < 1e-10);
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        for seed in 0..5 {
            let s = vec![vec![6], vec![6]];
            assert!(check_op(&s, |t, v| t.add(v[0], v[1]).unwrap(), seed) < 1e-4);
            assert!(check_op(&s, |t, v| t.sub(v[0], v[1]).unwrap(), seed) < 1e-4);
            assert!(check_op(&s, |t, v| t.mul(v[0], v[1]).unwrap(), seed) < 1e-4);
            assert!(check_op(&s[..1], |t, v| t.sigmoid(v[0]), seed) < 1e-4);
            assert!(check_op(&s[..1], |t, v| t.tanh(v[0]), seed) < 1e-4);
            assert!(check_op(&s[..1], |t, v| t.square(v[0]), seed) < 1e-4);
            assert!(check_op(&s[..1], |t, v| t.scale(v[0], -1.7), seed) < 1e-4);
            assert!(check_op(&s[..1], |t, v| t.add_scalar(v[0], 0.3), seed) < 1e-4);
            assert!(check_op(&s, |t, v| t.add_n(&[v[0], v[1], v[0]]).unwrap(), seed) < 1e-4);
        }
    }

    #[test]
    fn concat_values_and_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);

        let empty = tape.constant(Tensor::vector(vec![]));
        let five = tape.constant(Tensor::vector(vec![5.0]));
        let d = tape.concat(empty, five).unwrap();
        assert_eq!(tape.value(d).data(), &[5.0]);

        let loss = tape.sum(c);
        let grads = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0]);

        let m = tape.constant(Tensor::zeros(vec![1, 1]));
        assert!(matches!(
            tape.concat(m, a),
            Err(TensorError::NotVector { .. })
        ));
        assert!(check_op(&[vec![3], vec![2]], |t, v| t.concat(v[0], v[1]).unwrap(), 7) < 1e-4);
    }

    #[test]
    fn cross_entropy_cases() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let (loss, probs) = tape.softmax_cross_entropy(z, 0).unwrap();
        assert!((tape.value(loss).item().unwrap() - 3f64.ln()).abs() < 1e-12);
        for p in probs.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }

        let z = tape.constant(Tensor::vector(vec![10.0, -10.0]));
        let (loss, probs) = tape.softmax_cross_entropy(z, 0).unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-8);
        assert!(probs.data()[0] > 1.0 - 1e-8);

        assert!(matches!(
            tape.softmax_cross_entropy(z, 2),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn cross_entropy_and_softmax_gradients() {
        for seed in 0..5 {
            let err = check_op(
                &[vec![5]],
                |t, v| t.softmax_cross_entropy(v[0], (seed % 5) as usize).unwrap().0,
                seed,
            );
            assert!(err < 1e-4, "ce seed {seed}: {err}");
            let err = check_op(&[vec![5]], |t, v| t.softmax(v[0]).unwrap(), seed);
            assert!(err < 1e-4, "softmax seed {seed}: {err}");
            let err = check_op(&[vec![5]], |t, v| t.pick(v[0], 3).unwrap(), seed);
            assert!(err < 1e-4);
        }
    }

    #[test]
    fn embedding_mean_gradient() {
        let err = check_op(
            &[vec![5, 3]],
            |t, v| t.embedding_mean(v[0], &[0, 3, 3, 1]).unwrap(),
            11,
        );
        assert!(err < 1e-4);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(x);
        let loss = tape.sum(r);
        let g = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_visits_in_reverse_recording_order() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.sigmoid(a);
        let c = tape.mul(a, b).unwrap();
        let d = tape.sum(c);
        let g = tape.backward(d, &mut ParamStore::new()).unwrap();
        assert_eq!(g.visit_order(), &[3, 2, 1, 0]);
    }

    #[test]
    fn param_gradients_accumulate_and_clear_keeps_values() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", crate::tensor::ParamGroup::Head, Tensor::vector(vec![2.0]))
            .unwrap();
        let mut tape = Tape::new();
        for _ in 0..2 {
            tape.clear();
            let v = tape.param(&store, w);
            let sq = tape.square(v);
            let l = tape.sum(sq);
            tape.backward(l, &mut store).unwrap();
        }
        assert_eq!(store.get(w).grad.data(), &[8.0]);
        assert_eq!(store.get(w).value.data(), &[2.0]);
        store.zero_grads();
        assert_eq!(store.get(w).grad.data(), &[0.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let m = tape.constant(Tensor::matrix(3, 4, random(&mut rng, 12)).unwrap());
            let v = tape.constant(Tensor::vector(random(&mut rng, 4)));
            let z = tape.matmul(m, v).unwrap();
            let p = tape.softmax(z).unwrap();
            tape.value(p).data().to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_on_the_simplex(z in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
                let mut tape = Tape::new();
                let x = tape.constant(Tensor::vector(z));
                let p = tape.softmax(x).unwrap();
                let probs = tape.value(p).data();
                prop_assert!(probs.iter().all(|&v| v >= 0.0));
                prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}
