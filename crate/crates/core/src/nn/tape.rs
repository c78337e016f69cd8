//! Reverse-mode differentiation over a fixed set of vector ops.
//!
//! A [`Tape`] records every intermediate value of one forward pass. Calling
//! [`Tape::backward`] walks the records in reverse and returns the gradient of
//! a scalar with respect to every recorded value, including parameter leaves.

use std::collections::BTreeMap;

use super::params::{ParamId, ParamRegistry};
use super::NnError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Softmax(Var),
    SoftmaxXent { logits: Var, class: usize, probs: Vec<f64> },
    Nll { probs: Var, class: usize },
    Mix { weights: Var, items: Vec<Var> },
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Dot(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(msg: String) -> NnError {
    NnError::ShapeMismatch(msg)
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

    fn push(&mut self, value: Vec<f64>, rows: usize, op: Op) -> Var {
        self.nodes.push(Node { value, rows, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Constant leaf. Its gradient is still reported by [`Gradients::wrt`].
    pub fn input(&mut self, values: &[f64]) -> Var {
        let n = values.len();
        self.push(values.to_vec(), n, Op::Input)
    }

    /// Leaf holding a copy of a registry tensor.
    pub fn param(&mut self, params: &ParamRegistry, id: ParamId) -> Var {
        let t = params.get(id);
        self.push(t.values.clone(), t.rows(), Op::Param(id))
    }

    /// `W x` for a `rows x cols` matrix `W`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NnError> {
        let (wn, xn) = (&self.nodes[w.0], &self.nodes[x.0]);
        let rows = wn.rows;
        let cols = wn.value.len() / rows.max(1);
        if rows * cols != wn.value.len() || cols != xn.value.len() {
            return Err(shape_err(format!(
                "matvec: {}x{} matrix with vector of length {}",
                rows,
                cols,
                xn.value.len()
            )));
        }
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                wn.value[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(&xn.value)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(out, rows, Op::MatVec(w, x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.len() != bv.len() {
            return Err(shape_err(format!("add: lengths {} and {}", av.len(), bv.len())));
        }
        let out: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        let n = out.len();
        Ok(self.push(out, n, Op::Add(a, b)))
    }

    /// `W x + b`.
    pub fn linear(&mut self, w: Var, b: Var, x: Var) -> Result<Var, NnError> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Elementwise max(0, x). The derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        let n = out.len();
        self.push(out, n, Op::Relu(x))
    }

    pub fn softmax(&mut self, z: Var) -> Result<Var, NnError> {
        let out = softmax(&self.nodes[z.0].value)?;
        let n = out.len();
        Ok(self.push(out, n, Op::Softmax(z)))
    }

    /// Fused `-ln softmax(logits)[class]`, scalar.
    pub fn softmax_xent(&mut self, logits: Var, class: usize) -> Result<Var, NnError> {
        let probs = softmax(&self.nodes[logits.0].value)?;
        if class >= probs.len() {
            return Err(shape_err(format!("class {class} out of {} logits", probs.len())));
        }
        let z = &self.nodes[logits.0].value;
        // (m - z_c) + ln(1 + sum_{j != argmax} e^(z_j - m)) avoids adding and
        // then subtracting the largest logit
        let top = (0..z.len()).fold(0, |b, j| if z[j] > z[b] { j } else { b });
        let m = z[top];
        let rest: f64 = (0..z.len()).filter(|&j| j != top).map(|j| (z[j] - m).exp()).sum();
        let loss = (m - z[class]) + rest.ln_1p();
        Ok(self.push(vec![loss], 1, Op::SoftmaxXent { logits, class, probs }))
    }

    /// `-ln probs[class]` on an already normalized vector.
    pub fn nll(&mut self, probs: Var, class: usize) -> Result<Var, NnError> {
        let p = &self.nodes[probs.0].value;
        if class >= p.len() {
            return Err(shape_err(format!("class {class} out of {} probabilities", p.len())));
        }
        let loss = -p[class].ln();
        Ok(self.push(vec![loss], 1, Op::Nll { probs, class }))
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn mix(&mut self, weights: Var, items: &[Var]) -> Result<Var, NnError> {
        let w = &self.nodes[weights.0].value;
        if w.len() != items.len() || items.is_empty() {
            return Err(shape_err(format!("mix: {} weights for {} items", w.len(), items.len())));
        }
        let d = self.nodes[items[0].0].value.len();
        let mut out = vec![0.0; d];
        for (wi, it) in w.iter().zip(items) {
            let v = &self.nodes[it.0].value;
            if v.len() != d {
                return Err(shape_err(format!("mix: item lengths {} and {}", d, v.len())));
            }
            for (o, x) in out.iter_mut().zip(v) {
                *o += wi * x;
            }
        }
        Ok(self.push(out, d, Op::Mix { weights, items: items.to_vec() }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out: Vec<f64> = parts.iter().flat_map(|p| self.nodes[p.0].value.clone()).collect();
        let n = out.len();
        self.push(out, n, Op::Concat(parts.to_vec()))
    }

    pub fn mean(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        if parts.is_empty() {
            return Err(shape_err("mean of zero vectors".into()));
        }
        let d = self.nodes[parts[0].0].value.len();
        let mut out = vec![0.0; d];
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.len() != d {
                return Err(shape_err(format!("mean: lengths {} and {}", d, v.len())));
            }
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let k = parts.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        Ok(self.push(out, d, Op::Mean(parts.to_vec())))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.len() != bv.len() {
            return Err(shape_err(format!("dot: lengths {} and {}", av.len(), bv.len())));
        }
        let s = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![s], 1, Op::Dot(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|v| v * c).collect();
        let n = out.len();
        self.push(out, n, Op::Scale(a, c))
    }

    /// Elementwise product with a constant vector (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: &[f64]) -> Result<Var, NnError> {
        let av = &self.nodes[a.0].value;
        if av.len() != mask.len() {
            return Err(shape_err(format!("mul_const: lengths {} and {}", av.len(), mask.len())));
        }
        let out: Vec<f64> = av.iter().zip(mask).map(|(x, m)| x * m).collect();
        let n = out.len();
        Ok(self.push(out, n, Op::MulConst(a, mask.to_vec())))
    }

    /// Gradient of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar");
        self.backward_with(loss, &[1.0])
    }

    /// Reverse pass seeded with `upstream = d(objective)/d(out)`.
    pub fn backward_with(&self, out: Var, upstream: &[f64]) -> Gradients {
        let mut g: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        g[out.0].copy_from_slice(upstream);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if g[i].iter().all(|v| *v == 0.0) {
                continue;
            }
            let gi = std::mem::take(&mut g[i]);
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatVec(w, x) => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.len();
                    let same = w.0 == x.0;
                    let mut gw = std::mem::take(&mut g[w.0]);
                    let mut gx = if same { vec![0.0; cols] } else { std::mem::take(&mut g[x.0]) };
                    for (r, &gr) in gi.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let row = r * cols..(r + 1) * cols;
                        for (a, &xc) in gw[row.clone()].iter_mut().zip(xv) {
                            *a += gr * xc;
                        }
                        for (a, &wc) in gx.iter_mut().zip(&wv[row]) {
                            *a += gr * wc;
                        }
                    }
                    if same {
                        for (a, b) in gw.iter_mut().zip(&gx) {
                            *a += b;
                        }
                    } else {
                        g[x.0] = gx;
                    }
                    g[w.0] = gw;
                }
                Op::Add(a, b) => {
                    for (k, v) in gi.iter().enumerate() {
                        g[a.0][k] += v;
                        g[b.0][k] += v;
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    for (k, v) in gi.iter().enumerate() {
                        if xv[k] > 0.0 {
                            g[x.0][k] += v;
                        }
                    }
                }
                Op::Softmax(z) => {
                    let y = &node.value;
                    let dot: f64 = gi.iter().zip(y).map(|(a, b)| a * b).sum();
                    for k in 0..y.len() {
                        g[z.0][k] += y[k] * (gi[k] - dot);
                    }
                }
                Op::SoftmaxXent { logits, class, probs } => {
                    for k in 0..probs.len() {
                        let onehot = if k == *class { 1.0 } else { 0.0 };
                        g[logits.0][k] += gi[0] * (probs[k] - onehot);
                    }
                }
                Op::Nll { probs, class } => {
                    let p = self.nodes[probs.0].value[*class];
                    g[probs.0][*class] -= gi[0] / p;
                }
                Op::Mix { weights, items } => {
                    let w = &self.nodes[weights.0].value;
                    for (j, it) in items.iter().enumerate() {
                        let v = &self.nodes[it.0].value;
                        let dw: f64 = gi.iter().zip(v).map(|(a, b)| a * b).sum();
                        g[weights.0][j] += dw;
                        for k in 0..gi.len() {
                            g[it.0][k] += w[j] * gi[k];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        for k in 0..n {
                            g[p.0][k] += gi[off + k];
                        }
                        off += n;
                    }
                }
                Op::Mean(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    for p in parts {
                        for k in 0..gi.len() {
                            g[p.0][k] += gi[k] * inv;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = &self.nodes[b.0].value;
                    for k in 0..av.len() {
                        g[a.0][k] += gi[0] * bv[k];
                        g[b.0][k] += gi[0] * av[k];
                    }
                }
                Op::Scale(a, c) => {
                    for k in 0..gi.len() {
                        g[a.0][k] += gi[k] * c;
                    }
                }
                Op::MulConst(a, m) => {
                    for k in 0..gi.len() {
                        g[a.0][k] += gi[k] * m[k];
                    }
                }
            }
            g[i] = gi;
        }
        let mut params: BTreeMap<ParamId, Vec<usize>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = n.op {
                params.entry(id).or_default().push(i);
            }
        }
        Gradients { node_grads: g, params }
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    node_grads: Vec<Vec<f64>>,
    params: BTreeMap<ParamId, Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.node_grads[v.0]
    }

    /// Gradient for one parameter, summed over every leaf that read it.
    pub fn param(&self, id: ParamId) -> Option<Vec<f64>> {
        let leaves = self.params.get(&id)?;
        let mut out = vec![0.0; self.node_grads[leaves[0]].len()];
        for &l in leaves {
            for (o, g) in out.iter_mut().zip(&self.node_grads[l]) {
                *o += g;
            }
        }
        Some(out)
    }

    /// Adds `scale` times every parameter gradient into the registry.
    pub fn accumulate_into(&self, params: &mut ParamRegistry, scale: f64) {
        for &id in self.params.keys() {
            let g = self.param(id).expect("registered leaf");
            for (acc, v) in params.get_mut(id).grad.iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>, NnError> {
    if z.is_empty() {
        return Err(shape_err("softmax of empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteInput);
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn linear_identity_and_bias() {
        let mut reg = ParamRegistry::new();
        let w = reg.add("w", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = reg.add("b", vec![2], vec![0.0, 0.0]).unwrap();
        let b2 = reg.add("b2", vec![2], vec![0.5, -1.0]).unwrap();
        let mut t = Tape::new();
        let (wv, bv, b2v) = (t.param(&reg, w), t.param(&reg, b), t.param(&reg, b2));
        let x = t.input(&[3.0, -4.0]);
        let y = t.linear(wv, bv, x).unwrap();
        assert_eq!(t.value(y), &[3.0, -4.0]);
        let zero = t.input(&[0.0, 0.0]);
        let y = t.linear(wv, b2v, zero).unwrap();
        assert_eq!(t.value(y), &[0.5, -1.0]);
        let bad = t.input(&[1.0, 2.0, 3.0]);
        assert!(matches!(t.linear(wv, bv, bad), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn softmax_and_xent() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(softmax(&[f64::NAN]), Err(NnError::NonFiniteInput)));
        let mut t = Tape::new();
        let z = t.input(&[60.0, -60.0]);
        let l = t.softmax_xent(z, 0).unwrap();
        assert!(t.scalar(l) < 1e-40);
        let g = t.backward(l);
        assert!(g.wrt(z).iter().all(|v| v.abs() < 1e-40));
        let p = t.input(&[1.0, 0.0]);
        let l = t.nll(p, 0).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let mut t = Tape::new();
        let x = t.input(&[-1.0, 0.0, 2.0]);
        let y = t.relu(x);
        let g = t.backward_with(y, &[1.0, 1.0, 1.0]);
        assert_eq!(g.wrt(x), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shared_param_gradients_sum() {
        let mut reg = ParamRegistry::new();
        let w = reg.add("w", vec![1, 1], vec![2.0]).unwrap();
        let mut t = Tape::new();
        let x = t.input(&[3.0]);
        let w1 = t.param(&reg, w);
        let w2 = t.param(&reg, w);
        let a = t.matvec(w1, x).unwrap();
        let b = t.matvec(w2, a).unwrap(); // w^2 x
        let g = t.backward(b);
        assert_eq!(g.param(w).unwrap(), vec![2.0 * 2.0 * 3.0]);
        g.accumulate_into(&mut reg, 0.5);
        assert_eq!(reg.get(w).grad, vec![6.0]);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            z in prop::collection::vec(-30.0f64..30.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&z).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn backward_is_linear_in_upstream(
            x in prop::collection::vec(-2.0f64..2.0, 3),
            up in prop::collection::vec(-2.0f64..2.0, 3),
            k in -3.0f64..3.0,
        ) {
            let mut t = Tape::new();
            let xv = t.input(&x);
            let s = t.softmax(xv).unwrap();
            let r = t.relu(xv);
            let y = t.add(s, r).unwrap();
            let g1 = t.backward_with(y, &up).wrt(xv).to_vec();
            let scaled: Vec<f64> = up.iter().map(|u| u * k).collect();
            let g2 = t.backward_with(y, &scaled).wrt(xv).to_vec();
            for (a, b) in g1.iter().zip(&g2) {
                assert_abs_diff_eq!(a * k, *b, epsilon = 1e-12);
            }
        }
    }
}
