//! The computation tape: forward values plus one backward closure per node.
//!
//! Nodes only ever reference earlier nodes, so a single reverse sweep
//! propagates gradients. The root of [`Tape::backward`] must be a scalar.

use crate::nn::{ParamId, Params};

/// Handle to one tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Backward closure: (gradient of this node, gradients of all nodes,
/// forward values, parameter store).
type BackFn = Box<dyn Fn(&[f64], &mut [Vec<f64>], &[Vec<f64>], &mut Params)>;

/// A dynamically built computation graph.
#[derive(Default)]
pub struct Tape {
    vals: Vec<Vec<f64>>,
    backs: Vec<Option<BackFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, val: Vec<f64>, back: Option<BackFn>) -> VarId {
        self.vals.push(val);
        self.backs.push(back);
        VarId(self.vals.len() - 1)
    }

    pub fn value(&self, x: VarId) -> &[f64] {
        &self.vals[x.0]
    }

    pub fn len(&self, x: VarId) -> usize {
        self.vals[x.0].len()
    }

    pub fn node_count(&self) -> usize {
        self.vals.len()
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, v: Vec<f64>) -> VarId {
        self.push(v, None)
    }

    pub fn scalar(&mut self, v: f64) -> VarId {
        self.constant(vec![v])
    }

    pub fn zeros(&mut self, n: usize) -> VarId {
        self.constant(vec![0.0; n])
    }

    /// One row of a parameter matrix (embedding lookup).
    pub fn param_row(&mut self, ps: &Params, p: ParamId, row: usize) -> VarId {
        let e = ps.entry(p);
        assert!(row < e.rows, "row {row} out of range for {}", e.name);
        let cols = e.cols;
        let val = e.data[row * cols..(row + 1) * cols].to_vec();
        self.push(
            val,
            Some(Box::new(move |g, _grads, _vals, params| {
                let gslice = &mut params.entry_mut(p).grad[row * cols..(row + 1) * cols];
                for (gi, go) in gslice.iter_mut().zip(g) {
                    *gi += go;
                }
            })),
        )
    }

    /// `W x` for a parameter matrix and a vector node.
    pub fn matvec(&mut self, ps: &Params, w: ParamId, x: VarId) -> VarId {
        let e = ps.entry(w);
        let (rows, cols) = (e.rows, e.cols);
        assert_eq!(cols, self.len(x), "matvec shape mismatch for {}", e.name);
        let xv = &self.vals[x.0];
        let mut val = vec![0.0; rows];
        for i in 0..rows {
            let wrow = &e.data[i * cols..(i + 1) * cols];
            val[i] = wrow.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(
            val,
            Some(Box::new(move |g, grads, vals, params| {
                let xv = &vals[x.0];
                {
                    let grad = &mut params.entry_mut(w).grad;
                    for i in 0..rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let grow = &mut grad[i * cols..(i + 1) * cols];
                        for (gw, xj) in grow.iter_mut().zip(xv) {
                            *gw += gi * xj;
                        }
                    }
                }
                let data = &params.entry(w).data;
                let gx = &mut grads[x.0];
                for i in 0..rows {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let wrow = &data[i * cols..(i + 1) * cols];
                    for (gxj, wij) in gx.iter_mut().zip(wrow) {
                        *gxj += gi * wij;
                    }
                }
            })),
        )
    }

    /// `W x + b`.
    pub fn affine(&mut self, ps: &Params, w: ParamId, b: ParamId, x: VarId) -> VarId {
        let wx = self.matvec(ps, w, x);
        let rows = self.len(wx);
        let be = ps.entry(b);
        assert_eq!(be.rows * be.cols, rows, "bias shape mismatch for {}", be.name);
        let val = self.vals[wx.0]
            .iter()
            .zip(&be.data)
            .map(|(a, c)| a + c)
            .collect();
        self.push(
            val,
            Some(Box::new(move |g, grads, _vals, params| {
                for (gb, go) in params.entry_mut(b).grad.iter_mut().zip(g) {
                    *gb += go;
                }
                for (gi, go) in grads[wx.0].iter_mut().zip(g) {
                    *gi += go;
                }
            })),
        )
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.len(a), self.len(b), "add shape mismatch");
        let val = self.vals[a.0]
            .iter()
            .zip(&self.vals[b.0])
            .map(|(x, y)| x + y)
            .collect();
        self.push(
            val,
            Some(Box::new(move |g, grads, _vals, _params| {
                for (gi, go) in grads[a.0].iter_mut().zip(g) {
                    *gi += go;
                }
                for (gi, go) in grads[b.0].iter_mut().zip(g) {
                    *gi += go;
                }
            })),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.len(a), self.len(b), "mul shape mismatch");
        let val = self.vals[a.0]
            .iter()
            .zip(&self.vals[b.0])
            .map(|(x, y)| x * y)
            .collect();
        self.push(
            val,
            Some(Box::new(move |g, grads, vals, _params| {
                for i in 0..g.len() {
                    grads[a.0][i] += g[i] * vals[b.0][i];
                }
                for i in 0..g.len() {
                    grads[b.0][i] += g[i] * vals[a.0][i];
                }
            })),
        )
    }

    pub fn concat(&mut self, parts: &[VarId]) -> VarId {
        let mut val = Vec::new();
        for p in parts {
            val.extend_from_slice(&self.vals[p.0]);
        }
        let parts: Vec<VarId> = parts.to_vec();
        self.push(
            val,
            Some(Box::new(move |g, grads, vals, _params| {
                let mut offset = 0;
                for p in &parts {
                    let n = vals[p.0].len();
                    for (gi, go) in grads[p.0].iter_mut().zip(&g[offset..offset + n]) {
                        *gi += go;
                    }
                    offset += n;
                }
            })),
        )
    }

    pub fn slice(&mut self, x: VarId, start: usize, len: usize) -> VarId {
        assert!(start + len <= self.len(x), "slice out of range");
        let val = self.vals[x.0][start..start + len].to_vec();
        self.push(
            val,
            Some(Box::new(move |g, grads, _vals, _params| {
                for (gi, go) in grads[x.0][start..start + len].iter_mut().zip(g) {
                    *gi += go;
                }
            })),
        )
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let val: Vec<f64> = self.vals[x.0]
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let out = self.push(val, None);
        self.backs[out.0] = Some(Box::new(move |g, grads, vals, _params| {
            let y = &vals[out.0];
            for i in 0..g.len() {
                grads[x.0][i] += g[i] * y[i] * (1.0 - y[i]);
            }
        }));
        out
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        let val: Vec<f64> = self.vals[x.0].iter().map(|v| v.tanh()).collect();
        let out = self.push(val, None);
        self.backs[out.0] = Some(Box::new(move |g, grads, vals, _params| {
            let y = &vals[out.0];
            for i in 0..g.len() {
                grads[x.0][i] += g[i] * (1.0 - y[i] * y[i]);
            }
        }));
        out
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let val: Vec<f64> = self.vals[x.0].iter().map(|v| v.max(0.0)).collect();
        self.push(
            val,
            Some(Box::new(move |g, grads, vals, _params| {
                for i in 0..g.len() {
                    if vals[x.0][i] > 0.0 {
                        grads[x.0][i] += g[i];
                    }
                }
            })),
        )
    }

    /// Numerically stable softmax over the whole vector.
    pub fn softmax(&mut self, x: VarId) -> VarId {
        let xv = &self.vals[x.0];
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let val: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let out = self.push(val, None);
        self.backs[out.0] = Some(Box::new(move |g, grads, vals, _params| {
            let y = &vals[out.0];
            let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            for i in 0..g.len() {
                grads[x.0][i] += y[i] * (g[i] - dot);
            }
        }));
        out
    }

    /// `sum_k w[k] * xs[k]`, all `xs` of equal dimension.
    pub fn weighted_sum(&mut self, w: VarId, xs: &[VarId]) -> VarId {
        assert_eq!(self.len(w), xs.len(), "one weight per vector");
        let dim = self.len(xs[0]);
        let mut val = vec![0.0; dim];
        for (k, x) in xs.iter().enumerate() {
            let wk = self.vals[w.0][k];
            for (vi, xi) in val.iter_mut().zip(&self.vals[x.0]) {
                *vi += wk * xi;
            }
        }
        let xs: Vec<VarId> = xs.to_vec();
        self.push(
            val,
            Some(Box::new(move |g, grads, vals, _params| {
                for (k, x) in xs.iter().enumerate() {
                    let gwk: f64 = g.iter().zip(&vals[x.0]).map(|(a, b)| a * b).sum();
                    grads[w.0][k] += gwk;
                    let wk = vals[w.0][k];
                    for (gi, go) in grads[x.0].iter_mut().zip(g) {
                        *gi += wk * go;
                    }
                }
            })),
        )
    }

    /// Collects the first component of each scalar node into one vector.
    pub fn stack_scalars(&mut self, xs: &[VarId]) -> VarId {
        let val: Vec<f64> = xs.iter().map(|x| self.vals[x.0][0]).collect();
        let xs: Vec<VarId> = xs.to_vec();
        self.push(
            val,
            Some(Box::new(move |g, grads, _vals, _params| {
                for (k, x) in xs.iter().enumerate() {
                    grads[x.0][0] += g[k];
                }
            })),
        )
    }

    /// Dot product of two equal-length nodes.
    pub fn dot(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.len(a), self.len(b), "dot shape mismatch");
        let val: f64 = self.vals[a.0]
            .iter()
            .zip(&self.vals[b.0])
            .map(|(x, y)| x * y)
            .sum();
        self.push(
            vec![val],
            Some(Box::new(move |g, grads, vals, _params| {
                let g0 = g[0];
                for i in 0..vals[a.0].len() {
                    grads[a.0][i] += g0 * vals[b.0][i];
                    grads[b.0][i] += g0 * vals[a.0][i];
                }
            })),
        )
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, xs: &[VarId]) -> VarId {
        let val: f64 = xs.iter().map(|x| self.vals[x.0][0]).sum();
        let xs: Vec<VarId> = xs.to_vec();
        self.push(
            vec![val],
            Some(Box::new(move |g, grads, _vals, _params| {
                for x in &xs {
                    grads[x.0][0] += g[0];
                }
            })),
        )
    }

    /// Text convolution with max-over-time pooling.
    ///
    /// `inputs` are the character vectors of one token; the window slides
    /// over them with zero padding so every position is a window center.
    /// `w` has one row per filter, `window * char_dim` columns. Gradients
    /// flow only through each filter's argmax position.
    pub fn conv_max(
        &mut self,
        ps: &Params,
        w: ParamId,
        b: ParamId,
        window: usize,
        inputs: &[VarId],
    ) -> VarId {
        assert!(!inputs.is_empty(), "conv_max needs at least one input");
        let char_dim = self.len(inputs[0]);
        let e = ps.entry(w);
        let filters = e.rows;
        assert_eq!(e.cols, window * char_dim, "conv filter shape mismatch");
        let n = inputs.len();
        let pad_left = (window - 1) / 2;

        let mut val = vec![f64::NEG_INFINITY; filters];
        let mut argmax = vec![0usize; filters];
        for p in 0..n {
            for f in 0..filters {
                let wrow = &e.data[f * e.cols..(f + 1) * e.cols];
                let mut acc = ps.entry(b).data[f];
                for k in 0..window {
                    let cpos = (p + k) as isize - pad_left as isize;
                    if cpos < 0 || cpos >= n as isize {
                        continue;
                    }
                    let cvec = &self.vals[inputs[cpos as usize].0];
                    let wseg = &wrow[k * char_dim..(k + 1) * char_dim];
                    acc += wseg.iter().zip(cvec).map(|(a, c)| a * c).sum::<f64>();
                }
                if acc > val[f] {
                    val[f] = acc;
                    argmax[f] = p;
                }
            }
        }

        let inputs: Vec<VarId> = inputs.to_vec();
        let cols = e.cols;
        self.push(
            val,
            Some(Box::new(move |g, grads, vals, params| {
                for f in 0..filters {
                    let gf = g[f];
                    if gf == 0.0 {
                        continue;
                    }
                    let p = argmax[f];
                    params.entry_mut(b).grad[f] += gf;
                    for k in 0..window {
                        let cpos = (p + k) as isize - pad_left as isize;
                        if cpos < 0 || cpos >= inputs.len() as isize {
                            continue;
                        }
                        let x = inputs[cpos as usize];
                        {
                            let grad = &mut params.entry_mut(w).grad;
                            let gseg = &mut grad[f * cols + k * char_dim..f * cols + (k + 1) * char_dim];
                            for (gw, c) in gseg.iter_mut().zip(&vals[x.0]) {
                                *gw += gf * c;
                            }
                        }
                        let data = &params.entry(w).data;
                        let wseg = &data[f * cols + k * char_dim..f * cols + (k + 1) * char_dim];
                        for (gc, wv) in grads[x.0].iter_mut().zip(wseg) {
                            *gc += gf * wv;
                        }
                    }
                }
            })),
        )
    }

    /// Negative marginal log-likelihood of the correct candidates.
    ///
    /// `logits` covers all candidates (the dummy antecedent included);
    /// `correct` marks the gold ones and must contain at least one `true`.
    /// Value is `logsumexp(all) - logsumexp(correct)`.
    pub fn marginal_nll(&mut self, logits: VarId, correct: Vec<bool>) -> VarId {
        assert_eq!(self.len(logits), correct.len(), "one flag per logit");
        assert!(correct.iter().any(|c| *c), "at least one correct candidate");
        let lv = &self.vals[logits.0];
        let lse_all = logsumexp(lv.iter().cloned());
        let lse_correct = logsumexp(
            lv.iter()
                .zip(&correct)
                .filter(|(_, c)| **c)
                .map(|(v, _)| *v),
        );
        let val = lse_all - lse_correct;
        self.push(
            vec![val],
            Some(Box::new(move |g, grads, vals, _params| {
                let g0 = g[0];
                let lv = &vals[logits.0];
                let p_all = softmax_vec(lv, |_| true);
                let p_correct = softmax_vec(lv, |i| correct[i]);
                for i in 0..lv.len() {
                    grads[logits.0][i] += g0 * (p_all[i] - p_correct[i]);
                }
            })),
        )
    }

    /// Reverse sweep from a scalar root, accumulating into node and
    /// parameter gradients.
    pub fn backward(&self, root: VarId, params: &mut Params) {
        assert_eq!(self.len(root), 1, "backward root must be a scalar");
        let mut grads: Vec<Vec<f64>> = self.vals.iter().map(|v| vec![0.0; v.len()]).collect();
        grads[root.0][0] = 1.0;
        for i in (0..=root.0).rev() {
            if let Some(back) = &self.backs[i] {
                let g = std::mem::take(&mut grads[i]);
                back(&g, &mut grads, &self.vals, params);
            }
        }
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_vec(xs: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let max = xs
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; xs.len()];
    let mut total = 0.0;
    for (i, v) in xs.iter().enumerate() {
        if keep(i) {
            let e = (v - max).exp();
            out[i] = e;
            total += e;
        }
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences over every parameter coordinate.
    fn check_grads(
        params: &mut Params,
        forward: impl Fn(&Params) -> f64,
        tol: f64,
    ) {
        let analytic: Vec<Vec<f64>> = params
            .ids()
            .map(|id| params.entry(id).grad.clone())
            .collect();
        let h = 1e-5;
        for id in params.ids().collect::<Vec<_>>() {
            for i in 0..params.entry(id).data.len() {
                let orig = params.entry(id).data[i];
                params.entry_mut(id).data[i] = orig + h;
                let up = forward(params);
                params.entry_mut(id).data[i] = orig - h;
                let down = forward(params);
                params.entry_mut(id).data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = analytic[id.0][i];
                let denom = fd.abs().max(an.abs()).max(1.0);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "param {} coord {i}: fd={fd} analytic={an}",
                    params.entry(id).name
                );
            }
        }
    }

    /// A small network touching every op once.
    fn build(params: &Params, tape: &mut Tape) -> VarId {
        let w1 = params.find("w1").unwrap();
        let b1 = params.find("b1").unwrap();
        let emb = params.find("emb").unwrap();
        let w2 = params.find("w2").unwrap();
        let cw = params.find("cw").unwrap();
        let cb = params.find("cb").unwrap();

        let e0 = tape.param_row(params, emb, 0);
        let e1 = tape.param_row(params, emb, 1);
        let e2 = tape.param_row(params, emb, 2);
        let pooled = tape.conv_max(params, cw, cb, 3, &[e0, e1, e2]);

        let x = tape.concat(&[e0, pooled]);
        let h = tape.affine(params, w1, b1, x);
        let ht = tape.tanh(h);
        let hs = tape.sigmoid(h);
        let hr = tape.relu(h);
        let prod = tape.mul(ht, hs);
        let both = tape.add(prod, hr);
        let att = tape.matvec(params, w2, both);
        let weights = tape.softmax(att);
        let mix = tape.weighted_sum(weights, &[ht, hs, hr]);
        let lo = tape.slice(mix, 0, 2);
        let hi = tape.slice(mix, 2, 2);
        let score0 = tape.dot(lo, hi);
        let score1 = tape.dot(lo, lo);
        let score2 = tape.dot(hi, hi);
        let logits = tape.stack_scalars(&[score0, score1, score2]);
        let loss_a = tape.marginal_nll(logits, vec![true, false, true]);
        let loss_b = tape.sum_scalars(&[score0, loss_a]);
        loss_b
    }

    fn make_params(seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        params.add("emb", 3, 3, || rng.random_range(-0.8..0.8));
        params.add("cw", 3, 9, || rng.random_range(-0.8..0.8));
        params.add("cb", 3, 1, || rng.random_range(-0.2..0.2));
        params.add("w1", 4, 6, || rng.random_range(-0.8..0.8));
        params.add("b1", 4, 1, || rng.random_range(-0.2..0.2));
        params.add("w2", 3, 4, || rng.random_range(-0.8..0.8));
        params
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        for seed in 0..5 {
            let mut params = make_params(seed);
            let mut tape = Tape::new();
            let loss = build(&params, &mut tape);
            params.zero_grad();
            tape.backward(loss, &mut params);
            check_grads(
                &mut params,
                |p| {
                    let mut t = Tape::new();
                    let l = build(p, &mut t);
                    t.value(l)[0]
                },
                1e-6,
            );
        }
    }

    #[test]
    fn softmax_sums_to_one_and_shifts_cancel() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.3, -1.2, 2.0, 0.0]);
        let y = tape.softmax(x);
        let total: f64 = tape.value(y).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let shifted = tape.constant(vec![0.3 + 5.0, -1.2 + 5.0, 2.0 + 5.0, 5.0]);
        let ys = tape.softmax(shifted);
        for (a, b) in tape.value(y).iter().zip(tape.value(ys)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_nll_closed_forms() {
        // One correct candidate and the dummy, both logits zero.
        let mut tape = Tape::new();
        let logits = tape.constant(vec![0.0, 0.0]);
        let loss = tape.marginal_nll(logits, vec![true, false]);
        assert!((tape.value(loss)[0] - 2.0f64.ln()).abs() < 1e-12);

        // Two correct of three.
        let logits = tape.constant(vec![0.0, 0.0, 0.0]);
        let loss = tape.marginal_nll(logits, vec![true, true, false]);
        assert!((tape.value(loss)[0] - (3.0f64 / 2.0).ln()).abs() < 1e-12);

        // Dominant dummy with no other correct candidate: loss near zero.
        let logits = tape.constant(vec![0.0, 0.0, 30.0]);
        let loss = tape.marginal_nll(logits, vec![false, false, true]);
        assert!(tape.value(loss)[0] < 1e-10);
    }

    #[test]
    fn gradients_accumulate_over_shared_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = Params::new();
        params.add("emb", 2, 3, || rng.random_range(-1.0..1.0));
        let emb = params.find("emb").unwrap();
        let f = |p: &Params| {
            let mut t = Tape::new();
            let a = t.param_row(p, emb, 0);
            let b = t.param_row(p, emb, 0); // same row twice
            let s = t.dot(a, b);
            (t, s)
        };
        let (tape, s) = f(&params);
        params.zero_grad();
        tape.backward(s, &mut params);
        check_grads(
            &mut params,
            |p| {
                let (t, s) = f(p);
                t.value(s)[0]
            },
            1e-6,
        );
    }
}
