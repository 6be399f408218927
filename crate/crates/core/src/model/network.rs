//! Shared trunk plus independent classification branches, with exact
//! gradients of the cross-entropy loss.
//!
//! Branch indices are 0-based here; branch 0 is the plain linear head and
//! every later branch carries one hidden ReLU layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub branch_hidden: usize,
    pub classes: usize,
    pub branches: usize,
}

/// Affine map with row-major `outputs x inputs` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut l = Self::zeros(inputs, outputs);
        l.weight.iter_mut().for_each(|w| *w = rng.gen_range(-a..a));
        l
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weight[r * self.inputs..(r + 1) * self.inputs];
            *o = self.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Forward pass visiting only the listed input coordinates.
    fn forward_sparse(&self, x: &[f64], nz: &[usize], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weight[r * self.inputs..(r + 1) * self.inputs];
            *o = self.bias[r] + nz.iter().map(|&j| row[j] * x[j]).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input `x`
    /// and, when requested, adds the input gradient into `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let grow = &mut grad.weight[r * self.inputs..(r + 1) * self.inputs];
            grow.iter_mut().zip(x).for_each(|(gw, v)| *gw += g * v);
        }
        if let Some(dx) = dx {
            for (r, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weight[r * self.inputs..(r + 1) * self.inputs];
                dx.iter_mut().zip(row).for_each(|(d, w)| *d += g * w);
            }
        }
    }

    fn backward_sparse(&self, x: &[f64], nz: &[usize], dy: &[f64], grad: &mut Linear) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let grow = &mut grad.weight[r * self.inputs..(r + 1) * self.inputs];
            for &j in nz {
                grow[j] += g * x[j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Linear(Linear),
    Hidden { hidden: Linear, out: Linear },
}

impl Head {
    fn layers(&self) -> Vec<&Linear> {
        match self {
            Head::Linear(l) => vec![l],
            Head::Hidden { hidden, out } => vec![hidden, out],
        }
    }

    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        match self {
            Head::Linear(l) => vec![l],
            Head::Hidden { hidden, out } => vec![hidden, out],
        }
    }
}

/// Which parameters an optimizer step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Trunk,
    Branch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub trunk: Linear,
    pub heads: Vec<Head>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self::build(dims, Linear::zeros)
    }

    /// Glorot-uniform weights and zero biases from a seeded stream.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, |i, o| Linear::glorot(i, o, &mut rng))
    }

    fn build(dims: ModelDims, mut layer: impl FnMut(usize, usize) -> Linear) -> Self {
        let trunk = layer(dims.input, dims.hidden);
        let heads = (0..dims.branches)
            .map(|k| {
                if k == 0 {
                    Head::Linear(layer(dims.hidden, dims.classes))
                } else {
                    Head::Hidden {
                        hidden: layer(dims.hidden, dims.branch_hidden),
                        out: layer(dims.branch_hidden, dims.classes),
                    }
                }
            })
            .collect();
        ModelParams { dims, trunk, heads }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    /// All layers in canonical order: trunk, then each branch's layers.
    pub fn layers(&self) -> Vec<&Linear> {
        std::iter::once(&self.trunk)
            .chain(self.heads.iter().flat_map(|h| h.layers()))
            .collect()
    }

    pub fn group_layers_mut(&mut self, group: ParamGroup) -> Vec<&mut Linear> {
        match group {
            ParamGroup::Trunk => vec![&mut self.trunk],
            ParamGroup::Branch(k) => self.heads[k].layers_mut(),
        }
    }

    pub fn group_layers(&self, group: ParamGroup) -> Vec<&Linear> {
        match group {
            ParamGroup::Trunk => vec![&self.trunk],
            ParamGroup::Branch(k) => self.heads[k].layers(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Value of the `i`-th scalar in canonical order (weights then bias per layer).
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for l in self.layers() {
            if i < l.weight.len() {
                return l.weight[i];
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        let mut layers: Vec<&mut Linear> = std::iter::once(&mut self.trunk)
            .chain(self.heads.iter_mut().flat_map(|h| h.layers_mut()))
            .collect();
        for l in layers.iter_mut() {
            if i < l.weight.len() {
                l.weight[i] = v;
                return;
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                l.bias[i] = v;
                return;
            }
            i -= l.bias.len();
        }
        panic!("flat index out of range")
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let mut mine: Vec<&mut Linear> = std::iter::once(&mut self.trunk)
            .chain(self.heads.iter_mut().flat_map(|h| h.layers_mut()))
            .collect();
        for (a, b) in mine.iter_mut().zip(other.layers()) {
            a.weight
                .iter_mut()
                .zip(&b.weight)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.dims.input {
            return Err(Error::config(format!(
                "feature dimension {dim} does not match model input {}",
                self.dims.input
            )));
        }
        Ok(())
    }

    fn check_branch(&self, k: usize) -> Result<()> {
        if k >= self.heads.len() {
            return Err(Error::config(format!(
                "branch {k} out of range for a {}-branch model",
                self.heads.len()
            )));
        }
        Ok(())
    }

    /// Post-ReLU trunk activations, one row per word.
    pub fn trunk_hidden(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_input(feats.dim)?;
        let mut out = FeatureMatrix::zeros(feats.rows, self.dims.hidden);
        let mut nz = Vec::new();
        for i in 0..feats.rows {
            let x = feats.row(i);
            nonzeros(x, &mut nz);
            let h = out.row_mut(i);
            self.trunk.forward_sparse(x, &nz, h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(out)
    }

    /// Class probabilities of branch `k` for every word of `hidden`.
    pub fn head_probs(&self, hidden: &FeatureMatrix, k: usize) -> Result<Vec<Vec<f64>>> {
        self.check_branch(k)?;
        let mut scratch = vec![0.0; self.dims.branch_hidden];
        Ok((0..hidden.rows)
            .map(|i| {
                let mut logits = vec![0.0; self.dims.classes];
                self.head_logits(k, hidden.row(i), &mut scratch, &mut logits);
                softmax_in_place(&mut logits);
                logits
            })
            .collect())
    }

    fn head_logits(&self, k: usize, h: &[f64], pre: &mut [f64], logits: &mut [f64]) {
        match &self.heads[k] {
            Head::Linear(l) => l.forward(h, logits),
            Head::Hidden { hidden, out } => {
                hidden.forward(h, pre);
                let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                out.forward(&act, logits);
            }
        }
    }
}

fn nonzeros(x: &[f64], out: &mut Vec<usize>) {
    out.clear();
    out.extend(
        x.iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j),
    );
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Probability rows of branch `k` for every word.
pub fn forward(params: &ModelParams, feats: &FeatureMatrix, k: usize) -> Result<Vec<Vec<f64>>> {
    params.check_branch(k)?;
    let hidden = params.trunk_hidden(feats)?;
    params.head_probs(&hidden, k)
}

/// One weighted cross-entropy term: branch predictions against a labeling.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<'a> {
    pub branch: usize,
    pub labels: &'a [usize],
    pub weight: f64,
}

/// What the loss is evaluated on: raw features, or cached trunk activations
/// when the trunk is frozen.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Features(&'a FeatureMatrix),
    Hidden(&'a FeatureMatrix),
}

impl Input<'_> {
    fn rows(&self) -> usize {
        match self {
            Input::Features(f) | Input::Hidden(f) => f.rows,
        }
    }
}

fn check_terms(params: &ModelParams, rows: usize, terms: &[LossTerm]) -> Result<()> {
    for t in terms {
        params.check_branch(t.branch)?;
        if t.labels.len() != rows {
            return Err(Error::validation(format!(
                "{} labels for {rows} words",
                t.labels.len()
            )));
        }
        if let Some(c) = t.labels.iter().find(|&&c| c >= params.dims.classes) {
            return Err(Error::validation(format!(
                "label {c} out of range for {} classes",
                params.dims.classes
            )));
        }
    }
    Ok(())
}

/// Adds `scale * sum_t weight_t * CE_t` gradients into `grad` and returns the
/// scaled loss. Trunk gradients are computed only for feature input with
/// `train_trunk` set.
pub fn accumulate(
    params: &ModelParams,
    input: Input,
    terms: &[LossTerm],
    scale: f64,
    grad: &mut ModelParams,
    train_trunk: bool,
) -> Result<f64> {
    let rows = input.rows();
    check_terms(params, rows, terms)?;
    let dims = params.dims;
    let mut branches: Vec<usize> = Vec::new();
    for t in terms {
        if !branches.contains(&t.branch) {
            branches.push(t.branch);
        }
    }
    let want_dh = train_trunk && matches!(input, Input::Features(_));

    let mut nz = Vec::new();
    let mut z = vec![0.0; dims.hidden];
    let mut hbuf = vec![0.0; dims.hidden];
    let mut dh = vec![0.0; dims.hidden];
    let mut pre = vec![0.0; dims.branch_hidden];
    let mut act = vec![0.0; dims.branch_hidden];
    let mut dact = vec![0.0; dims.branch_hidden];
    let mut logits = vec![0.0; dims.classes];
    let mut dlogits = vec![0.0; dims.classes];
    let mut loss = 0.0;

    for i in 0..rows {
        let h: &[f64] = match input {
            Input::Features(f) => {
                params.check_input(f.dim)?;
                let x = f.row(i);
                nonzeros(x, &mut nz);
                params.trunk.forward_sparse(x, &nz, &mut z);
                hbuf.iter_mut().zip(&z).for_each(|(a, b)| *a = b.max(0.0));
                &hbuf
            }
            Input::Hidden(hm) => hm.row(i),
        };
        dh.iter_mut().for_each(|v| *v = 0.0);

        for &k in &branches {
            match &params.heads[k] {
                Head::Linear(l) => l.forward(h, &mut logits),
                Head::Hidden { hidden, out } => {
                    hidden.forward(h, &mut pre);
                    act.iter_mut().zip(&pre).for_each(|(a, p)| *a = p.max(0.0));
                    out.forward(&act, &mut logits);
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            dlogits.iter_mut().for_each(|v| *v = 0.0);
            let mut wsum = 0.0;
            for t in terms.iter().filter(|t| t.branch == k) {
                let y = t.labels[i];
                let w = t.weight * scale;
                loss += w * (lse - logits[y]);
                dlogits[y] -= w;
                wsum += w;
            }
            for (d, l) in dlogits.iter_mut().zip(&logits) {
                *d += wsum * (l - lse).exp();
            }

            let dh_target = if want_dh {
                Some(dh.as_mut_slice())
            } else {
                None
            };
            match (&params.heads[k], &mut grad.heads[k]) {
                (Head::Linear(l), Head::Linear(g)) => l.backward(h, &dlogits, g, dh_target),
                (
                    Head::Hidden { hidden, out },
                    Head::Hidden {
                        hidden: gh,
                        out: go,
                    },
                ) => {
                    dact.iter_mut().for_each(|v| *v = 0.0);
                    out.backward(&act, &dlogits, go, Some(&mut dact));
                    for (d, p) in dact.iter_mut().zip(&pre) {
                        if *p <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    hidden.backward(h, &dact, gh, dh_target);
                }
                _ => unreachable!("gradient has the same shape as the parameters"),
            }
        }

        if want_dh {
            if let Input::Features(f) = input {
                for (d, zv) in dh.iter_mut().zip(&z) {
                    if *zv <= 0.0 {
                        *d = 0.0;
                    }
                }
                params
                    .trunk
                    .backward_sparse(f.row(i), &nz, &dh, &mut grad.trunk);
            }
        }
    }
    Ok(loss)
}

/// Mean (over words) weighted cross-entropy and its gradient for every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    feats: &FeatureMatrix,
    terms: &[LossTerm],
) -> Result<(f64, ModelParams)> {
    let mut grad = params.zeros_like();
    if feats.rows == 0 {
        check_terms(params, 0, terms)?;
        return Ok((0.0, grad));
    }
    let scale = 1.0 / feats.rows as f64;
    let loss = accumulate(
        params,
        Input::Features(feats),
        terms,
        scale,
        &mut grad,
        true,
    )?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(input: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: 6,
            branch_hidden: 5,
            classes: 8,
            branches: 3,
        }
    }

    fn random_feats(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = FeatureMatrix::zeros(rows, dim);
        f.data
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        f
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let p = ModelParams::zeros(dims(4));
        let f = random_feats(3, 4, 1);
        for k in 0..3 {
            for row in forward(&p, &f, k).unwrap() {
                assert_eq!(row.len(), 8);
                assert!(row.iter().all(|&v| (v - 0.125).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn uniform_loss_is_ln_classes() {
        let p = ModelParams::zeros(dims(4));
        let f = random_feats(5, 4, 2);
        let labels = vec![3; 5];
        let (loss, _) = loss_and_grad(
            &p,
            &f,
            &[LossTerm {
                branch: 0,
                labels: &labels,
                weight: 1.0,
            }],
        )
        .unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = ModelParams::zeros(dims(4));
        let f = random_feats(2, 5, 3);
        assert!(matches!(forward(&p, &f, 0), Err(Error::Config(_))));
        let f = random_feats(2, 4, 3);
        assert!(forward(&p, &f, 3).is_err());
        let bad = vec![8, 0];
        assert!(loss_and_grad(
            &p,
            &f,
            &[LossTerm {
                branch: 0,
                labels: &bad,
                weight: 1.0
            }]
        )
        .is_err());
    }

    #[test]
    fn flat_indexing_round_trips() {
        let mut p = ModelParams::init(dims(3), 9);
        let n = p.num_params();
        assert_eq!(n, 3 * 6 + 6 + (6 * 8 + 8) + 2 * (6 * 5 + 5 + 5 * 8 + 8));
        p.set_flat(n - 1, 42.0);
        assert_eq!(p.get_flat(n - 1), 42.0);
        assert_eq!(p.heads[2].layers()[1].bias[7], 42.0);
    }
}
