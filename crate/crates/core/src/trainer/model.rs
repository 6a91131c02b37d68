//! Pair classifier: optional shared `tanh` refinement layer per object
//! feature, concatenation of the two refined features, linear output layer
//! and softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::schema::PairFeature;

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weight.chunks_exact(self.cols).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }

    fn apply_pair(&self, a: &[f64], b: &[f64], out: &mut Vec<f64>) {
        let half = a.len();
        out.clear();
        out.extend(self.weight.chunks_exact(self.cols).zip(&self.bias).map(|(row, bias)| {
            let (ra, rb) = row.split_at(half);
            ra.iter().zip(a).map(|(w, v)| w * v).sum::<f64>()
                + rb.iter().zip(b).map(|(w, v)| w * v).sum::<f64>()
                + bias
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub input_dim: usize,
    pub hidden: Option<Dense>,
    pub output: Dense,
}

impl ClassifierParams {
    /// Zero output layer; the hidden layer (if any) gets a seeded uniform
    /// Glorot initialization.
    pub fn new(input_dim: usize, classes: usize, hidden: Option<usize>, seed: u64) -> Self {
        let hidden = hidden.map(|h| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let limit = (6.0 / (input_dim + h) as f64).sqrt();
            let mut d = Dense::zeros(h, input_dim);
            d.weight.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
            d
        });
        let refined = hidden.as_ref().map_or(input_dim, |h| h.rows);
        Self {
            input_dim,
            hidden,
            output: Dense::zeros(classes, 2 * refined),
        }
    }

    pub fn classes(&self) -> usize {
        self.output.rows
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            hidden: self.hidden.as_ref().map(|h| Dense::zeros(h.rows, h.cols)),
            output: Dense::zeros(self.output.rows, self.output.cols),
        }
    }

    /// Parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, usize, usize, &[f64])> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(("hidden.weight", h.rows, h.cols, h.weight.as_slice()));
            out.push(("hidden.bias", h.rows, 1, h.bias.as_slice()));
        }
        out.push(("output.weight", self.output.rows, self.output.cols, self.output.weight.as_slice()));
        out.push(("output.bias", self.output.rows, 1, self.output.bias.as_slice()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.3.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.3.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ClassifierParams) {
        let src = other.flatten();
        let mut off = 0;
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v += alpha * src[off];
                off += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.3.iter().all(|v| v.is_finite()))
    }

    /// Same parameters rounded through `f32`, as stored in checkpoints.
    pub fn rounded_f32(&self) -> Self {
        let mut p = self.clone();
        let flat: Vec<f64> = p.flatten().iter().map(|&v| v as f32 as f64).collect();
        p.set_flat(&flat);
        p
    }

    fn check_pair(&self, pair: &PairFeature) -> Result<()> {
        for (what, v) in [("subject", &pair.subject), ("object", &pair.object)] {
            if v.len() != self.input_dim {
                return Err(Error::Dimension {
                    what: format!("{what} feature"),
                    expected: self.input_dim,
                    found: v.len(),
                });
            }
        }
        Ok(())
    }

    fn refine(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.hidden.as_ref().map(|h| {
            let mut out = Vec::with_capacity(h.rows);
            h.apply(x, &mut out);
            out.iter_mut().for_each(|v| *v = v.tanh());
            out
        })
    }

    pub fn logits(&self, pair: &PairFeature) -> Result<Vec<f64>> {
        self.check_pair(pair)?;
        Ok(self.forward_cached(pair).logits)
    }

    fn forward_cached(&self, pair: &PairFeature) -> Activations {
        let hs = self.refine(&pair.subject);
        let ho = self.refine(&pair.object);
        let mut logits = Vec::with_capacity(self.classes());
        self.output.apply_pair(
            hs.as_deref().unwrap_or(&pair.subject),
            ho.as_deref().unwrap_or(&pair.object),
            &mut logits,
        );
        Activations { hs, ho, logits }
    }
}

struct Activations {
    hs: Option<Vec<f64>>,
    ho: Option<Vec<f64>>,
    logits: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Predicted distribution over all predicate classes.
pub fn forward(params: &ClassifierParams, pair: &PairFeature) -> Result<Vec<f64>> {
    Ok(softmax(&params.logits(pair)?))
}

pub fn ce_loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// `KL(anchor || composed)`; the anchor distribution is the fixed target.
pub fn kl_loss(anchor: &[f64], composed: &[f64]) -> f64 {
    anchor
        .iter()
        .zip(composed)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, c)| a * (a.max(PROB_FLOOR).ln() - c.max(PROB_FLOOR).ln()))
        .sum()
}

/// One training example. Composed examples carry the anchor's predicted
/// distribution as a constant KL target.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub pair: &'a PairFeature,
    pub label: usize,
    pub target: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub kl: f64,
    pub total: f64,
}

/// Value of `mean(CE) + kl_weight * mean(KL over items with a target)`.
pub fn loss(params: &ClassifierParams, batch: &[TrainItem<'_>], kl_weight: f64) -> Result<LossParts> {
    let mut ce = 0.0;
    let mut kl = 0.0;
    let mut m = 0usize;
    for it in batch {
        let q = forward(params, it.pair)?;
        ce += ce_loss(&q, it.label);
        if let Some(t) = it.target {
            kl += kl_loss(t, &q);
            m += 1;
        }
    }
    ce /= batch.len() as f64;
    if m > 0 {
        kl /= m as f64;
    }
    Ok(LossParts { ce, kl, total: ce + kl_weight * kl })
}

struct ItemGrad {
    acts: Activations,
    dlogits: Vec<f64>,
    ce: f64,
    kl: Option<f64>,
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn grad(
    params: &ClassifierParams,
    batch: &[TrainItem<'_>],
    kl_weight: f64,
) -> Result<(ClassifierParams, LossParts)> {
    grad_with(params, batch, kl_weight, Exec::default())
}

pub fn grad_with(
    params: &ClassifierParams,
    batch: &[TrainItem<'_>],
    kl_weight: f64,
    exec: Exec,
) -> Result<(ClassifierParams, LossParts)> {
    if batch.is_empty() {
        return Err(Error::Validation("gradient of an empty batch".into()));
    }
    for it in batch {
        params.check_pair(it.pair)?;
        if it.label >= params.classes() {
            return Err(Error::Validation(format!("label {} out of range", it.label)));
        }
    }
    let n = batch.len() as f64;
    let m = batch.iter().filter(|it| it.target.is_some()).count();
    let kl_scale = if m > 0 { kl_weight / m as f64 } else { 0.0 };

    let per_item = exec.map(batch, |it| {
        let acts = params.forward_cached(it.pair);
        let q = softmax(&acts.logits);
        let mut dlogits: Vec<f64> = q.iter().map(|v| v / n).collect();
        dlogits[it.label] -= 1.0 / n;
        let kl = it.target.map(|t| {
            let mass: f64 = t.iter().sum();
            for ((d, qi), ti) in dlogits.iter_mut().zip(&q).zip(t) {
                *d += kl_scale * (qi * mass - ti);
            }
            kl_loss(t, &q)
        });
        ItemGrad {
            ce: ce_loss(&q, it.label),
            kl,
            acts,
            dlogits,
        }
    });

    let mut g = params.zeros_like();
    let mut ce = 0.0;
    let mut kl = 0.0;
    let half = params.output.cols / 2;
    let mut dh = vec![0.0; params.output.cols];
    for (it, ig) in batch.iter().zip(&per_item) {
        ce += ig.ce;
        kl += ig.kl.unwrap_or(0.0);
        let hs = ig.acts.hs.as_deref().unwrap_or(&it.pair.subject);
        let ho = ig.acts.ho.as_deref().unwrap_or(&it.pair.object);
        let out = &mut g.output;
        for (c, &dz) in ig.dlogits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let row = &mut out.weight[c * out.cols..(c + 1) * out.cols];
            let (ra, rb) = row.split_at_mut(half);
            ra.iter_mut().zip(hs).for_each(|(w, h)| *w += dz * h);
            rb.iter_mut().zip(ho).for_each(|(w, h)| *w += dz * h);
            out.bias[c] += dz;
        }
        if let (Some(hidden), Some(gh)) = (&params.hidden, &mut g.hidden) {
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (c, &dz) in ig.dlogits.iter().enumerate() {
                let row = &params.output.weight[c * params.output.cols..(c + 1) * params.output.cols];
                dh.iter_mut().zip(row).for_each(|(d, w)| *d += dz * w);
            }
            for (h_act, x, dh_part) in [(hs, &it.pair.subject, &dh[..half]), (ho, &it.pair.object, &dh[half..])] {
                for j in 0..hidden.rows {
                    let da = dh_part[j] * (1.0 - h_act[j] * h_act[j]);
                    if da == 0.0 {
                        continue;
                    }
                    let row = &mut gh.weight[j * gh.cols..(j + 1) * gh.cols];
                    row.iter_mut().zip(x.iter()).for_each(|(w, v)| *w += da * v);
                    gh.bias[j] += da;
                }
            }
        }
    }
    ce /= n;
    if m > 0 {
        kl /= m as f64;
    }
    Ok((g, LossParts { ce, kl, total: ce + kl_weight * kl }))
}
