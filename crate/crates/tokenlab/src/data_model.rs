//! The sparse-token task: sampling, featurizations and the linear readout.
//!
//! A negative sample is an `L × d` matrix of i.i.d. standard normals. A
//! positive sample adds `θ ξ` to `R` of its rows, chosen by the location law.
//! Matrices are stored row-major (token-major).

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::numerics::normal_cdf;

/// Distribution of the informative subset among the `C(L, R)` candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationLaw {
    /// Uniform over all size-`R` subsets.
    #[default]
    UniformSubsets,
    /// Always the first `R` tokens. Useful for diagnostics.
    FixedWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub l: usize,
    pub r: usize,
    pub theta: f64,
    pub pi: f64,
    pub d: usize,
    /// Unit signal direction. Rotational invariance of the noise makes the
    /// choice immaterial, so it defaults to the first basis vector.
    pub xi: Vec<f64>,
    pub location_law: LocationLaw,
}

impl TaskConfig {
    /// Task with `ξ = e₁` and uniform locations.
    pub fn new(l: usize, r: usize, theta: f64, pi: f64, d: usize) -> Result<Self> {
        let mut xi = vec![0.0; d];
        if d > 0 {
            xi[0] = 1.0;
        }
        let c = TaskConfig {
            l,
            r,
            theta,
            pi,
            d,
            xi,
            location_law: LocationLaw::UniformSubsets,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_law(mut self, law: LocationLaw) -> Self {
        self.location_law = law;
        self
    }

    /// Checks the structural invariants. `π` may sit at 0 or 1 to allow
    /// single-class diagnostics.
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.d == 0 {
            return Err(param("L and d must be positive"));
        }
        if self.r == 0 || self.r > self.l {
            return Err(param(format!("R = {} must lie in [1, L = {}]", self.r, self.l)));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(param(format!("theta = {} must be finite and nonnegative", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(param(format!("pi = {} outside [0, 1]", self.pi)));
        }
        if self.xi.len() != self.d {
            return Err(param("xi must have length d"));
        }
        let n2: f64 = self.xi.iter().map(|v| v * v).sum();
        if (n2.sqrt() - 1.0).abs() > 1e-12 {
            return Err(param(format!("xi has norm {} instead of 1", n2.sqrt())));
        }
        Ok(())
    }

    /// Per-token probability of carrying the signal.
    pub fn marginals(&self) -> Vec<f64> {
        match self.location_law {
            LocationLaw::UniformSubsets => vec![self.r as f64 / self.l as f64; self.l],
            LocationLaw::FixedWindow => (0..self.l).map(|i| if i < self.r { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// `θ R / √L`, the signal-to-noise ratio of the pooled token.
    pub fn pooled_snr(&self) -> f64 {
        self.theta * self.r as f64 / (self.l as f64).sqrt()
    }

    /// Support of the location law with probabilities, if it has at most
    /// `limit` points.
    pub fn location_support(&self, limit: usize) -> Option<Vec<(Vec<u8>, f64)>> {
        match self.location_law {
            LocationLaw::FixedWindow => {
                let v = (0..self.l).map(|i| u8::from(i < self.r)).collect();
                Some(vec![(v, 1.0)])
            }
            LocationLaw::UniformSubsets => {
                let count = binomial(self.l, self.r)?;
                if count > limit as f64 {
                    return None;
                }
                let mut out = Vec::with_capacity(count as usize);
                let p = 1.0 / count;
                let mut idx: Vec<usize> = (0..self.r).collect();
                loop {
                    let mut v = vec![0u8; self.l];
                    for &i in &idx {
                        v[i] = 1;
                    }
                    out.push((v, p));
                    // next combination in lexicographic order
                    let mut k = self.r;
                    while k > 0 && idx[k - 1] == self.l - self.r + k - 1 {
                        k -= 1;
                    }
                    if k == 0 {
                        break;
                    }
                    idx[k - 1] += 1;
                    for j in k..self.r {
                        idx[j] = idx[j - 1] + 1;
                    }
                }
                Some(out)
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> Option<f64> {
    if k > n {
        return None;
    }
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    Some(c.round())
}

/// One labelled input. `x` is `L × d`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: i8,
    /// Informative-token indicator, present for positives only.
    pub v: Option<Vec<u8>>,
}

impl Sample {
    pub fn label(&self) -> f64 {
        f64::from(self.y)
    }
}

/// Draws the indicator of the informative subset.
pub fn sample_location<R: Rng + ?Sized>(config: &TaskConfig, rng: &mut R) -> Result<Vec<u8>> {
    if config.r > config.l {
        return Err(param(format!("R = {} exceeds L = {}", config.r, config.l)));
    }
    let mut v = vec![0u8; config.l];
    match config.location_law {
        LocationLaw::FixedWindow => v[..config.r].fill(1),
        LocationLaw::UniformSubsets => {
            for i in rand::seq::index::sample(rng, config.l, config.r) {
                v[i] = 1;
            }
        }
    }
    Ok(v)
}

/// Fills `out` with a fresh sample, reusing its buffer.
pub fn sample_into<R: Rng + ?Sized>(config: &TaskConfig, rng: &mut R, out: &mut Sample) -> Result<()> {
    let (l, d) = (config.l, config.d);
    let positive = rng.random::<f64>() < config.pi;
    out.y = if positive { 1 } else { -1 };
    out.v = if positive { Some(sample_location(config, rng)?) } else { None };
    out.x.resize(l * d, 0.0);
    for e in out.x.iter_mut() {
        *e = rng.sample(StandardNormal);
    }
    if let Some(v) = &out.v {
        for (row, &on) in out.x.chunks_exact_mut(d).zip(v) {
            if on == 1 {
                for (e, xi) in row.iter_mut().zip(&config.xi) {
                    *e += config.theta * xi;
                }
            }
        }
    }
    Ok(())
}

/// `n` i.i.d. samples.
pub fn sample_batch<R: Rng + ?Sized>(config: &TaskConfig, n: usize, rng: &mut R) -> Result<Vec<Sample>> {
    config.validate()?;
    if n == 0 {
        return Err(param("batch size must be positive"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = Sample {
            x: Vec::new(),
            y: 0,
            v: None,
        };
        sample_into(config, rng, &mut s)?;
        out.push(s);
    }
    Ok(out)
}

/// Overflow-safe softmax.
pub fn softmax(a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    softmax_into(a, &mut out);
    out
}

pub fn softmax_into(a: &[f64], out: &mut [f64]) {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(a) {
        *o = (x - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Scalar gate used by the approximate attention model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// `1 / (1 + e^{-x})`
    #[default]
    Logistic,
    /// `(1 + erf(x)) / 2`
    Erf,
}

impl Gate {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Gate::Logistic => crate::losses::sigmoid(x),
            Gate::Erf => normal_cdf(std::f64::consts::SQRT_2 * x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Attention,
    Pooled,
    Vectorized,
    ApproxAttention,
}

/// Attention classifier parameters `(q, w, b, β)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
    pub beta: f64,
}

/// A fixed feature map `X ↦ f(X)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub kind: FeatureKind,
    pub l: usize,
    pub d: usize,
    /// Query vector; ignored by the linear baselines.
    pub q: Vec<f64>,
    pub beta: f64,
    pub gate: Gate,
}

impl Featurizer {
    pub fn pooled(l: usize, d: usize) -> Self {
        Featurizer {
            kind: FeatureKind::Pooled,
            l,
            d,
            q: Vec::new(),
            beta: 0.0,
            gate: Gate::default(),
        }
    }

    pub fn vectorized(l: usize, d: usize) -> Self {
        Featurizer {
            kind: FeatureKind::Vectorized,
            ..Featurizer::pooled(l, d)
        }
    }

    pub fn attention(l: usize, d: usize, q: Vec<f64>, beta: f64) -> Self {
        Featurizer {
            kind: FeatureKind::Attention,
            l,
            d,
            q,
            beta,
            gate: Gate::default(),
        }
    }

    pub fn approx_attention(l: usize, d: usize, q: Vec<f64>, gate: Gate) -> Self {
        Featurizer {
            kind: FeatureKind::ApproxAttention,
            l,
            d,
            q,
            beta: 1.0,
            gate,
        }
    }

    /// Output dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            FeatureKind::Vectorized => self.l * self.d,
            _ => self.d,
        }
    }

    fn check(&self, x: &[f64], out: &[f64]) -> Result<()> {
        if x.len() != self.l * self.d {
            return Err(param(format!("input has {} entries, expected {}", x.len(), self.l * self.d)));
        }
        if out.len() != self.dim() {
            return Err(param("feature buffer has the wrong length"));
        }
        if matches!(self.kind, FeatureKind::Attention | FeatureKind::ApproxAttention) && self.q.len() != self.d {
            return Err(param("query vector must have length d"));
        }
        Ok(())
    }

    /// Token weights `s(X)` such that `f(X) = Xᵀ s`. Not defined for the
    /// vectorized map.
    pub fn token_weights(&self, x: &[f64]) -> Vec<f64> {
        let (l, d) = (self.l, self.d);
        match self.kind {
            FeatureKind::Pooled | FeatureKind::Vectorized => vec![1.0 / l as f64; l],
            FeatureKind::Attention => {
                if self.beta == 0.0 {
                    return vec![1.0 / l as f64; l];
                }
                let scores: Vec<f64> = x.chunks_exact(d).map(|row| self.beta * dot(row, &self.q)).collect();
                softmax(&scores)
            }
            FeatureKind::ApproxAttention => x
                .chunks_exact(d)
                .map(|row| self.gate.apply(dot(row, &self.q)))
                .collect(),
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(x, out)?;
        if self.kind == FeatureKind::Vectorized {
            out.copy_from_slice(x);
            return Ok(());
        }
        let s = self.token_weights(x);
        out.fill(0.0);
        for (row, &si) in x.chunks_exact(self.d).zip(&s) {
            for (o, &e) in out.iter_mut().zip(row) {
                *o += si * e;
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }
}

/// One-shot featurization of an `L × d` input.
pub fn features(kind: FeatureKind, x: &[f64], l: usize, d: usize, params: Option<&AttentionParams>, gate: Option<Gate>) -> Result<Vec<f64>> {
    let f = match kind {
        FeatureKind::Pooled => Featurizer::pooled(l, d),
        FeatureKind::Vectorized => Featurizer::vectorized(l, d),
        FeatureKind::Attention => {
            let p = params.ok_or_else(|| param("attention features need (q, beta)"))?;
            Featurizer::attention(l, d, p.q.clone(), p.beta)
        }
        FeatureKind::ApproxAttention => {
            let p = params.ok_or_else(|| param("approximate attention needs q"))?;
            Featurizer::approx_attention(l, d, p.q.clone(), gate.unwrap_or_default())
        }
    };
    f.apply(x)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sign(⟨f, w⟩ + b)` with `sign(0) = +1`.
pub fn classify(f: &[f64], w: &[f64], b: f64) -> Result<i8> {
    if f.len() != w.len() {
        return Err(param("feature and weight lengths differ"));
    }
    Ok(if dot(f, w) + b >= 0.0 { 1 } else { -1 })
}

/// Misclassification rate on `n_test` fresh samples, with its binomial
/// standard error.
pub fn empirical_test_error<R: Rng + ?Sized>(
    featurizer: &Featurizer,
    w: &[f64],
    b: f64,
    config: &TaskConfig,
    n_test: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    config.validate()?;
    if n_test < 100 {
        return Err(param("n_test must be at least 100"));
    }
    if w.len() != featurizer.dim() {
        return Err(param("weight vector does not match the featurizer"));
    }
    let mut s = Sample {
        x: Vec::new(),
        y: 0,
        v: None,
    };
    let mut f = vec![0.0; featurizer.dim()];
    let mut wrong = 0usize;
    for _ in 0..n_test {
        sample_into(config, rng, &mut s)?;
        featurizer.apply_into(&s.x, &mut f)?;
        if classify(&f, w, b)? != s.y {
            wrong += 1;
        }
    }
    let p = wrong as f64 / n_test as f64;
    Ok((p, (p * (1.0 - p) / n_test as f64).sqrt()))
}

/// Writes samples in the cache layout: per sample a little-endian header
/// `u64 L, u64 d, i64 label`, followed by `L·d` little-endian `f64`s in
/// row-major order. Location vectors are not stored.
pub fn write_samples<W: Write>(mut out: W, l: usize, d: usize, samples: &[Sample]) -> Result<()> {
    for s in samples {
        if s.x.len() != l * d {
            return Err(param("sample shape does not match the header"));
        }
        out.write_all(&(l as u64).to_le_bytes())?;
        out.write_all(&(d as u64).to_le_bytes())?;
        out.write_all(&i64::from(s.y).to_le_bytes())?;
        for v in &s.x {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads every sample written by [`write_samples`].
pub fn read_samples<R: Read>(mut input: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut word = [0u8; 8];
    loop {
        match input.read_exact(&mut word) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::Io(e)),
        }
        let l = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let d = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let y = i64::from_le_bytes(word);
        if y != 1 && y != -1 {
            return Err(param(format!("corrupt cache: label {y}")));
        }
        let mut x = vec![0.0; l * d];
        for v in x.iter_mut() {
            input.read_exact(&mut word)?;
            *v = f64::from_le_bytes(word);
        }
        out.push(Sample { x, y: y as i8, v: None });
    }
    Ok(out)
}
