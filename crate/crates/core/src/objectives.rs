//! Training objectives: masked cross-entropy, the Barlow-Twins style
//! redundancy-reduction loss between two dropout views, and the supervised
//! contrastive alternative.
//!
//! The Barlow loss consumes the flattened post-interaction hop tokens
//! (`b x (L+1) x d`); the contrastive loss consumes fused node
//! representations of both views stacked row-wise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{add, scale};
use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Batch standardization guard for the cross-correlation matrix.
pub const BARLOW_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslKind {
    #[default]
    None,
    Barlow,
    Scl,
}

impl FromStr for SslKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SslKind::None),
            "barlow" => Ok(SslKind::Barlow),
            "scl" => Ok(SslKind::Scl),
            _ => Err(Error::Config(format!("unknown ssl kind {s:?}"))),
        }
    }
}

impl fmt::Display for SslKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SslKind::None => "none",
            SslKind::Barlow => "barlow",
            SslKind::Scl => "scl",
        })
    }
}

/// Auxiliary-objective settings.
///
/// `barlow` is applied to the interaction output of two dropout views;
/// `scl` to the fused representations of both views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub ssl_kind: SslKind,
    /// Weight of the auxiliary loss.
    pub lambda: f64,
    /// Weight of the off-diagonal (redundancy) term.
    pub alpha: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Length-normalize embeddings before contrastive dot products.
    pub scl_normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ssl_kind: SslKind::None,
            lambda: 5e-4,
            alpha: 0.1,
            tau: 0.5,
            scl_normalize: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- cross-entropy

struct CrossEntropyOp<T> {
    /// softmax minus one-hot, already divided by the number of rows used
    dlogits: Vec<T>,
}

impl<T: Real> Op<T> for CrossEntropyOp<T> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(self.dlogits.iter().map(|&v| v * g[0]).collect())]
    }
}

/// Mean over rows with `mask[i]` of `-log softmax(logits[i])[labels[i]]`,
/// computed with log-sum-exp. `mask = None` uses every row.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize], mask: Option<&[bool]>) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let (b, c) = match shape[..] {
        [b, c] => (b, c),
        _ => {
            return Err(Error::Shape(format!(
                "cross_entropy: logits must be b x c, got {shape:?}"
            )))
        }
    };
    if labels.len() != b || mask.is_some_and(|m| m.len() != b) {
        return Err(Error::Shape(format!(
            "cross_entropy: {b} rows but {} labels",
            labels.len()
        )));
    }
    let used: Vec<usize> = (0..b).filter(|&i| mask.is_none_or(|m| m[i])).collect();
    if used.is_empty() {
        return Err(Error::InvalidArgument("cross_entropy: empty mask".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy: label {bad} >= {c} classes"
        )));
    }
    let x = tape.value(logits).data();
    let inv = T::one() / T::from_usize(used.len()).unwrap();
    let mut total = T::zero();
    let mut dlogits = vec![T::zero(); b * c];
    for &i in &used {
        let row = &x[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[labels[i]];
        for j in 0..c {
            dlogits[i * c + j] = (row[j] - lse).exp() * inv;
        }
        dlogits[i * c + labels[i]] -= inv;
    }
    Ok(tape.push(
        Tensor::scalar(total * inv),
        &[logits],
        Box::new(CrossEntropyOp { dlogits }),
    ))
}

// ---------------------------------------------------------------- barlow

/// Column-standardized copy of a `b x d` matrix plus the per-column `1/std`.
fn standardize<T: Real>(x: &[T], b: usize, d: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let bn = T::from_usize(b).unwrap();
    let mut mean = vec![T::zero(); d];
    for row in x.chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / bn);
    let mut var = vec![T::zero(); d];
    for row in x.chunks_exact(d) {
        for c in 0..d {
            let t = row[c] - mean[c];
            var[c] += t * t;
        }
    }
    let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v / bn + eps).sqrt()).collect();
    let mut z = vec![T::zero(); b * d];
    for (zr, row) in z.chunks_exact_mut(d).zip(x.chunks_exact(d)) {
        for c in 0..d {
            zr[c] = (row[c] - mean[c]) * rstd[c];
        }
    }
    (z, rstd)
}

/// Backward of [`standardize`]: `dx = r * (dz - mean(dz) - z * mean(dz * z))`
/// per column.
fn standardize_backward<T: Real>(z: &[T], rstd: &[T], dz: &[T], b: usize, d: usize) -> Vec<T> {
    let bn = T::from_usize(b).unwrap();
    let mut mdz = vec![T::zero(); d];
    let mut mdzz = vec![T::zero(); d];
    for (zr, gr) in z.chunks_exact(d).zip(dz.chunks_exact(d)) {
        for c in 0..d {
            mdz[c] += gr[c];
            mdzz[c] += gr[c] * zr[c];
        }
    }
    let mut dx = vec![T::zero(); b * d];
    for ((xr, zr), gr) in dx.chunks_exact_mut(d).zip(z.chunks_exact(d)).zip(dz.chunks_exact(d)) {
        for c in 0..d {
            xr[c] = rstd[c] * (gr[c] - mdz[c] / bn - zr[c] * mdzz[c] / bn);
        }
    }
    dx
}

struct BarlowOp<T> {
    b: usize,
    d: usize,
    za: Vec<T>,
    zb: Vec<T>,
    ra: Vec<T>,
    rb: Vec<T>,
    /// dLoss/dC
    dc: Vec<T>,
}

impl<T: Real> Op<T> for BarlowOp<T> {
    fn name(&self) -> &'static str {
        "barlow"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (b, d) = (self.b, self.d);
        let k = g[0] / T::from_usize(b).unwrap();
        // C = za^T zb / b  =>  dza = zb dC^T / b,  dzb = za dC / b
        let da = needs[0].then(|| {
            let mut dz = vec![T::zero(); b * d];
            T::gemm(b, d, d, k, &self.zb, false, &self.dc, true, T::zero(), &mut dz);
            standardize_backward(&self.za, &self.ra, &dz, b, d)
        });
        let db = needs[1].then(|| {
            let mut dz = vec![T::zero(); b * d];
            T::gemm(b, d, d, k, &self.za, false, &self.dc, false, T::zero(), &mut dz);
            standardize_backward(&self.zb, &self.rb, &dz, b, d)
        });
        vec![da, db]
    }
}

/// Cross-correlation of two views after per-dimension batch standardization:
/// `C = za^T zb / b`, where each view is flattened to `b x d'`.
pub fn cross_correlation<T: Real>(a: &[T], b_view: &[T], b: usize, d: usize) -> Vec<T> {
    let eps = T::lit(BARLOW_EPS);
    let (za, _) = standardize(a, b, d, eps);
    let (zb, _) = standardize(b_view, b, d, eps);
    let mut c = vec![T::zero(); d * d];
    T::gemm(
        d,
        b,
        d,
        T::one() / T::from_usize(b).unwrap(),
        &za,
        true,
        &zb,
        false,
        T::zero(),
        &mut c,
    );
    c
}

/// `sum_i (1 - C_ii)^2 + alpha * sum_{i != j} C_ij^2` for two views of shape
/// `b x ...` (flattened per row).
pub fn barlow_loss<T: Real>(tape: &mut Tape<T>, view_a: Var, view_b: Var, alpha: f64) -> Result<Var> {
    let sa = tape.shape(view_a).to_vec();
    if sa != tape.shape(view_b) || sa.is_empty() {
        return Err(Error::Shape(format!(
            "barlow: views {sa:?} vs {:?}",
            tape.shape(view_b)
        )));
    }
    let b = sa[0];
    if b < 2 {
        return Err(Error::InvalidArgument(format!("barlow: batch of {b} has no variance")));
    }
    let d = tape.value(view_a).len() / b;
    let eps = T::lit(BARLOW_EPS);
    let (za, ra) = standardize(tape.value(view_a).data(), b, d, eps);
    let (zb, rb) = standardize(tape.value(view_b).data(), b, d, eps);
    let mut c = vec![T::zero(); d * d];
    T::gemm(
        d,
        b,
        d,
        T::one() / T::from_usize(b).unwrap(),
        &za,
        true,
        &zb,
        false,
        T::zero(),
        &mut c,
    );
    let alpha = T::lit(alpha);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut dc = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            let v = c[i * d + j];
            if i == j {
                loss += (T::one() - v) * (T::one() - v);
                dc[i * d + j] = -two * (T::one() - v);
            } else {
                loss += alpha * v * v;
                dc[i * d + j] = two * alpha * v;
            }
        }
    }
    let op = BarlowOp {
        b,
        d,
        za,
        zb,
        ra,
        rb,
        dc,
    };
    Ok(tape.push(Tensor::scalar(loss), &[view_a, view_b], Box::new(op)))
}

// ---------------------------------------------------------------- supervised contrastive

struct SupConOp<T> {
    n: usize,
    d: usize,
    units: Vec<T>,
    norms: Option<Vec<T>>,
    /// dLoss/dS for the similarity matrix S = U U^T / tau
    ds: Vec<T>,
    tau: T,
}

impl<T: Real> Op<T> for SupConOp<T> {
    fn name(&self) -> &'static str {
        "supcon"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        let (n, d) = (self.n, self.d);
        let mut sym = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                sym[i * n + j] = self.ds[i * n + j] + self.ds[j * n + i];
            }
        }
        let mut du = vec![T::zero(); n * d];
        T::gemm(
            n,
            n,
            d,
            g[0] / self.tau,
            &sym,
            false,
            &self.units,
            false,
            T::zero(),
            &mut du,
        );
        let dz = match &self.norms {
            None => du,
            Some(norms) => {
                let mut dz = vec![T::zero(); n * d];
                for i in 0..n {
                    let u = &self.units[i * d..(i + 1) * d];
                    let gu = &du[i * d..(i + 1) * d];
                    let dot: T = u.iter().zip(gu).map(|(&a, &b)| a * b).sum();
                    for c in 0..d {
                        dz[i * d + c] = (gu[c] - u[c] * dot) / norms[i];
                    }
                }
                dz
            }
        };
        vec![Some(dz)]
    }
}

/// Supervised contrastive loss over `n` embeddings (both views stacked):
/// for each anchor with at least one positive, the mean over positives of
/// `-log(exp(s_ip) / sum_{a != i} exp(s_ia))`, summed over anchors, with
/// `s = z_i . z_j / tau` on length-normalized embeddings when `normalize` is
/// set. Anchors without positives are skipped.
pub fn scl_loss<T: Real>(tape: &mut Tape<T>, z: Var, labels: &[usize], tau: f64, normalize: bool) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scl: temperature must be > 0, got {tau}"
        )));
    }
    let shape = tape.shape(z).to_vec();
    let (n, d) = match shape[..] {
        [n, d] => (n, d),
        _ => return Err(Error::Shape(format!("scl: embeddings must be n x d, got {shape:?}"))),
    };
    if labels.len() != n {
        return Err(Error::Shape(format!("scl: {n} embeddings but {} labels", labels.len())));
    }
    let raw = tape.value(z).data();
    let (units, norms) = if normalize {
        let mut units = raw.to_vec();
        let mut norms = vec![T::zero(); n];
        for i in 0..n {
            let row = &mut units[i * d..(i + 1) * d];
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(1e-12));
            norms[i] = norm;
            row.iter_mut().for_each(|v| *v = *v / norm);
        }
        (units, Some(norms))
    } else {
        (raw.to_vec(), None)
    };
    let tau_t = T::lit(tau);
    let mut s = vec![T::zero(); n * n];
    T::gemm(
        n,
        d,
        n,
        T::one() / tau_t,
        &units,
        false,
        &units,
        true,
        T::zero(),
        &mut s,
    );

    let mut loss = T::zero();
    let mut ds = vec![T::zero(); n * n];
    let mut skipped = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        let row = &s[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(T::neg_infinity(), T::max);
        let sum_exp: T = (0..n).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let inv_p = T::one() / T::from_usize(positives.len()).unwrap();
        for &p in &positives {
            loss += (lse - row[p]) * inv_p;
            ds[i * n + p] -= inv_p;
        }
        for a in (0..n).filter(|&a| a != i) {
            ds[i * n + a] += (row[a] - lse).exp();
        }
    }
    if skipped > 0 {
        log::warn!("scl: skipped {skipped} anchor(s) without a positive");
    }
    let op = SupConOp {
        n,
        d,
        units,
        norms,
        ds,
        tau: tau_t,
    };
    Ok(tape.push(Tensor::scalar(loss), &[z], Box::new(op)))
}

/// `ce + lambda * ssl`; returns `ce` unchanged when there is no auxiliary term
/// or `lambda == 0`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, ce: Var, ssl: Option<Var>, lambda: f64) -> Result<Var> {
    match ssl {
        Some(s) if lambda != 0.0 => {
            let weighted = scale(tape, s, T::lit(lambda));
            add(tape, ce, weighted)
        }
        _ => Ok(ce),
    }
}
