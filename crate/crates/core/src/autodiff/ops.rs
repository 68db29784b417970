//! Differentiable kernels. Each public function runs the forward pass and
//! records the matching reverse rule on the tape.

use rand::Rng;

use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn out_shape_with_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    match s.last_mut() {
        Some(x) => *x = last,
        None => s.push(last),
    }
    s
}

// ---------------------------------------------------------------- linear

struct LinearOp {
    rows: usize,
    m: usize,
    n: usize,
}

impl<T: Real> Op<T> for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (r, m, n) = (self.rows, self.m, self.n);
        let x = inputs[0].data();
        let w = inputs[1].data();
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); r * m];
            T::gemm(r, n, m, T::one(), g, false, w, true, T::zero(), &mut dx);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![T::zero(); m * n];
            T::gemm(m, r, n, T::one(), x, true, g, false, T::zero(), &mut dw);
            dw
        });
        let mut out = vec![dx, dw];
        if inputs.len() > 2 {
            out.push(needs[2].then(|| {
                let mut db = vec![T::zero(); n];
                for row in g.chunks_exact(n) {
                    for (a, &b) in db.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                db
            }));
        }
        out
    }
}

/// `x W (+ b)` over the last axis of `x`; leading axes are treated as rows.
pub fn linear<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    if ws.len() != 2 || xs.last() != Some(&ws[0]) {
        return shape_err(format!("linear: input {xs:?} vs weight {ws:?}"));
    }
    let (m, n) = (ws[0], ws[1]);
    if let Some(b) = b {
        if tape.shape(b) != [n] {
            return shape_err(format!("linear: bias {:?} vs {n} outputs", tape.shape(b)));
        }
    }
    let rows = tape.value(x).len() / m;
    let mut out = vec![T::zero(); rows * n];
    T::gemm(
        rows,
        m,
        n,
        T::one(),
        tape.value(x).data(),
        false,
        tape.value(w).data(),
        false,
        T::zero(),
        &mut out,
    );
    if let Some(b) = b {
        let bias = tape.value(b).data();
        for row in out.chunks_exact_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
    }
    let value = Tensor::new(out_shape_with_last(&xs, n), out)?;
    let inputs: Vec<Var> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
    Ok(tape.push(value, &inputs, Box::new(LinearOp { rows, m, n })))
}

// ---------------------------------------------------------------- elementwise

struct AddBroadcastOp {
    tile: usize,
}

impl<T: Real> Op<T> for AddBroadcastOp {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let dy = needs[1].then(|| {
            let mut dy = vec![T::zero(); self.tile];
            for chunk in g.chunks_exact(self.tile) {
                for (a, &b) in dy.iter_mut().zip(chunk) {
                    *a += b;
                }
            }
            dy
        });
        vec![needs[0].then(|| g.to_vec()), dy]
    }
}

/// `x + y` where the shape of `y` is a suffix of the shape of `x`; `y` is
/// repeated over the leading axes. Covers residual connections (equal shapes)
/// and per-position embeddings broadcast over a batch.
pub fn add<T: Real>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    let xs = tape.shape(x);
    let ys = tape.shape(y);
    if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
        return shape_err(format!("add: {ys:?} does not broadcast to {xs:?}"));
    }
    let tile = tape.value(y).len().max(1);
    let yd = tape.value(y).data().to_vec();
    let mut out = tape.value(x).clone();
    for chunk in out.data_mut().chunks_exact_mut(tile) {
        for (o, &b) in chunk.iter_mut().zip(&yd) {
            *o += b;
        }
    }
    Ok(tape.push(out, &[x, y], Box::new(AddBroadcastOp { tile })))
}

/// Residual connection `x + y` with equal shapes.
pub fn residual<T: Real>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return shape_err(format!("residual: {:?} vs {:?}", tape.shape(x), tape.shape(y)));
    }
    add(tape, x, y)
}

struct MulOp;

impl<T: Real> Op<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, y) = (i[0].data(), i[1].data());
        vec![
            needs[0].then(|| g.iter().zip(y).map(|(&a, &b)| a * b).collect()),
            needs[1].then(|| g.iter().zip(x).map(|(&a, &b)| a * b).collect()),
        ]
    }
}

/// Elementwise product of equal-shaped values.
pub fn mul<T: Real>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return shape_err(format!("mul: {:?} vs {:?}", tape.shape(x), tape.shape(y)));
    }
    let data = tape
        .value(x)
        .data()
        .iter()
        .zip(tape.value(y).data())
        .map(|(&a, &b)| a * b)
        .collect();
    let value = Tensor::new(tape.shape(x).to_vec(), data)?;
    Ok(tape.push(value, &[x, y], Box::new(MulOp)))
}

struct ScaleOp<T>(T);

impl<T: Real> Op<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.0).collect())]
    }
}

pub fn scale<T: Real>(tape: &mut Tape<T>, x: Var, c: T) -> Var {
    let mut v = tape.value(x).clone();
    v.data_mut().iter_mut().for_each(|a| *a *= c);
    tape.push(v, &[x], Box::new(ScaleOp(c)))
}

struct SumOp {
    len: usize,
}

impl<T: Real> Op<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0]; self.len])]
    }
}

/// Sum of all entries, as a scalar.
pub fn sum<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    let s: T = tape.value(x).data().iter().copied().sum();
    let len = tape.value(x).len();
    tape.push(Tensor::scalar(s), &[x], Box::new(SumOp { len }))
}

struct ReluOp;

impl<T: Real> Op<T> for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, _i: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            g.iter()
                .zip(out.data())
                .map(|(&gg, &y)| if y > T::zero() { gg } else { T::zero() })
                .collect(),
        )]
    }
}

pub fn relu<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    let mut v = tape.value(x).clone();
    v.data_mut().iter_mut().for_each(|a| *a = a.max(T::zero()));
    tape.push(v, &[x], Box::new(ReluOp))
}

struct ReshapeOp;

impl<T: Real> Op<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn reshape<T: Real>(tape: &mut Tape<T>, x: Var, shape: Vec<usize>) -> Result<Var> {
    let v = tape.value(x).clone().reshape(shape)?;
    Ok(tape.push(v, &[x], Box::new(ReshapeOp)))
}

/// `b x L x d -> b x (L*d)`.
pub fn flatten<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.is_empty() {
        return shape_err("flatten: scalar input".into());
    }
    let rest = s[1..].iter().product();
    reshape(tape, x, vec![s[0], rest])
}

// ---------------------------------------------------------------- normalization

struct LayerNormOp<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
    d: usize,
}

impl<T: Real> Op<T> for LayerNormOp<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let d = self.d;
        let gamma = i[1].data();
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        let mut dx = if needs[0] { vec![T::zero(); g.len()] } else { Vec::new() };
        let dn = T::from_usize(d).unwrap();
        for (r, (grow, xrow)) in g.chunks_exact(d).zip(self.xhat.chunks_exact(d)).enumerate() {
            for c in 0..d {
                dgamma[c] += grow[c] * xrow[c];
                dbeta[c] += grow[c];
            }
            if needs[0] {
                let mut s1 = T::zero();
                let mut s2 = T::zero();
                for c in 0..d {
                    let dxh = grow[c] * gamma[c];
                    s1 += dxh;
                    s2 += dxh * xrow[c];
                }
                let k = self.rstd[r] / dn;
                for c in 0..d {
                    let dxh = grow[c] * gamma[c];
                    dx[r * d + c] = k * (dn * dxh - s1 - xrow[c] * s2);
                }
            }
        }
        vec![
            needs[0].then_some(dx),
            needs[1].then_some(dgamma),
            needs[2].then_some(dbeta),
        ]
    }
}

/// Standardizes the last axis (biased variance) then applies `gamma`, `beta`.
pub fn layer_norm<T: Real>(tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
    let d = tape.value(x).last_dim();
    if tape.shape(gamma) != [d] || tape.shape(beta) != [d] {
        return shape_err(format!("layer_norm: affine params must have shape [{d}]"));
    }
    let xv = tape.value(x);
    let g = tape.value(gamma).data();
    let b = tape.value(beta).data();
    let rows = xv.len() / d;
    let dn = T::from_usize(d).unwrap();
    let mut xhat = vec![T::zero(); xv.len()];
    let mut rstd = vec![T::zero(); rows];
    let mut out = vec![T::zero(); xv.len()];
    for r in 0..rows {
        let row = &xv.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            out[r * d + c] = h * g[c] + b[c];
        }
    }
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(tape.push(value, &[x, gamma, beta], Box::new(LayerNormOp { xhat, rstd, d })))
}

// ---------------------------------------------------------------- dropout

struct DropoutOp<T> {
    mask: Vec<T>,
}

impl<T: Real> Op<T> for DropoutOp<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().zip(&self.mask).map(|(&a, &m)| a * m).collect())]
    }
}

/// Inverted dropout: entries are kept with probability `1 - p` and scaled by
/// `1 / (1 - p)`. Identity when `training` is false or `p == 0`.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout rate {p} must be in [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let len = tape.value(x).len();
    let mask: Vec<T> = (0..len)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect();
    let mut v = tape.value(x).clone();
    v.data_mut().iter_mut().zip(&mask).for_each(|(a, &m)| *a *= m);
    let save = tape.requires_grad(x);
    Ok(tape.push(
        v,
        &[x],
        Box::new(DropoutOp {
            mask: if save { mask } else { Vec::new() },
        }),
    ))
}

// ---------------------------------------------------------------- softmax

fn softmax_rows<T: Real>(data: &mut [T], d: usize) {
    for row in data.chunks_exact_mut(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
}

struct SoftmaxOp {
    d: usize,
}

impl<T: Real> Op<T> for SoftmaxOp {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _i: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        let d = self.d;
        let mut dx = vec![T::zero(); g.len()];
        for ((drow, grow), yrow) in dx
            .chunks_exact_mut(d)
            .zip(g.chunks_exact(d))
            .zip(out.data().chunks_exact(d))
        {
            let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
            for c in 0..d {
                drow[c] = yrow[c] * (grow[c] - dot);
            }
        }
        vec![Some(dx)]
    }
}

/// Softmax over the last axis, computed with max subtraction.
pub fn softmax<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    let d = tape.value(x).last_dim();
    let mut v = tape.value(x).clone();
    softmax_rows(v.data_mut(), d);
    tape.push(v, &[x], Box::new(SoftmaxOp { d }))
}

// ---------------------------------------------------------------- hop-axis kernels

fn hop_dims<T: Real>(tape: &Tape<T>, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [b, l, d] if l >= 1 => Ok((b, l, d)),
        ref s => shape_err(format!("{what}: expected b x L x d with L >= 1, got {s:?}")),
    }
}

struct MeanPoolOp {
    l: usize,
    d: usize,
}

impl<T: Real> Op<T> for MeanPoolOp {
    fn name(&self) -> &'static str {
        "mean_pool"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::from_usize(self.l).unwrap();
        let mut dx = Vec::with_capacity(g.len() * self.l);
        for grow in g.chunks_exact(self.d) {
            for _ in 0..self.l {
                dx.extend(grow.iter().map(|&v| v * inv));
            }
        }
        vec![Some(dx)]
    }
}

/// Mean over the hop axis: `b x L x d -> b x d`.
pub fn mean_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (b, l, d) = hop_dims(tape, x, "mean_pool")?;
    let inv = T::one() / T::from_usize(l).unwrap();
    let xd = tape.value(x).data();
    let mut out = vec![T::zero(); b * d];
    for i in 0..b {
        for j in 0..l {
            let src = &xd[(i * l + j) * d..(i * l + j + 1) * d];
            for (o, &s) in out[i * d..(i + 1) * d].iter_mut().zip(src) {
                *o += s;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(tape.push(Tensor::new(vec![b, d], out)?, &[x], Box::new(MeanPoolOp { l, d })))
}

struct MaxPoolOp {
    argmax: Vec<usize>,
    l: usize,
    d: usize,
}

impl<T: Real> Op<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "max_pool"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        let (l, d) = (self.l, self.d);
        let mut dx = vec![T::zero(); g.len() * l];
        for (k, (&gv, &j)) in g.iter().zip(&self.argmax).enumerate() {
            let (i, c) = (k / d, k % d);
            dx[(i * l + j) * d + c] = gv;
        }
        vec![Some(dx)]
    }
}

/// Elementwise max over the hop axis (first maximal hop gets the gradient).
pub fn max_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (b, l, d) = hop_dims(tape, x, "max_pool")?;
    let xd = tape.value(x).data();
    let mut out = vec![T::zero(); b * d];
    let mut argmax = vec![0usize; b * d];
    for i in 0..b {
        for c in 0..d {
            let mut best = 0;
            for j in 1..l {
                if xd[(i * l + j) * d + c] > xd[(i * l + best) * d + c] {
                    best = j;
                }
            }
            out[i * d + c] = xd[(i * l + best) * d + c];
            argmax[i * d + c] = best;
        }
    }
    Ok(tape.push(
        Tensor::new(vec![b, d], out)?,
        &[x],
        Box::new(MaxPoolOp { argmax, l, d }),
    ))
}

struct HopMixOp {
    b: usize,
    l: usize,
    d: usize,
    exclude_self: bool,
}

impl HopMixOp {
    fn apply<T: Real>(&self, src: &[T], dst: &mut [T]) {
        let (l, d) = (self.l, self.d);
        let denom = if self.exclude_self { l.saturating_sub(1) } else { l };
        if denom == 0 {
            dst.fill(T::zero());
            return;
        }
        let inv = T::one() / T::from_usize(denom).unwrap();
        let mut total = vec![T::zero(); d];
        for i in 0..self.b {
            total.fill(T::zero());
            for j in 0..l {
                for (t, &s) in total.iter_mut().zip(&src[(i * l + j) * d..(i * l + j + 1) * d]) {
                    *t += s;
                }
            }
            for j in 0..l {
                let base = (i * l + j) * d;
                for c in 0..d {
                    let own = if self.exclude_self { src[base + c] } else { T::zero() };
                    dst[base + c] = (total[c] - own) * inv;
                }
            }
        }
    }
}

impl<T: Real> Op<T> for HopMixOp {
    fn name(&self) -> &'static str {
        "hop_mix"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], _n: &[bool]) -> Vec<Option<Vec<T>>> {
        // the mixing matrix is symmetric, so the adjoint is the same map
        let mut dx = vec![T::zero(); g.len()];
        self.apply(g, &mut dx);
        vec![Some(dx)]
    }
}

/// Replaces every hop token by the mean of all tokens of the same node, or by
/// the mean of the other tokens when `exclude_self` is set (zero if there are
/// none). This is message passing on the fully connected hop graph.
pub fn hop_mix<T: Real>(tape: &mut Tape<T>, x: Var, exclude_self: bool) -> Result<Var> {
    let (b, l, d) = hop_dims(tape, x, "hop_mix")?;
    let op = HopMixOp { b, l, d, exclude_self };
    let mut out = vec![T::zero(); b * l * d];
    op.apply(tape.value(x).data(), &mut out);
    Ok(tape.push(Tensor::new(vec![b, l, d], out)?, &[x], Box::new(op)))
}

struct WeightedHopSumOp {
    l: usize,
    d: usize,
}

impl<T: Real> Op<T> for WeightedHopSumOp {
    fn name(&self) -> &'static str {
        "weighted_hop_sum"
    }

    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (l, d) = (self.l, self.d);
        let h = i[0].data();
        let w = i[1].data();
        let b = g.len() / d;
        let dh = needs[0].then(|| {
            let mut dh = vec![T::zero(); h.len()];
            for n in 0..b {
                for j in 0..l {
                    let wj = w[n * l + j];
                    for c in 0..d {
                        dh[(n * l + j) * d + c] = wj * g[n * d + c];
                    }
                }
            }
            dh
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![T::zero(); w.len()];
            for n in 0..b {
                for j in 0..l {
                    dw[n * l + j] = (0..d).map(|c| h[(n * l + j) * d + c] * g[n * d + c]).sum();
                }
            }
            dw
        });
        vec![dh, dw]
    }
}

/// `z[n] = sum_j w[n, j] * h[n, j]` for `h: b x L x d`, `w: b x L`.
pub fn weighted_hop_sum<T: Real>(tape: &mut Tape<T>, h: Var, w: Var) -> Result<Var> {
    let (b, l, d) = hop_dims(tape, h, "weighted_hop_sum")?;
    if tape.shape(w) != [b, l] {
        return shape_err(format!("weighted_hop_sum: weights {:?} vs [{b}, {l}]", tape.shape(w)));
    }
    let hd = tape.value(h).data();
    let wd = tape.value(w).data();
    let mut out = vec![T::zero(); b * d];
    for n in 0..b {
        for j in 0..l {
            let wj = wd[n * l + j];
            for c in 0..d {
                out[n * d + c] += wj * hd[(n * l + j) * d + c];
            }
        }
    }
    Ok(tape.push(
        Tensor::new(vec![b, d], out)?,
        &[h, w],
        Box::new(WeightedHopSumOp { l, d }),
    ))
}

// ---------------------------------------------------------------- concatenation

struct ConcatLastOp {
    da: usize,
    db: usize,
}

impl<T: Real> Op<T> for ConcatLastOp {
    fn name(&self) -> &'static str {
        "concat_last"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (da, db) = (self.da, self.db);
        let rows = g.len() / (da + db);
        let mut ga = Vec::with_capacity(rows * da);
        let mut gb = Vec::with_capacity(rows * db);
        for row in g.chunks_exact(da + db) {
            ga.extend_from_slice(&row[..da]);
            gb.extend_from_slice(&row[da..]);
        }
        vec![needs[0].then_some(ga), needs[1].then_some(gb)]
    }
}

/// Concatenates along the last axis; leading axes must agree.
pub fn concat_last<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let sa = tape.shape(a).to_vec();
    let sb = tape.shape(b).to_vec();
    if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return shape_err(format!("concat_last: {sa:?} vs {sb:?}"));
    }
    let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
    let rows = tape.value(a).len() / da.max(1);
    let (ad, bd) = (tape.value(a).data(), tape.value(b).data());
    let mut out = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        out.extend_from_slice(&ad[r * da..(r + 1) * da]);
        out.extend_from_slice(&bd[r * db..(r + 1) * db]);
    }
    let value = Tensor::new(out_shape_with_last(&sa, da + db), out)?;
    Ok(tape.push(value, &[a, b], Box::new(ConcatLastOp { da, db })))
}

struct ConcatRowsOp {
    split: usize,
}

impl<T: Real> Op<T> for ConcatRowsOp {
    fn name(&self) -> &'static str {
        "concat_rows"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![
            needs[0].then(|| g[..self.split].to_vec()),
            needs[1].then(|| g[self.split..].to_vec()),
        ]
    }
}

/// Stacks two values along the first axis.
pub fn concat_rows<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let sa = tape.shape(a).to_vec();
    let sb = tape.shape(b).to_vec();
    if sa.is_empty() || sa.len() != sb.len() || sa[1..] != sb[1..] {
        return shape_err(format!("concat_rows: {sa:?} vs {sb:?}"));
    }
    let mut data = tape.value(a).data().to_vec();
    let split = data.len();
    data.extend_from_slice(tape.value(b).data());
    let mut shape = sa;
    shape[0] += sb[0];
    Ok(tape.push(Tensor::new(shape, data)?, &[a, b], Box::new(ConcatRowsOp { split })))
}

// ---------------------------------------------------------------- attention

struct AttentionOp<T> {
    b: usize,
    l: usize,
    d: usize,
    heads: usize,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
}

impl<T: Real> AttentionOp<T> {
    fn scale(&self) -> T {
        T::one() / T::from_usize(self.d / self.heads).unwrap().sqrt()
    }
}

impl<T: Real> Op<T> for AttentionOp<T> {
    fn name(&self) -> &'static str {
        "multi_head_attention"
    }

    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (b, l, d, h) = (self.b, self.l, self.d, self.heads);
        let dh = d / h;
        let scale = self.scale();
        let rows = b * l;
        let mut dq = vec![T::zero(); rows * d];
        let mut dk = vec![T::zero(); rows * d];
        let mut dv = vec![T::zero(); rows * d];
        let mut dp = vec![T::zero(); l * l];
        for n in 0..b {
            for head in 0..h {
                let p = &self.probs[(n * h + head) * l * l..(n * h + head + 1) * l * l];
                let col = |t: usize| (n * l + t) * d + head * dh;
                for qi in 0..l {
                    for kj in 0..l {
                        let (a, c) = (col(qi), col(kj));
                        dp[qi * l + kj] = (0..dh).map(|e| g[a + e] * self.v[c + e]).sum();
                        let pij = p[qi * l + kj];
                        for e in 0..dh {
                            dv[c + e] += pij * g[a + e];
                        }
                    }
                }
                for qi in 0..l {
                    let row = &p[qi * l..(qi + 1) * l];
                    let dot: T = row.iter().zip(&dp[qi * l..(qi + 1) * l]).map(|(&x, &y)| x * y).sum();
                    for kj in 0..l {
                        let ds = row[kj] * (dp[qi * l + kj] - dot) * scale;
                        let (a, c) = (col(qi), col(kj));
                        for e in 0..dh {
                            dq[a + e] += ds * self.k[c + e];
                            dk[c + e] += ds * self.q[a + e];
                        }
                    }
                }
            }
        }
        let x = i[0].data();
        let weight_grad = |need: bool, dy: &[T]| {
            need.then(|| {
                let mut dw = vec![T::zero(); d * d];
                T::gemm(d, rows, d, T::one(), x, true, dy, false, T::zero(), &mut dw);
                dw
            })
        };
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); rows * d];
            for (dy, w) in [(&dq, i[1]), (&dk, i[2]), (&dv, i[3])] {
                T::gemm(rows, d, d, T::one(), dy, false, w.data(), true, T::one(), &mut dx);
            }
            dx
        });
        vec![
            dx,
            weight_grad(needs[1], &dq),
            weight_grad(needs[2], &dk),
            weight_grad(needs[3], &dv),
        ]
    }
}

/// Scaled dot-product self-attention over the hop axis of `x: b x L x d`.
///
/// `wq`, `wk`, `wv` are `d x d`; head `h` uses columns `h*d/heads..(h+1)*d/heads`
/// of each projection and scores are scaled by `1/sqrt(d/heads)`. Head
/// outputs are concatenated with no output projection.
pub fn multi_head_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    heads: usize,
) -> Result<Var> {
    let (b, l, d) = hop_dims(tape, x, "multi_head_attention")?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "hidden size {d} is not divisible by {heads} heads"
        )));
    }
    for w in [wq, wk, wv] {
        if tape.shape(w) != [d, d] {
            return shape_err(format!("attention projection {:?} vs [{d}, {d}]", tape.shape(w)));
        }
    }
    let rows = b * l;
    let project = |w: Var| {
        let mut out = vec![T::zero(); rows * d];
        T::gemm(
            rows,
            d,
            d,
            T::one(),
            tape.value(x).data(),
            false,
            tape.value(w).data(),
            false,
            T::zero(),
            &mut out,
        );
        out
    };
    let (q, k, v) = (project(wq), project(wk), project(wv));
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut probs = vec![T::zero(); b * heads * l * l];
    let mut out = vec![T::zero(); rows * d];
    for n in 0..b {
        for head in 0..heads {
            let p = &mut probs[(n * heads + head) * l * l..(n * heads + head + 1) * l * l];
            let col = |t: usize| (n * l + t) * d + head * dh;
            for qi in 0..l {
                for kj in 0..l {
                    let (a, c) = (col(qi), col(kj));
                    p[qi * l + kj] = (0..dh).map(|e| q[a + e] * k[c + e]).sum::<T>() * scale;
                }
            }
            softmax_rows(p, l);
            for qi in 0..l {
                let a = col(qi);
                for kj in 0..l {
                    let pij = p[qi * l + kj];
                    let c = col(kj);
                    for e in 0..dh {
                        out[a + e] += pij * v[c + e];
                    }
                }
            }
        }
    }
    let value = Tensor::new(vec![b, l, d], out)?;
    let op = AttentionOp {
        b,
        l,
        d,
        heads,
        q,
        k,
        v,
        probs,
    };
    Ok(tape.push(value, &[x, wq, wk, wv], Box::new(op)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Weighted sum with fixed random coefficients so every output entry
    /// contributes a distinct amount to the scalar being differentiated.
    fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tape.shape(y).to_vec();
        let c = tape.leaf(rand_tensor(&mut rng, &shape), false);
        let p = mul(tape, y, c).unwrap();
        sum(tape, p)
    }

    const TOL: f64 = 1e-6;

    #[test]
    fn linear_forward_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), false);
        let w = t.leaf(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(), false);
        let b = t.leaf(Tensor::new(vec![1], vec![0.5]).unwrap(), false);
        let y = linear(&mut t, x, w, Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[3.5]);

        let eye = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), false);
        let y = linear(&mut t, x, eye, None).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);

        let bad = t.leaf(Tensor::zeros(vec![3, 1]), false);
        assert!(linear(&mut t, x, bad, None).is_err());
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = vec![
            rand_tensor(&mut rng, &[3, 4]),
            rand_tensor(&mut rng, &[4, 2]),
            rand_tensor(&mut rng, &[2]),
        ];
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let y = linear(t, v[0], v[1], Some(v[2]))?;
            Ok(probe(t, y, 1))
        })
        .unwrap();
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn layer_norm_examples_and_gradients() {
        let mut t = Tape::<f64>::new();
        let g = t.leaf(Tensor::full(vec![2], 1.0), false);
        let b = t.leaf(Tensor::zeros(vec![2]), false);
        let x = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 5.0]).unwrap(), false);
        let y = layer_norm(&mut t, x, g, b, 1e-5).unwrap();
        let v = t.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
        assert_eq!(&v[2..], &[0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![
            rand_tensor(&mut rng, &[3, 5]),
            rand_tensor(&mut rng, &[5]),
            rand_tensor(&mut rng, &[5]),
        ];
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let y = layer_norm(t, v[0], v[1], v[2], 1e-5)?;
            Ok(probe(t, y, 3))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::full(vec![10], 1.0), true);
        assert_eq!(dropout(&mut t, x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut t, x, 0.9, false, &mut rng).unwrap(), x);
        assert!(dropout(&mut t, x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 16;
        let masks = 100_000;
        let mut acc = vec![0.0f64; n];
        for _ in 0..masks {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::full(vec![n], 1.0), false);
            let y = dropout(&mut t, x, 0.5, true, &mut rng).unwrap();
            for (a, &v) in acc.iter_mut().zip(t.value(y).data()) {
                *a += v;
            }
        }
        for a in acc {
            assert!((a / masks as f64 - 1.0).abs() < 0.01, "{a}");
        }
    }

    #[test]
    fn dropout_backward_uses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::full(vec![64], 1.0), true);
        let y = dropout(&mut t, x, 0.5, true, &mut rng).unwrap();
        let s = sum(&mut t, y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), t.value(y).data());
    }

    #[test]
    fn softmax_examples_and_gradients() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1000.0, 0.0]).unwrap(), false);
        let y = softmax(&mut t, x);
        assert_eq!(t.value(y).data(), &[0.5, 0.5, 1.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![rand_tensor(&mut rng, &[2, 5])];
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let y = softmax(t, v[0]);
            Ok(probe(t, y, 5))
        })
        .unwrap();
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn pooling_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![1, 2, 2], vec![0.0, 2.0, 2.0, 0.0]).unwrap(), false);
        let m = mean_pool(&mut t, x).unwrap();
        let mx = max_pool(&mut t, x).unwrap();
        assert_eq!(t.value(m).data(), &[1.0, 1.0]);
        assert_eq!(t.value(mx).data(), &[2.0, 2.0]);

        let same = t.leaf(
            Tensor::new(vec![1, 3, 2], vec![1.0, -2.0, 1.0, -2.0, 1.0, -2.0]).unwrap(),
            false,
        );
        let m = mean_pool(&mut t, same).unwrap();
        let mx = max_pool(&mut t, same).unwrap();
        assert_eq!(t.value(m).data(), &[1.0, -2.0]);
        assert_eq!(t.value(mx).data(), &[1.0, -2.0]);
    }

    #[test]
    fn mean_pool_spreads_gradient_evenly() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(vec![1, 4, 2]), true);
        let m = mean_pool(&mut t, x).unwrap();
        let s = sum(&mut t, m);
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().iter().all(|&g| g == 0.25));
    }

    #[test]
    fn hop_kernel_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[2, 3, 4]);
        let w = rand_tensor(&mut rng, &[2, 3]);
        for (name, f) in [
            ("mean", 0usize),
            ("max", 1),
            ("mix_all", 2),
            ("mix_others", 3),
            ("weighted", 4),
            ("relu", 5),
            ("flatten", 6),
        ] {
            let r = check_gradients(&[x.clone(), w.clone()], 1e-5, |t, v| {
                let y = match f {
                    0 => mean_pool(t, v[0])?,
                    1 => max_pool(t, v[0])?,
                    2 => hop_mix(t, v[0], false)?,
                    3 => hop_mix(t, v[0], true)?,
                    4 => weighted_hop_sum(t, v[0], v[1])?,
                    5 => relu(t, v[0]),
                    _ => flatten(t, v[0])?,
                };
                Ok(probe(t, y, 9))
            })
            .unwrap();
            assert!(r.max_rel_err < TOL, "{name}: {r:?}");
        }
    }

    #[test]
    fn concat_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = rand_tensor(&mut rng, &[2, 3, 2]);
        let b = rand_tensor(&mut rng, &[2, 3, 3]);
        let r = check_gradients(&[a, b], 1e-5, |t, v| {
            let y = concat_last(t, v[0], v[1])?;
            Ok(probe(t, y, 1))
        })
        .unwrap();
        assert!(r.max_rel_err < TOL, "{r:?}");
        let a = rand_tensor(&mut rng, &[2, 3]);
        let b = rand_tensor(&mut rng, &[4, 3]);
        let r = check_gradients(&[a, b], 1e-5, |t, v| {
            let y = concat_rows(t, v[0], v[1])?;
            Ok(probe(t, y, 2))
        })
        .unwrap();
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap(), false);
        let z = t.leaf(Tensor::zeros(vec![2]), false);
        let r = relu(&mut t, x);
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
        let r = residual(&mut t, x, z).unwrap();
        assert_eq!(t.value(r).data(), &[-1.0, 2.0]);
        let m = t.leaf(Tensor::zeros(vec![3]), false);
        assert!(residual(&mut t, x, m).is_err());

        let h = t.leaf(
            Tensor::new(vec![1, 2, 3], (0..6).map(f64::from).collect()).unwrap(),
            false,
        );
        let f = flatten(&mut t, h).unwrap();
        assert_eq!(t.shape(f), &[1, 6]);
        let back = reshape(&mut t, f, vec![1, 2, 3]).unwrap();
        assert_eq!(t.value(back), t.value(h));
    }

    #[test]
    fn backward_basics() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let s = sum(&mut t, x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
        assert!(t.backward(s).is_err());

        t.reset();
        let x = t.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let unused = t.leaf(Tensor::zeros(vec![2]), true);
        let sq = mul(&mut t, x, x).unwrap();
        let s = sum(&mut t, sq);
        let half = scale(&mut t, s, 0.5);
        t.backward(half).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, -2.0, 0.5]);
        assert!(t.grad(unused).is_none());

        let not_scalar = x;
        t.reset();
        let x = t.leaf(Tensor::zeros(vec![3]), true);
        assert_eq!(x, not_scalar);
        assert!(t.backward(x).is_err());
    }
}
