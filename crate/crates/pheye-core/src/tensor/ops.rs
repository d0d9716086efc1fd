//! Forward operations and their reverse-mode rules. Backward closures
//! capture copies of whatever forward values they need, so gradients are
//! always taken with respect to the values actually used in the forward
//! pass, even if a parameter is updated in place afterwards.

use super::Tensor;
use crate::error::{Error, Result};
use crate::ledger::{MulCategory, MulLedger};
use crate::rng::Rng;

/// Row-major (n x d) * (d x o) product.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, d: usize, o: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o];
    for i in 0..n {
        for p in 0..d {
            let av = a[i * d + p];
            if av == 0.0 {
                continue;
            }
            let row = &b[p * o..(p + 1) * o];
            let dst = &mut out[i * o..(i + 1) * o];
            for (dv, bv) in dst.iter_mut().zip(row) {
                *dv += av * bv;
            }
        }
    }
    out
}

fn dims_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let shape = t.shape();
    match shape.as_slice() {
        [n, d] => Ok((*n, *d)),
        _ => Err(Error::ShapeMismatch {
            op,
            left: shape,
            right: vec![],
        }),
    }
}

/// Rows/cols view treating a 1-d tensor as a single row.
fn dims_rows(t: &Tensor) -> (usize, usize) {
    let shape = t.shape();
    match shape.as_slice() {
        [d] => (1, *d),
        [n, d] => (*n, *d),
        _ => {
            let last = *shape.last().unwrap();
            (t.numel() / last, last)
        }
    }
}

impl Tensor {
    /// Matrix product with ledger accounting: charges exactly n*o*d
    /// multiplications to `category`.
    pub fn matmul(
        &self,
        rhs: &Tensor,
        category: MulCategory,
        ledger: &MulLedger,
    ) -> Result<Tensor> {
        let (n, d) = dims_2d(self, "matmul")?;
        let (d2, o) = dims_2d(rhs, "matmul")?;
        if d != d2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![n, d],
                right: vec![d2, o],
            });
        }
        ledger.charge(category, n, d, o);

        let a_data = self.data();
        let b_data = rhs.data();
        let out = matmul_raw(&a_data, &b_data, n, d, o);

        let lhs = self.clone();
        let rhs_t = rhs.clone();
        Ok(Tensor::from_op(
            out,
            vec![n, o],
            vec![self.clone(), rhs.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    // dA = G * B^T
                    let mut da = vec![0.0; n * d];
                    for i in 0..n {
                        for p in 0..d {
                            let mut s = 0.0;
                            for j in 0..o {
                                s += grad[i * o + j] * b_data[p * o + j];
                            }
                            da[i * d + p] = s;
                        }
                    }
                    lhs.accumulate_grad(&da);
                }
                if rhs_t.requires_grad() {
                    // dB = A^T * G
                    let mut db = vec![0.0; d * o];
                    for p in 0..d {
                        for j in 0..o {
                            let mut s = 0.0;
                            for i in 0..n {
                                s += a_data[i * d + p] * grad[i * o + j];
                            }
                            db[p * o + j] = s;
                        }
                    }
                    rhs_t.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Element-wise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let out = self
            .with_data(|a| rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| x + y).collect()));
        let lhs = self.clone();
        let rhs_t = rhs.clone();
        Ok(Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    lhs.accumulate_grad(grad);
                }
                if rhs_t.requires_grad() {
                    rhs_t.accumulate_grad(grad);
                }
            }),
        ))
    }

    /// Broadcast a 1-d bias across the rows of a 2-d tensor. The only
    /// broadcasting form supported by the engine, besides scalars.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, d) = dims_2d(self, "add_bias")?;
        if bias.shape() != vec![d] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: vec![n, d],
                right: bias.shape(),
            });
        }
        let out = self.with_data(|x| {
            bias.with_data(|b| {
                let mut out = x.to_vec();
                for i in 0..n {
                    for j in 0..d {
                        out[i * d + j] += b[j];
                    }
                }
                out
            })
        });
        let lhs = self.clone();
        let bias_t = bias.clone();
        Ok(Tensor::from_op(
            out,
            vec![n, d],
            vec![self.clone(), bias.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    lhs.accumulate_grad(grad);
                }
                if bias_t.requires_grad() {
                    let mut db = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            db[j] += grad[i * d + j];
                        }
                    }
                    bias_t.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.with_data(|x| x.iter().map(|v| v * factor).collect());
        let lhs = self.clone();
        Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let dx: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                    lhs.accumulate_grad(&dx);
                }
            }),
        )
    }

    /// Hadamard product; shapes must match exactly.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let a_data = self.data();
        let b_data = rhs.data();
        let out: Vec<f64> = a_data.iter().zip(&b_data).map(|(x, y)| x * y).collect();
        let lhs = self.clone();
        let rhs_t = rhs.clone();
        Ok(Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let dx: Vec<f64> = grad.iter().zip(&b_data).map(|(g, b)| g * b).collect();
                    lhs.accumulate_grad(&dx);
                }
                if rhs_t.requires_grad() {
                    let dy: Vec<f64> = grad.iter().zip(&a_data).map(|(g, a)| g * a).collect();
                    rhs_t.accumulate_grad(&dy);
                }
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (n, d) = dims_2d(self, "transpose")?;
        let out = self.with_data(|x| {
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    out[j * n + i] = x[i * d + j];
                }
            }
            out
        });
        let lhs = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![d, n],
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let mut dx = vec![0.0; n * d];
                    for j in 0..d {
                        for i in 0..n {
                            dx[i * d + j] = grad[j * n + i];
                        }
                    }
                    lhs.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Column range [start, end) of a 2-d tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (n, d) = dims_2d(self, "slice_cols")?;
        if start >= end || end > d {
            return Err(Error::Contract(format!(
                "slice_cols [{start}, {end}) out of range for {d} columns"
            )));
        }
        let w = end - start;
        let out = self.with_data(|x| {
            let mut out = vec![0.0; n * w];
            for i in 0..n {
                out[i * w..(i + 1) * w].copy_from_slice(&x[i * d + start..i * d + end]);
            }
            out
        });
        let lhs = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![n, w],
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        dx[i * d + start..i * d + end]
                            .copy_from_slice(&grad[i * w..(i + 1) * w]);
                    }
                    lhs.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Select rows of a 2-d tensor by index (embedding lookup).
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let (n, d) = dims_2d(self, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= n) {
            return Err(Error::Input(format!(
                "row index {bad} out of range for {n} rows"
            )));
        }
        if ids.is_empty() {
            return Err(Error::Input("gather_rows with no indices".into()));
        }
        let out = self.with_data(|x| {
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                out.extend_from_slice(&x[id * d..(id + 1) * d]);
            }
            out
        });
        let lhs = self.clone();
        let ids_owned = ids.to_vec();
        let rows = ids.len();
        Ok(Tensor::from_op(
            out,
            vec![rows, d],
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let mut dx = vec![0.0; n * d];
                    for (r, &id) in ids_owned.iter().enumerate() {
                        for j in 0..d {
                            dx[id * d + j] += grad[r * d + j];
                        }
                    }
                    lhs.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Numerically stabilized softmax over the last axis.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.with_data(|x| x.iter().any(|v| v.is_nan())) {
            return Err(Error::Numeric("softmax over NaN input".into()));
        }
        let (rows, cols) = dims_rows(self);
        let out = self.with_data(|x| {
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                let row = &x[r * cols..(r + 1) * cols];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    out[r * cols + j] = e;
                    sum += e;
                }
                for j in 0..cols {
                    out[r * cols + j] /= sum;
                }
            }
            out
        });
        let lhs = self.clone();
        let probs = out.clone();
        Ok(Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let y = &probs[r * cols..(r + 1) * cols];
                        let g = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(g).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..cols {
                            dx[r * cols + j] = y[j] * (g[j] - dot);
                        }
                    }
                    lhs.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Per-row normalization to zero mean and unit variance over the last
    /// axis, followed by an affine transform with `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (rows, d) = dims_rows(self);
        if d == 0 {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: self.shape(),
                right: vec![0],
            });
        }
        if gain.shape() != vec![d] || bias.shape() != vec![d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: self.shape(),
                right: gain.shape(),
            });
        }
        let gain_data = gain.data();
        let bias_data = bias.data();
        let mut normalized = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let out = self.with_data(|x| {
            let mut out = vec![0.0; rows * d];
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std[r] = inv;
                for j in 0..d {
                    let xh = (row[j] - mean) * inv;
                    normalized[r * d + j] = xh;
                    out[r * d + j] = gain_data[j] * xh + bias_data[j];
                }
            }
            out
        });
        let lhs = self.clone();
        let gain_t = gain.clone();
        let bias_t = bias.clone();
        Ok(Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |grad| {
                if gain_t.requires_grad() {
                    let mut dg = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += grad[r * d + j] * normalized[r * d + j];
                        }
                    }
                    gain_t.accumulate_grad(&dg);
                }
                if bias_t.requires_grad() {
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += grad[r * d + j];
                        }
                    }
                    bias_t.accumulate_grad(&db);
                }
                if lhs.requires_grad() {
                    let mut dx = vec![0.0; rows * d];
                    for r in 0..rows {
                        // h = dL/d(normalized)
                        let mut h_mean = 0.0;
                        let mut hx_mean = 0.0;
                        for j in 0..d {
                            let h = grad[r * d + j] * gain_data[j];
                            h_mean += h;
                            hx_mean += h * normalized[r * d + j];
                        }
                        h_mean /= d as f64;
                        hx_mean /= d as f64;
                        for j in 0..d {
                            let h = grad[r * d + j] * gain_data[j];
                            dx[r * d + j] = inv_std[r]
                                * (h - h_mean - normalized[r * d + j] * hx_mean);
                        }
                    }
                    lhs.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Tensor {
        const K: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let x_data = self.data();
        let out: Vec<f64> = x_data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (K * (x + A * x * x * x)).tanh()))
            .collect();
        let lhs = self.clone();
        Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let dx: Vec<f64> = x_data
                        .iter()
                        .zip(grad)
                        .map(|(&x, &g)| {
                            let u = K * (x + A * x * x * x);
                            let t = u.tanh();
                            let sech2 = 1.0 - t * t;
                            g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * K * (1.0 + 3.0 * A * x * x))
                        })
                        .collect();
                    lhs.accumulate_grad(&dx);
                }
            }),
        )
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Tensor {
        let total = self.with_data(|x| x.iter().sum::<f64>());
        let n = self.numel();
        let lhs = self.clone();
        Tensor::from_op(
            vec![total],
            vec![1],
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    lhs.accumulate_grad(&vec![grad[0]; n]);
                }
            }),
        )
    }

    /// Inverted dropout on the adapter branch: elements are zeroed with
    /// probability `p` and survivors rescale by 1/(1-p). With p = 0 this
    /// is the identity and draws nothing from the generator.
    pub fn dropout(&self, p: f64, rng: &mut Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.next_uniform() <= p { 0.0 } else { keep })
            .collect();
        let out =
            self.with_data(|x| x.iter().zip(&mask).map(|(v, m)| v * m).collect::<Vec<f64>>());
        let lhs = self.clone();
        Ok(Tensor::from_op(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let dx: Vec<f64> = grad.iter().zip(&mask).map(|(g, m)| g * m).collect();
                    lhs.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Sum of per-row cross-entropy over the rows selected by `mask`,
    /// as a scalar tensor. Rows are logit vectors; `targets[i]` is the
    /// class index for row i.
    pub fn cross_entropy_sum(&self, targets: &[usize], mask: &[bool]) -> Result<Tensor> {
        let (n, v) = dims_2d(self, "cross_entropy_sum")?;
        if targets.len() != n || mask.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_sum",
                left: vec![n, v],
                right: vec![targets.len(), mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Input(
                "cross_entropy_sum with an empty output mask".into(),
            ));
        }
        if let Some(&bad) = targets
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| t)
            .find(|&&t| t >= v)
        {
            return Err(Error::Input(format!(
                "target class {bad} out of range for {v} classes"
            )));
        }

        let x_data = self.data();
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for r in 0..n {
            if !mask[r] {
                continue;
            }
            let row = &x_data[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &val) in row.iter().enumerate() {
                let e = (val - max).exp();
                probs[r * v + j] = e;
                sum += e;
            }
            for j in 0..v {
                probs[r * v + j] /= sum;
            }
            let lse = max + sum.ln();
            loss += lse - row[targets[r]];
        }

        let lhs = self.clone();
        let targets_owned = targets.to_vec();
        let mask_owned = mask.to_vec();
        Ok(Tensor::from_op(
            vec![loss],
            vec![1],
            vec![self.clone()],
            Box::new(move |grad| {
                if lhs.requires_grad() {
                    let g = grad[0];
                    let mut dx = vec![0.0; n * v];
                    for r in 0..n {
                        if !mask_owned[r] {
                            continue;
                        }
                        for j in 0..v {
                            dx[r * v + j] = g * probs[r * v + j];
                        }
                        dx[r * v + targets_owned[r]] -= g;
                    }
                    lhs.accumulate_grad(&dx);
                }
            }),
        ))
    }
}

/// Concatenate 2-d tensors along the row axis.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Contract("concat_rows of zero tensors".into()));
    }
    let (_, cols) = dims_2d(&parts[0], "concat_rows")?;
    let mut total_rows = 0;
    for part in parts {
        let (r, c) = dims_2d(part, "concat_rows")?;
        if c != cols {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                left: parts[0].shape(),
                right: part.shape(),
            });
        }
        total_rows += r;
    }
    let mut out = Vec::with_capacity(total_rows * cols);
    for part in parts {
        part.with_data(|x| out.extend_from_slice(x));
    }
    let handles: Vec<Tensor> = parts.to_vec();
    let row_counts: Vec<usize> = parts.iter().map(|p| p.shape()[0]).collect();
    Ok(Tensor::from_op(
        out,
        vec![total_rows, cols],
        parts.to_vec(),
        Box::new(move |grad| {
            let mut offset = 0;
            for (part, rows) in handles.iter().zip(&row_counts) {
                let span = rows * cols;
                if part.requires_grad() {
                    part.accumulate_grad(&grad[offset..offset + span]);
                }
                offset += span;
            }
        }),
    ))
}

/// Concatenate 2-d tensors along the column axis.
pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Contract("concat_cols of zero tensors".into()));
    }
    let (rows, _) = dims_2d(&parts[0], "concat_cols")?;
    let mut total_cols = 0;
    for part in parts {
        let (r, c) = dims_2d(part, "concat_cols")?;
        if r != rows {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: parts[0].shape(),
                right: part.shape(),
            });
        }
        total_cols += c;
    }
    let mut out = vec![0.0; rows * total_cols];
    let mut offset = 0;
    for part in parts {
        let (_, c) = dims_2d(part, "concat_cols")?;
        part.with_data(|x| {
            for r in 0..rows {
                out[r * total_cols + offset..r * total_cols + offset + c]
                    .copy_from_slice(&x[r * c..(r + 1) * c]);
            }
        });
        offset += c;
    }
    let handles: Vec<Tensor> = parts.to_vec();
    let col_counts: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    Ok(Tensor::from_op(
        out,
        vec![rows, total_cols],
        parts.to_vec(),
        Box::new(move |grad| {
            let mut offset = 0;
            for (part, &c) in handles.iter().zip(&col_counts) {
                if part.requires_grad() {
                    let mut dx = vec![0.0; rows * c];
                    for r in 0..rows {
                        dx[r * c..(r + 1) * c].copy_from_slice(
                            &grad[r * total_cols + offset..r * total_cols + offset + c],
                        );
                    }
                    part.accumulate_grad(&dx);
                }
                offset += c;
            }
        }),
    ))
}
