//! Forward implementations and backward rules for the tape operations.

use std::rc::Rc;

use super::{Op, Record, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::Rng;

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// C[p x r] = A[p x q] . B[q x r], row-major.
fn mat_mul(a: &[f64], p: usize, q: usize, b: &[f64], r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            let orow = &mut out[i * r..(i + 1) * r];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// C[p x q] = A[p x r] . B[q x r]^T.
fn mat_mul_nt(a: &[f64], p: usize, r: usize, b: &[f64], q: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * q];
    for i in 0..p {
        let arow = &a[i * r..(i + 1) * r];
        for j in 0..q {
            let brow = &b[j * r..(j + 1) * r];
            out[i * q + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// C[q x r] = A[p x q]^T . B[p x r].
fn mat_mul_tn(a: &[f64], p: usize, q: usize, b: &[f64], r: usize) -> Vec<f64> {
    let mut out = vec![0.0; q * r];
    for i in 0..p {
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[i * r..(i + 1) * r];
            let orow = &mut out[k * r..(k + 1) * r];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

impl Tape {
    /// Matrix product a[p x q] . b[q x r].
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (p, q) = a.shape();
        let (br, r) = b.shape();
        if q != br {
            return Err(Error::dims("matmul", (p, q), (br, r)));
        }
        let values = mat_mul(&a.values(), p, q, &b.values(), r);
        Ok(self.push(Op::MatMul, vec![a.clone(), b.clone()], p, r, values))
    }

    pub fn transpose(&mut self, x: &Tensor) -> Tensor {
        let (r, c) = x.shape();
        let xv = x.to_vec();
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = xv[i * c + j];
            }
        }
        self.push(Op::Transpose, vec![x.clone()], c, r, values)
    }

    /// Causal dilated 1-D convolution.
    ///
    /// Output position `s` reads the input at `s, s-d, ..., s-d(k-1)`;
    /// positions before the start contribute zero, so the output has the
    /// same length as the input. The kernel is stored flattened as
    /// `(k * c_in) x c_out` with rows grouped by tap.
    pub fn conv1d_dilated(
        &mut self,
        x: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        dilation: usize,
    ) -> Result<Tensor> {
        let (n, c_in) = x.shape();
        let (krows, c_out) = kernel.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("convolution input is empty".into()));
        }
        if c_in == 0 || krows == 0 || c_out == 0 {
            return Err(Error::InvalidArgument(
                "convolution kernel has zero size".into(),
            ));
        }
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be >= 1".into()));
        }
        if krows % c_in != 0 {
            return Err(Error::dims("conv1d_dilated", (n, c_in), (krows, c_out)));
        }
        if bias.shape() != (1, c_out) {
            return Err(Error::dims("conv1d_dilated bias", (1, c_out), bias.shape()));
        }
        let k = krows / c_in;

        let xv = x.values();
        let kv = kernel.values();
        let bv = bias.values();
        let mut values = vec![0.0; n * c_out];
        for s in 0..n {
            let orow = &mut values[s * c_out..(s + 1) * c_out];
            orow.copy_from_slice(&bv);
            for tap in 0..k {
                let offset = tap * dilation;
                if offset > s {
                    break;
                }
                let src = s - offset;
                for c in 0..c_in {
                    let xval = xv[src * c_in + c];
                    if xval == 0.0 {
                        continue;
                    }
                    let krow = &kv[(tap * c_in + c) * c_out..(tap * c_in + c + 1) * c_out];
                    for (o, w) in orow.iter_mut().zip(krow) {
                        *o += xval * w;
                    }
                }
            }
        }
        drop(xv);
        drop(kv);
        drop(bv);
        Ok(self.push(
            Op::ConvDilated {
                kernel_size: k,
                dilation,
            },
            vec![x.clone(), kernel.clone(), bias.clone()],
            n,
            c_out,
            values,
        ))
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        let (r, c) = x.shape();
        let values = x.values().iter().map(|&v| sigmoid(v)).collect();
        self.push(Op::Sigmoid, vec![x.clone()], r, c, values)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Tensor {
        let (r, c) = x.shape();
        let values = x.values().iter().map(|&v| v.tanh()).collect();
        self.push(Op::Tanh, vec![x.clone()], r, c, values)
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (r, c) = a.shape();
        if b.shape() != (r, c) {
            return Err(Error::dims("mul", (r, c), b.shape()));
        }
        let values = a
            .values()
            .iter()
            .zip(b.values().iter())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul, vec![a.clone(), b.clone()], r, c, values))
    }

    /// Elementwise sum of equal-shape tensors.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (r, c) = a.shape();
        if b.shape() != (r, c) {
            return Err(Error::dims("add", (r, c), b.shape()));
        }
        let values = a
            .values()
            .iter()
            .zip(b.values().iter())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add, vec![a.clone(), b.clone()], r, c, values))
    }

    /// Adds a 1 x c bias row to every row of x[n x c].
    pub fn add_row_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (n, c) = x.shape();
        if bias.shape() != (1, c) {
            return Err(Error::dims("add_row_bias", (n, c), bias.shape()));
        }
        let bv = bias.to_vec();
        let values = x
            .values()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(&bv).map(|(v, b)| v + b).collect::<Vec<_>>())
            .collect();
        Ok(self.push(Op::AddRowBias, vec![x.clone(), bias.clone()], n, c, values))
    }

    pub fn scale(&mut self, x: &Tensor, factor: f64) -> Tensor {
        let (r, c) = x.shape();
        let values = x.values().iter().map(|v| v * factor).collect();
        self.push(Op::Scale { factor }, vec![x.clone()], r, c, values)
    }

    /// Row-wise concatenation [a | b] of a[n x p] and b[n x q].
    pub fn concat_features(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (n, p) = a.shape();
        let (nb, q) = b.shape();
        if n != nb {
            return Err(Error::dims("concat_features", (n, p), (nb, q)));
        }
        let av = a.values();
        let bv = b.values();
        let mut values = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            values.extend_from_slice(&av[i * p..(i + 1) * p]);
            values.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        drop(av);
        drop(bv);
        Ok(self.push(Op::ConcatCols, vec![a.clone(), b.clone()], n, p + q, values))
    }

    /// Contiguous column block x[:, offset..offset+width].
    pub fn slice_cols(&mut self, x: &Tensor, offset: usize, width: usize) -> Result<Tensor> {
        let (n, c) = x.shape();
        if offset + width > c {
            return Err(Error::InvalidArgument(format!(
                "column slice {offset}..{} out of range for {n}x{c}",
                offset + width
            )));
        }
        let xv = x.values();
        let mut values = Vec::with_capacity(n * width);
        for i in 0..n {
            values.extend_from_slice(&xv[i * c + offset..i * c + offset + width]);
        }
        drop(xv);
        Ok(self.push(
            Op::SliceCols { offset, width },
            vec![x.clone()],
            n,
            width,
            values,
        ))
    }

    /// Splits u[n x 4g] into four contiguous column blocks of width g.
    ///
    /// Inverse of [`Tape::concat_features`] applied twice; gradients are
    /// routed back losslessly.
    pub fn split_columns(&mut self, u: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let (_, c) = u.shape();
        if c % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "column count {c} not divisible by 4"
            )));
        }
        let g = c / 4;
        Ok((
            self.slice_cols(u, 0, g)?,
            self.slice_cols(u, g, g)?,
            self.slice_cols(u, 2 * g, g)?,
            self.slice_cols(u, 3 * g, g)?,
        ))
    }

    /// Inverted dropout: zeroes elements with probability `p` and scales
    /// survivors by 1/(1-p) in training mode; identity in eval mode.
    pub fn dropout(&mut self, x: &Tensor, p: f64, training: bool, rng_seed: u64) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x.clone());
        }
        let (r, c) = x.shape();
        let keep_scale = 1.0 / (1.0 - p);
        let mut rng = seeded_rng(rng_seed);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let values = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push(Op::Dropout { mask }, vec![x.clone()], r, c, values))
    }

    /// Gathers table rows by id: output row s is table row ids[s].
    pub fn embed_rows(&mut self, table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (rows, dim) = table.shape();
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::IdOutOfRange { id: bad, rows });
        }
        let tv = table.values();
        let mut values = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            values.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        drop(tv);
        Ok(self.push(
            Op::EmbedRows { ids: ids.to_vec() },
            vec![table.clone()],
            ids.len(),
            dim,
            values,
        ))
    }

    /// Output row j is the mean of the table rows in `id_lists[j]`; an
    /// empty list falls back to the `fallback` row.
    pub fn embed_mean_rows(
        &mut self,
        table: &Tensor,
        id_lists: Rc<Vec<Vec<usize>>>,
        fallback: usize,
    ) -> Result<Tensor> {
        let (rows, dim) = table.shape();
        if fallback >= rows {
            return Err(Error::IdOutOfRange { id: fallback, rows });
        }
        if let Some(&bad) = id_lists.iter().flatten().find(|&&id| id >= rows) {
            return Err(Error::IdOutOfRange { id: bad, rows });
        }
        let tv = table.values();
        let mut values = Vec::with_capacity(id_lists.len() * dim);
        for list in id_lists.iter() {
            if list.is_empty() {
                values.extend_from_slice(&tv[fallback * dim..(fallback + 1) * dim]);
            } else {
                let inv = 1.0 / list.len() as f64;
                let start = values.len();
                values.resize(start + dim, 0.0);
                for &id in list {
                    for (acc, v) in values[start..]
                        .iter_mut()
                        .zip(&tv[id * dim..(id + 1) * dim])
                    {
                        *acc += v * inv;
                    }
                }
            }
        }
        drop(tv);
        let m = id_lists.len();
        Ok(self.push(
            Op::EmbedMeanRows { id_lists, fallback },
            vec![table.clone()],
            m,
            dim,
            values,
        ))
    }

    /// Repeats a 1 x c row n times.
    pub fn broadcast_rows(&mut self, x: &Tensor, n: usize) -> Result<Tensor> {
        let (r, c) = x.shape();
        if r != 1 {
            return Err(Error::dims("broadcast_rows", (1, c), (r, c)));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("broadcast to zero rows".into()));
        }
        let row = x.to_vec();
        let mut values = Vec::with_capacity(n * c);
        for _ in 0..n {
            values.extend_from_slice(&row);
        }
        Ok(self.push(Op::BroadcastRows, vec![x.clone()], n, c, values))
    }

    /// Per-row sum: x[r x c] -> [r x 1].
    pub fn row_sums(&mut self, x: &Tensor) -> Tensor {
        let (r, c) = x.shape();
        let xv = x.values();
        let values = (0..r)
            .map(|i| xv[i * c..(i + 1) * c].iter().sum())
            .collect();
        drop(xv);
        self.push(Op::RowSums, vec![x.clone()], r, 1, values)
    }

    /// Sum of all elements as a 1x1 scalar.
    pub fn sum_all(&mut self, x: &Tensor) -> Tensor {
        let total = x.values().iter().sum();
        self.push(Op::SumAll, vec![x.clone()], 1, 1, vec![total])
    }

    /// Per-column maximum: x[n x c] -> [1 x c]; ties keep the first row.
    pub fn col_max(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c) = x.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("col_max of empty tensor".into()));
        }
        let xv = x.values();
        let mut argmax = vec![0usize; c];
        let mut values = xv[..c].to_vec();
        for i in 1..n {
            for j in 0..c {
                let v = xv[i * c + j];
                if v > values[j] {
                    values[j] = v;
                    argmax[j] = i;
                }
            }
        }
        drop(xv);
        Ok(self.push(Op::ColMax { argmax }, vec![x.clone()], 1, c, values))
    }

    /// Binary cross-entropy over logits, summed over all elements.
    ///
    /// Uses the log-sum-exp form `max(z,0) - z*y + ln(1 + exp(-|z|))`, so
    /// it stays finite for very large |z|. The gradient on the logits is
    /// `sigmoid(z) - y`.
    pub fn bce_with_logits(&mut self, logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
        let shape = logits.shape();
        if targets.shape() != shape {
            return Err(Error::dims("bce_with_logits", shape, targets.shape()));
        }
        if let Some(&bad) = targets.values().iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::NonBinaryTarget(bad));
        }
        let targets_vec = targets.to_vec();
        let loss: f64 = logits
            .values()
            .iter()
            .zip(&targets_vec)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(
            Op::BceWithLogits {
                targets: targets_vec,
            },
            vec![logits.clone()],
            1,
            1,
            vec![loss],
        ))
    }
}

/// Applies one record's backward rule, accumulating into input gradients.
pub(crate) fn backward_record(record: &Record) {
    let go = record.output.grad_to_vec();
    let inputs = &record.inputs;
    match &record.op {
        Op::MatMul => {
            let a = &inputs[0];
            let b = &inputs[1];
            let (p, q) = a.shape();
            let r = b.cols();
            if a.requires_grad() {
                let da = mat_mul_nt(&go, p, r, &b.values(), q);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let db = mat_mul_tn(&a.values(), p, q, &go, r);
                b.accumulate_grad(&db);
            }
        }
        Op::Transpose => {
            let x = &inputs[0];
            if x.requires_grad() {
                let (r, c) = x.shape();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = go[j * r + i];
                    }
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::ConvDilated {
            kernel_size,
            dilation,
        } => backward_conv(record, &go, *kernel_size, *dilation),
        Op::Sigmoid => {
            let x = &inputs[0];
            if x.requires_grad() {
                let dx: Vec<f64> = record
                    .output
                    .values()
                    .iter()
                    .zip(&go)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::Tanh => {
            let x = &inputs[0];
            if x.requires_grad() {
                let dx: Vec<f64> = record
                    .output
                    .values()
                    .iter()
                    .zip(&go)
                    .map(|(&y, &g)| g * (1.0 - y * y))
                    .collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::Mul => {
            let a = &inputs[0];
            let b = &inputs[1];
            if a.requires_grad() {
                let da: Vec<f64> = b.values().iter().zip(&go).map(|(&y, &g)| g * y).collect();
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let db: Vec<f64> = a.values().iter().zip(&go).map(|(&x, &g)| g * x).collect();
                b.accumulate_grad(&db);
            }
        }
        Op::Add => {
            for side in inputs {
                if side.requires_grad() {
                    side.accumulate_grad(&go);
                }
            }
        }
        Op::AddRowBias => {
            let x = &inputs[0];
            let bias = &inputs[1];
            if x.requires_grad() {
                x.accumulate_grad(&go);
            }
            if bias.requires_grad() {
                let c = bias.cols();
                let mut db = vec![0.0; c];
                for row in go.chunks(c) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                bias.accumulate_grad(&db);
            }
        }
        Op::Scale { factor } => {
            let x = &inputs[0];
            if x.requires_grad() {
                let dx: Vec<f64> = go.iter().map(|g| g * factor).collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::ConcatCols => {
            let a = &inputs[0];
            let b = &inputs[1];
            let (n, p) = a.shape();
            let q = b.cols();
            let w = p + q;
            if a.requires_grad() {
                let mut da = vec![0.0; n * p];
                for i in 0..n {
                    da[i * p..(i + 1) * p].copy_from_slice(&go[i * w..i * w + p]);
                }
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0; n * q];
                for i in 0..n {
                    db[i * q..(i + 1) * q].copy_from_slice(&go[i * w + p..(i + 1) * w]);
                }
                b.accumulate_grad(&db);
            }
        }
        Op::SliceCols { offset, width } => {
            let x = &inputs[0];
            if x.requires_grad() {
                let (n, c) = x.shape();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    dx[i * c + offset..i * c + offset + width]
                        .copy_from_slice(&go[i * width..(i + 1) * width]);
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::Dropout { mask } => {
            let x = &inputs[0];
            if x.requires_grad() {
                let dx: Vec<f64> = go.iter().zip(mask).map(|(g, m)| g * m).collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::EmbedRows { ids } => {
            let table = &inputs[0];
            if table.requires_grad() {
                let (rows, dim) = table.shape();
                let mut dt = vec![0.0; rows * dim];
                for (s, &id) in ids.iter().enumerate() {
                    for (d, g) in dt[id * dim..(id + 1) * dim]
                        .iter_mut()
                        .zip(&go[s * dim..(s + 1) * dim])
                    {
                        *d += g;
                    }
                }
                table.accumulate_grad(&dt);
            }
        }
        Op::EmbedMeanRows { id_lists, fallback } => {
            let table = &inputs[0];
            if table.requires_grad() {
                let (rows, dim) = table.shape();
                let mut dt = vec![0.0; rows * dim];
                for (j, list) in id_lists.iter().enumerate() {
                    let grow = &go[j * dim..(j + 1) * dim];
                    if list.is_empty() {
                        for (d, g) in dt[fallback * dim..(fallback + 1) * dim]
                            .iter_mut()
                            .zip(grow)
                        {
                            *d += g;
                        }
                    } else {
                        let inv = 1.0 / list.len() as f64;
                        for &id in list {
                            for (d, g) in dt[id * dim..(id + 1) * dim].iter_mut().zip(grow) {
                                *d += g * inv;
                            }
                        }
                    }
                }
                table.accumulate_grad(&dt);
            }
        }
        Op::BroadcastRows => {
            let x = &inputs[0];
            if x.requires_grad() {
                let c = x.cols();
                let mut dx = vec![0.0; c];
                for row in go.chunks(c) {
                    for (d, g) in dx.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::RowSums => {
            let x = &inputs[0];
            if x.requires_grad() {
                let (r, c) = x.shape();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c..(i + 1) * c].fill(go[i]);
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::SumAll => {
            let x = &inputs[0];
            if x.requires_grad() {
                let dx = vec![go[0]; x.len()];
                x.accumulate_grad(&dx);
            }
        }
        Op::ColMax { argmax } => {
            let x = &inputs[0];
            if x.requires_grad() {
                let (r, c) = x.shape();
                let mut dx = vec![0.0; r * c];
                for (j, &i) in argmax.iter().enumerate() {
                    dx[i * c + j] = go[j];
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::BceWithLogits { targets } => {
            let logits = &inputs[0];
            if logits.requires_grad() {
                let dz: Vec<f64> = logits
                    .values()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| go[0] * (sigmoid(z) - y))
                    .collect();
                logits.accumulate_grad(&dz);
            }
        }
    }
}

fn backward_conv(record: &Record, go: &[f64], kernel_size: usize, dilation: usize) {
    let x = &record.inputs[0];
    let kernel = &record.inputs[1];
    let bias = &record.inputs[2];
    let (n, c_in) = x.shape();
    let c_out = kernel.cols();

    if x.requires_grad() {
        let kv = kernel.values();
        let mut dx = vec![0.0; n * c_in];
        for s in 0..n {
            let grow = &go[s * c_out..(s + 1) * c_out];
            for tap in 0..kernel_size {
                let offset = tap * dilation;
                if offset > s {
                    break;
                }
                let src = s - offset;
                for c in 0..c_in {
                    let krow = &kv[(tap * c_in + c) * c_out..(tap * c_in + c + 1) * c_out];
                    dx[src * c_in + c] += grow.iter().zip(krow).map(|(g, w)| g * w).sum::<f64>();
                }
            }
        }
        drop(kv);
        x.accumulate_grad(&dx);
    }

    if kernel.requires_grad() {
        let xv = x.values();
        let mut dk = vec![0.0; kernel_size * c_in * c_out];
        for s in 0..n {
            let grow = &go[s * c_out..(s + 1) * c_out];
            for tap in 0..kernel_size {
                let offset = tap * dilation;
                if offset > s {
                    break;
                }
                let src = s - offset;
                for c in 0..c_in {
                    let xval = xv[src * c_in + c];
                    if xval == 0.0 {
                        continue;
                    }
                    let drow = &mut dk[(tap * c_in + c) * c_out..(tap * c_in + c + 1) * c_out];
                    for (d, g) in drow.iter_mut().zip(grow) {
                        *d += xval * g;
                    }
                }
            }
        }
        drop(xv);
        kernel.accumulate_grad(&dk);
    }

    if bias.requires_grad() {
        let mut db = vec![0.0; c_out];
        for row in go.chunks(c_out) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        bias.accumulate_grad(&db);
    }
}
