//! Minimal f64 neural-network layers with exact backward passes.
//!
//! This is deliberately tiny: the autoencoder variants need dense layers,
//! same-padding 3x3 convolutions, ceil-mode 2x2 average pooling and nearest
//! upsampling, nothing else. All math is f64; batches are either flat
//! `[n, features]` matrices or spatial `[n, h, w, c]` stacks.

use ndarray::{Array1, Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Linear,
    LeakyRelu,
}

impl Act {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Act::Linear => x,
            Act::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Act::Linear => 1.0,
            Act::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Act::Linear => 0,
            Act::LeakyRelu => 1,
        }
    }
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Act::Linear),
            1 => Ok(Act::LeakyRelu),
            other => Err(Error::Validation(format!("unknown activation byte {other}"))),
        }
    }
}

/// A batch flowing through the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// `[n, features]`
    Flat(Array2<f64>),
    /// `[n, h, w, c]`
    Spatial(Array4<f64>),
}

impl Value {
    pub fn batch_len(&self) -> usize {
        match self {
            Value::Flat(a) => a.nrows(),
            Value::Spatial(a) => a.dim().0,
        }
    }

    pub fn as_flat(&self) -> Result<&Array2<f64>> {
        match self {
            Value::Flat(a) => Ok(a),
            Value::Spatial(_) => Err(Error::ShapeMismatch("expected flat batch, got spatial".into())),
        }
    }

    pub fn as_spatial(&self) -> Result<&Array4<f64>> {
        match self {
            Value::Spatial(a) => Ok(a),
            Value::Flat(_) => Err(Error::ShapeMismatch("expected spatial batch, got flat".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `w: [in, out]`, `b: [out]`; flat -> flat.
    Dense { w: Array2<f64>, b: Array1<f64> },
    /// Same-padding stride-1 3x3 convolution, `w: [3, 3, c_in, c_out]`.
    Conv3x3 { w: Array4<f64>, b: Array1<f64> },
    /// 2x2 average pooling with ceil semantics: edge windows shrink to the
    /// valid cells and average over what they cover.
    AvgPool2,
    /// Nearest-neighbour upsampling to an explicit target size (the inverse
    /// bookkeeping of AvgPool2 on odd dims).
    UpsampleTo { h: usize, w: usize },
    Act(Act),
    /// `[n,h,w,c]` -> `[n, h*w*c]`, row-major.
    Flatten,
    Unflatten { h: usize, w: usize, c: usize },
}

/// Gradient of one layer's parameters; layout mirrors `Layer`.
#[derive(Debug, Clone)]
pub enum LayerGrad {
    Dense { dw: Array2<f64>, db: Array1<f64> },
    Conv3x3 { dw: Array4<f64>, db: Array1<f64> },
    None,
}

pub fn dense_glorot(inp: usize, out: usize, rng: &mut StreamRng) -> Layer {
    let bound = (6.0 / (inp + out) as f64).sqrt();
    Layer::Dense {
        w: Array2::from_shape_fn((inp, out), |_| rng.range_f64(-bound, bound)),
        b: Array1::zeros(out),
    }
}

pub fn conv_glorot(c_in: usize, c_out: usize, rng: &mut StreamRng) -> Layer {
    let bound = (6.0 / (9 * c_in + 9 * c_out) as f64).sqrt();
    Layer::Conv3x3 {
        w: Array4::from_shape_fn((3, 3, c_in, c_out), |_| rng.range_f64(-bound, bound)),
        b: Array1::zeros(c_out),
    }
}

impl Layer {
    pub fn forward(&self, input: &Value) -> Result<Value> {
        match self {
            Layer::Dense { w, b } => {
                let x = input.as_flat()?;
                if x.ncols() != w.nrows() {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects {} inputs, got {}",
                        w.nrows(),
                        x.ncols()
                    )));
                }
                Ok(Value::Flat(x.dot(w) + b))
            }
            Layer::Conv3x3 { w, b } => {
                let x = input.as_spatial()?;
                let (n, h, wid, c_in) = x.dim();
                let (kh, kw, wc_in, c_out) = w.dim();
                if (kh, kw) != (3, 3) || wc_in != c_in {
                    return Err(Error::ShapeMismatch(format!(
                        "conv weights [{kh},{kw},{wc_in},{c_out}] do not fit input with {c_in} channels"
                    )));
                }
                let mut out = Array4::zeros((n, h, wid, c_out));
                for s in 0..n {
                    for i in 0..h {
                        for j in 0..wid {
                            for oc in 0..c_out {
                                let mut acc = b[oc];
                                for di in 0..3usize {
                                    let ii = i as isize + di as isize - 1;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    for dj in 0..3usize {
                                        let jj = j as isize + dj as isize - 1;
                                        if jj < 0 || jj >= wid as isize {
                                            continue;
                                        }
                                        for ic in 0..c_in {
                                            acc += w[(di, dj, ic, oc)] * x[(s, ii as usize, jj as usize, ic)];
                                        }
                                    }
                                }
                                out[(s, i, j, oc)] = acc;
                            }
                        }
                    }
                }
                Ok(Value::Spatial(out))
            }
            Layer::AvgPool2 => {
                let x = input.as_spatial()?;
                let (n, h, wid, c) = x.dim();
                let hh = h.div_ceil(2);
                let ww = wid.div_ceil(2);
                let mut out = Array4::zeros((n, hh, ww, c));
                for s in 0..n {
                    for i in 0..hh {
                        let i1 = (2 * i + 2).min(h);
                        for j in 0..ww {
                            let j1 = (2 * j + 2).min(wid);
                            let count = ((i1 - 2 * i) * (j1 - 2 * j)) as f64;
                            for ch in 0..c {
                                let mut acc = 0.0;
                                for ii in 2 * i..i1 {
                                    for jj in 2 * j..j1 {
                                        acc += x[(s, ii, jj, ch)];
                                    }
                                }
                                out[(s, i, j, ch)] = acc / count;
                            }
                        }
                    }
                }
                Ok(Value::Spatial(out))
            }
            Layer::UpsampleTo { h: th, w: tw } => {
                let x = input.as_spatial()?;
                let (n, h, wid, c) = x.dim();
                if *th < h || *tw < wid {
                    return Err(Error::ShapeMismatch(format!(
                        "upsample target {th}x{tw} smaller than input {h}x{wid}"
                    )));
                }
                let mut out = Array4::zeros((n, *th, *tw, c));
                for s in 0..n {
                    for i in 0..*th {
                        let si = src_index(i, *th, h);
                        for j in 0..*tw {
                            let sj = src_index(j, *tw, wid);
                            for ch in 0..c {
                                out[(s, i, j, ch)] = x[(s, si, sj, ch)];
                            }
                        }
                    }
                }
                Ok(Value::Spatial(out))
            }
            Layer::Act(act) => Ok(match input {
                Value::Flat(a) => Value::Flat(a.mapv(|v| act.apply(v))),
                Value::Spatial(a) => Value::Spatial(a.mapv(|v| act.apply(v))),
            }),
            Layer::Flatten => {
                let x = input.as_spatial()?;
                let (n, h, wid, c) = x.dim();
                let flat = x
                    .to_owned()
                    .into_shape_with_order((n, h * wid * c))
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                Ok(Value::Flat(flat))
            }
            Layer::Unflatten { h, w, c } => {
                let x = input.as_flat()?;
                if x.ncols() != h * w * c {
                    return Err(Error::ShapeMismatch(format!(
                        "cannot unflatten {} features into {h}x{w}x{c}",
                        x.ncols()
                    )));
                }
                let spatial = x
                    .to_owned()
                    .into_shape_with_order((x.nrows(), *h, *w, *c))
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                Ok(Value::Spatial(spatial))
            }
        }
    }

    /// Backward pass: given the layer input (from the forward trace) and the
    /// gradient at the output, produce the parameter gradient and the
    /// gradient at the input.
    pub fn backward(&self, input: &Value, grad_out: &Value) -> Result<(LayerGrad, Value)> {
        match self {
            Layer::Dense { w, .. } => {
                let x = input.as_flat()?;
                let g = grad_out.as_flat()?;
                let dw = x.t().dot(g);
                let db = g.sum_axis(Axis(0));
                let gx = g.dot(&w.t());
                Ok((LayerGrad::Dense { dw, db }, Value::Flat(gx)))
            }
            Layer::Conv3x3 { w, .. } => {
                let x = input.as_spatial()?;
                let g = grad_out.as_spatial()?;
                let (n, h, wid, c_in) = x.dim();
                let c_out = w.dim().3;
                let mut dw = Array4::zeros(w.dim());
                let mut db = Array1::zeros(c_out);
                let mut gx = Array4::zeros(x.dim());
                for s in 0..n {
                    for i in 0..h {
                        for j in 0..wid {
                            for oc in 0..c_out {
                                let go = g[(s, i, j, oc)];
                                if go == 0.0 {
                                    continue;
                                }
                                db[oc] += go;
                                for di in 0..3usize {
                                    let ii = i as isize + di as isize - 1;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    for dj in 0..3usize {
                                        let jj = j as isize + dj as isize - 1;
                                        if jj < 0 || jj >= wid as isize {
                                            continue;
                                        }
                                        for ic in 0..c_in {
                                            let xv = x[(s, ii as usize, jj as usize, ic)];
                                            dw[(di, dj, ic, oc)] += go * xv;
                                            gx[(s, ii as usize, jj as usize, ic)] += go * w[(di, dj, ic, oc)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((LayerGrad::Conv3x3 { dw, db }, Value::Spatial(gx)))
            }
            Layer::AvgPool2 => {
                let x = input.as_spatial()?;
                let g = grad_out.as_spatial()?;
                let (n, h, wid, c) = x.dim();
                let (hh, ww) = (h.div_ceil(2), wid.div_ceil(2));
                let mut gx = Array4::zeros(x.dim());
                for s in 0..n {
                    for i in 0..hh {
                        let i1 = (2 * i + 2).min(h);
                        for j in 0..ww {
                            let j1 = (2 * j + 2).min(wid);
                            let count = ((i1 - 2 * i) * (j1 - 2 * j)) as f64;
                            for ch in 0..c {
                                let share = g[(s, i, j, ch)] / count;
                                for ii in 2 * i..i1 {
                                    for jj in 2 * j..j1 {
                                        gx[(s, ii, jj, ch)] += share;
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((LayerGrad::None, Value::Spatial(gx)))
            }
            Layer::UpsampleTo { h: th, w: tw } => {
                let x = input.as_spatial()?;
                let g = grad_out.as_spatial()?;
                let (n, h, wid, c) = x.dim();
                let mut gx = Array4::zeros(x.dim());
                for s in 0..n {
                    for i in 0..*th {
                        let si = src_index(i, *th, h);
                        for j in 0..*tw {
                            let sj = src_index(j, *tw, wid);
                            for ch in 0..c {
                                gx[(s, si, sj, ch)] += g[(s, i, j, ch)];
                            }
                        }
                    }
                }
                Ok((LayerGrad::None, Value::Spatial(gx)))
            }
            Layer::Act(act) => Ok(match (input, grad_out) {
                (Value::Flat(x), Value::Flat(g)) => {
                    let mut gx = g.clone();
                    gx.zip_mut_with(x, |gv, xv| *gv *= act.derivative(*xv));
                    (LayerGrad::None, Value::Flat(gx))
                }
                (Value::Spatial(x), Value::Spatial(g)) => {
                    let mut gx = g.clone();
                    gx.zip_mut_with(x, |gv, xv| *gv *= act.derivative(*xv));
                    (LayerGrad::None, Value::Spatial(gx))
                }
                _ => return Err(Error::ShapeMismatch("activation input/gradient kinds differ".into())),
            }),
            Layer::Flatten => {
                let x = input.as_spatial()?;
                let g = grad_out.as_flat()?;
                let gx = g
                    .to_owned()
                    .into_shape_with_order(x.dim())
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                Ok((LayerGrad::None, Value::Spatial(gx)))
            }
            Layer::Unflatten { .. } => {
                let x = input.as_flat()?;
                let g = grad_out.as_spatial()?;
                let gx = g
                    .to_owned()
                    .into_shape_with_order((x.nrows(), x.ncols()))
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                Ok((LayerGrad::None, Value::Flat(gx)))
            }
        }
    }

    /// Number of trainable scalars.
    pub fn param_len(&self) -> usize {
        match self {
            Layer::Dense { w, b } => w.len() + b.len(),
            Layer::Conv3x3 { w, b } => w.len() + b.len(),
            _ => 0,
        }
    }

    /// Parameters as one flat vector (weights then bias).
    pub fn flat_params(&self) -> Array1<f64> {
        match self {
            Layer::Dense { w, b } => w.iter().chain(b.iter()).copied().collect(),
            Layer::Conv3x3 { w, b } => w.iter().chain(b.iter()).copied().collect(),
            _ => Array1::zeros(0),
        }
    }

    pub fn set_flat_params(&mut self, flat: &Array1<f64>) -> Result<()> {
        if flat.len() != self.param_len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} params, got {}",
                self.param_len(),
                flat.len()
            )));
        }
        match self {
            Layer::Dense { w, b } => {
                let nw = w.len();
                for (dst, src) in w.iter_mut().zip(flat.iter()) {
                    *dst = *src;
                }
                for (dst, src) in b.iter_mut().zip(flat.iter().skip(nw)) {
                    *dst = *src;
                }
                Ok(())
            }
            Layer::Conv3x3 { w, b } => {
                let nw = w.len();
                for (dst, src) in w.iter_mut().zip(flat.iter()) {
                    *dst = *src;
                }
                for (dst, src) in b.iter_mut().zip(flat.iter().skip(nw)) {
                    *dst = *src;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl LayerGrad {
    pub fn flat(&self) -> Option<Array1<f64>> {
        match self {
            LayerGrad::Dense { dw, db } => Some(dw.iter().chain(db.iter()).copied().collect()),
            LayerGrad::Conv3x3 { dw, db } => Some(dw.iter().chain(db.iter()).copied().collect()),
            LayerGrad::None => None,
        }
    }
}

/// Nearest-neighbour source row/column for upsampling `src_len -> dst_len`.
fn src_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
}

/// Run the stack, returning the trace: `trace[0]` is the input and
/// `trace[i + 1]` the output of layer `i`.
pub fn forward_trace(layers: &[Layer], input: Value) -> Result<Vec<Value>> {
    let mut trace = Vec::with_capacity(layers.len() + 1);
    trace.push(input);
    for layer in layers {
        let out = layer.forward(trace.last().unwrap())?;
        trace.push(out);
    }
    Ok(trace)
}

/// Backpropagate `grad_out` through the whole stack; returns per-layer
/// parameter gradients (aligned with `layers`) and the input gradient.
pub fn backward_trace(layers: &[Layer], trace: &[Value], grad_out: Value) -> Result<(Vec<LayerGrad>, Value)> {
    if trace.len() != layers.len() + 1 {
        return Err(Error::ShapeMismatch("trace length does not match layer count".into()));
    }
    let mut grads = vec![LayerGrad::None; layers.len()];
    let mut g = grad_out;
    for (i, layer) in layers.iter().enumerate().rev() {
        let (pg, gx) = layer.backward(&trace[i], &g)?;
        grads[i] = pg;
        g = gx;
    }
    Ok((grads, g))
}

/// Mean squared error over every entry, with its gradient.
pub fn mse_and_grad(pred: &Value, target: &Value) -> Result<(f64, Value)> {
    match (pred, target) {
        (Value::Flat(p), Value::Flat(t)) => {
            if p.dim() != t.dim() {
                return Err(Error::ShapeMismatch(format!("mse shapes {:?} vs {:?}", p.dim(), t.dim())));
            }
            let n = p.len() as f64;
            let diff = p - t;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            Ok((loss, Value::Flat(diff.mapv(|d| 2.0 * d / n))))
        }
        (Value::Spatial(p), Value::Spatial(t)) => {
            if p.dim() != t.dim() {
                return Err(Error::ShapeMismatch(format!("mse shapes {:?} vs {:?}", p.dim(), t.dim())));
            }
            let n = p.len() as f64;
            let diff = p - t;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            Ok((loss, Value::Spatial(diff.mapv(|d| 2.0 * d / n))))
        }
        _ => Err(Error::ShapeMismatch("mse between flat and spatial batches".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array3;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::new(seed, stream::DATA)
    }

    fn random_flat(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((n, d), |_| r.normal_f64())
    }

    fn random_spatial(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Array4<f64> {
        let mut r = rng(seed);
        Array4::from_shape_fn((n, h, w, c), |_| r.normal_f64())
    }

    /// Scalar objective for finite differencing: run the stack and take MSE
    /// against a fixed target.
    fn objective(layers: &[Layer], input: &Value, target: &Value) -> f64 {
        let trace = forward_trace(layers, input.clone()).unwrap();
        mse_and_grad(trace.last().unwrap(), target).unwrap().0
    }

    fn check_param_grads(layers: &mut Vec<Layer>, input: &Value, target: &Value, tol: f64) {
        let trace = forward_trace(layers, input.clone()).unwrap();
        let (_, gloss) = mse_and_grad(trace.last().unwrap(), target).unwrap();
        let (grads, _) = backward_trace(layers, &trace, gloss).unwrap();

        let h = 1e-6;
        for li in 0..layers.len() {
            let Some(analytic) = grads[li].flat() else { continue };
            let base = layers[li].flat_params();
            for pi in 0..base.len() {
                let mut plus = base.clone();
                plus[pi] += h;
                layers[li].set_flat_params(&plus).unwrap();
                let f_plus = objective(layers, input, target);
                let mut minus = base.clone();
                minus[pi] -= h;
                layers[li].set_flat_params(&minus).unwrap();
                let f_minus = objective(layers, input, target);
                layers[li].set_flat_params(&base).unwrap();
                let fd = (f_plus - f_minus) / (2.0 * h);
                let err = (analytic[pi] - fd).abs() / analytic[pi].abs().max(fd.abs()).max(1e-4);
                assert!(err < tol, "layer {li} param {pi}: analytic {} vs fd {fd}", analytic[pi]);
            }
        }
    }

    #[test]
    fn dense_stack_gradients_match_finite_differences() {
        let mut r = rng(1);
        let mut layers = vec![
            dense_glorot(5, 4, &mut r),
            Layer::Act(Act::LeakyRelu),
            dense_glorot(4, 3, &mut r),
        ];
        let input = Value::Flat(random_flat(6, 5, 2));
        let target = Value::Flat(random_flat(6, 3, 3));
        check_param_grads(&mut layers, &input, &target, 1e-6);
    }

    #[test]
    fn conv_pool_dense_gradients_match_finite_differences() {
        let mut r = rng(4);
        let mut layers = vec![
            conv_glorot(2, 3, &mut r),
            Layer::Act(Act::LeakyRelu),
            Layer::AvgPool2,
            Layer::Flatten,
            dense_glorot(2 * 3 * 3, 2, &mut r),
        ];
        let input = Value::Spatial(random_spatial(2, 4, 5, 2, 5));
        let target = Value::Flat(random_flat(2, 2, 6));
        check_param_grads(&mut layers, &input, &target, 1e-5);
    }

    #[test]
    fn decoder_stack_with_upsample_gradients_match_finite_differences() {
        let mut r = rng(7);
        let mut layers = vec![
            dense_glorot(2, 3 * 2 * 2, &mut r),
            Layer::Act(Act::LeakyRelu),
            Layer::Unflatten { h: 3, w: 2, c: 2 },
            Layer::UpsampleTo { h: 5, w: 4 },
            conv_glorot(2, 1, &mut r),
        ];
        let input = Value::Flat(random_flat(3, 2, 8));
        let target = Value::Spatial(random_spatial(3, 5, 4, 1, 9));
        check_param_grads(&mut layers, &input, &target, 1e-5);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut r = rng(10);
        let layers = vec![conv_glorot(1, 2, &mut r), Layer::Act(Act::LeakyRelu), Layer::AvgPool2];
        let input = random_spatial(1, 3, 3, 1, 11);
        let target = Value::Spatial(random_spatial(1, 2, 2, 2, 12));

        let trace = forward_trace(&layers, Value::Spatial(input.clone())).unwrap();
        let (_, gloss) = mse_and_grad(trace.last().unwrap(), &target).unwrap();
        let (_, ginput) = backward_trace(&layers, &trace, gloss).unwrap();
        let ginput = ginput.as_spatial().unwrap().clone();

        let h = 1e-6;
        for idx in 0..input.len() {
            let flat_idx = {
                let (_, hh, ww, cc) = input.dim();
                let i = idx / (ww * cc) % hh;
                let j = idx / cc % ww;
                let ch = idx % cc;
                (0usize, i, j, ch)
            };
            let mut plus = input.clone();
            plus[flat_idx] += h;
            let f_plus = objective(&layers, &Value::Spatial(plus), &target);
            let mut minus = input.clone();
            minus[flat_idx] -= h;
            let f_minus = objective(&layers, &Value::Spatial(minus), &target);
            let fd = (f_plus - f_minus) / (2.0 * h);
            assert!((ginput[flat_idx] - fd).abs() < 1e-7, "input grad at {flat_idx:?}");
        }
    }

    #[test]
    fn avg_pool_ceil_covers_edge_windows() {
        // 3x3 single-channel plane: corners of the pooled 2x2 average 4, 2,
        // 2 and 1 source cells.
        let vals = Array3::from_shape_fn((3, 3, 1), |(i, j, _)| (3 * i + j) as f64);
        let mut x = Array4::zeros((1, 3, 3, 1));
        x.index_axis_mut(Axis(0), 0).assign(&vals);
        let out = Layer::AvgPool2.forward(&Value::Spatial(x)).unwrap();
        let out = out.as_spatial().unwrap();
        assert_eq!(out.dim(), (1, 2, 2, 1));
        assert_eq!(out[(0, 0, 0, 0)], (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
        assert_eq!(out[(0, 0, 1, 0)], (2.0 + 5.0) / 2.0);
        assert_eq!(out[(0, 1, 0, 0)], (6.0 + 7.0) / 2.0);
        assert_eq!(out[(0, 1, 1, 0)], 8.0);
    }

    #[test]
    fn pool_then_upsample_round_trips_shapes_including_odd_dims() {
        for (h, w) in [(60, 60), (15, 9), (7, 4)] {
            let x = random_spatial(2, h, w, 3, 20);
            let pooled = Layer::AvgPool2.forward(&Value::Spatial(x.clone())).unwrap();
            let up = Layer::UpsampleTo { h, w }.forward(&pooled).unwrap();
            assert_eq!(up.as_spatial().unwrap().dim(), (2, h, w, 3));
        }
    }

    #[test]
    fn upsample_exact_doubling_repeats_cells() {
        let mut x = Array4::zeros((1, 2, 2, 1));
        x[(0, 0, 0, 0)] = 1.0;
        x[(0, 0, 1, 0)] = 2.0;
        x[(0, 1, 0, 0)] = 3.0;
        x[(0, 1, 1, 0)] = 4.0;
        let up = Layer::UpsampleTo { h: 4, w: 4 }.forward(&Value::Spatial(x)).unwrap();
        let up = up.as_spatial().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = [[1.0, 2.0], [3.0, 4.0]][i / 2][j / 2];
                assert_eq!(up[(0, i, j, 0)], want);
            }
        }
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let x = random_spatial(3, 4, 5, 2, 30);
        let flat = Layer::Flatten.forward(&Value::Spatial(x.clone())).unwrap();
        assert_eq!(flat.as_flat().unwrap().dim(), (3, 40));
        let back = Layer::Unflatten { h: 4, w: 5, c: 2 }.forward(&flat).unwrap();
        assert_eq!(back.as_spatial().unwrap(), &x);
    }

    #[test]
    fn leaky_slope_applies_on_negative_side() {
        assert_eq!(Act::LeakyRelu.apply(-2.0), -0.2);
        assert_eq!(Act::LeakyRelu.apply(3.0), 3.0);
        assert_eq!(Act::LeakyRelu.derivative(-1.0), LEAKY_SLOPE);
        assert_eq!(Act::LeakyRelu.derivative(1.0), 1.0);
        assert_eq!(Act::Linear.derivative(-5.0), 1.0);
    }
}
