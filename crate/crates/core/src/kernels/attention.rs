//! Attention1d pooling head: same-length 1D convolution, a per-position
//! score from an attention vector, masked softmax, weighted sum, then an
//! affine output map.
//!
//! Parameter file grammar:
//!
//! ```text
//! protok-head<TAB>1
//! params<TAB>5
//! <name><TAB><shape, dims joined by 'x'><TAB><values, space separated, 17 significant digits>
//! ```
//!
//! with names `conv_weight` (k x d x d, output channel before input
//! channel), `conv_bias` (d), `attention` (d), `output_map` (o x d) and
//! `output_bias` (o), in that order.

use std::fmt::Write as _;

use rand::Rng;

use super::{check_mask, EmbeddingMatrix, KernelError};

pub const DEFAULT_KERNEL_WIDTH: usize = 5;

const HEAD_MAGIC: &str = "protok-head";
const HEAD_VERSION: u32 = 1;
const NAMES: [&str; 5] = ["conv_weight", "conv_bias", "attention", "output_map", "output_bias"];

#[derive(Debug, Clone, PartialEq)]
pub struct Attention1dHead {
    kernel_width: usize,
    dim: usize,
    out_dim: usize,
    conv_weight: Vec<f64>,
    conv_bias: Vec<f64>,
    attention: Vec<f64>,
    output_map: Vec<f64>,
    output_bias: Vec<f64>,
}

/// Gradients with the same layout as the head's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub conv_weight: Vec<f64>,
    pub conv_bias: Vec<f64>,
    pub attention: Vec<f64>,
    pub output_map: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl HeadGradients {
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.conv_weight, &self.conv_bias, &self.attention, &self.output_map, &self.output_bias]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

/// Intermediate values of a forward pass over one sequence.
struct Trace {
    /// Input rows with padding zeroed, L x d.
    masked: Vec<f64>,
    conv: Vec<f64>,
    weights: Vec<f64>,
    pooled: Vec<f64>,
}

impl Attention1dHead {
    fn shapes(k: usize, d: usize, o: usize) -> [usize; 5] {
        [k * d * d, d, d, o * d, o]
    }

    pub fn param_count(k: usize, d: usize, o: usize) -> usize {
        Self::shapes(k, d, o).iter().sum()
    }

    /// Builds a head from parameters concatenated in file order.
    pub fn from_flat(kernel_width: usize, dim: usize, out_dim: usize, params: &[f64]) -> Result<Self, KernelError> {
        if kernel_width % 2 == 0 {
            return Err(KernelError::EvenKernel(kernel_width));
        }
        if dim == 0 || out_dim == 0 {
            return Err(KernelError::EmptyMatrix);
        }
        let expected = Self::param_count(kernel_width, dim, out_dim);
        if params.len() != expected {
            return Err(KernelError::ShapeMismatch { expected, found: params.len() });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(KernelError::NonFinite(i));
        }
        let mut rest = params;
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        let [a, b, c, d, e] = Self::shapes(kernel_width, dim, out_dim);
        Ok(Self {
            kernel_width,
            dim,
            out_dim,
            conv_weight: take(a),
            conv_bias: take(b),
            attention: take(c),
            output_map: take(d),
            output_bias: take(e),
        })
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random(kernel_width: usize, dim: usize, out_dim: usize, scale: f64, rng: &mut impl Rng) -> Result<Self, KernelError> {
        let n = Self::param_count(kernel_width, dim, out_dim);
        let params: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self::from_flat(kernel_width, dim, out_dim, &params)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().into_iter().flatten().copied().collect()
    }

    fn blocks(&self) -> [&Vec<f64>; 5] {
        [&self.conv_weight, &self.conv_bias, &self.attention, &self.output_map, &self.output_bias]
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel_width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn attention(&self) -> &[f64] {
        &self.attention
    }

    pub fn set_attention(&mut self, v: Vec<f64>) -> Result<(), KernelError> {
        if v.len() != self.dim {
            return Err(KernelError::ShapeMismatch { expected: self.dim, found: v.len() });
        }
        self.attention = v;
        Ok(())
    }

    fn check(&self, h: &EmbeddingMatrix, valid: &[bool]) -> Result<(), KernelError> {
        if h.cols() != self.dim {
            return Err(KernelError::ShapeMismatch { expected: self.dim, found: h.cols() });
        }
        check_mask(h, valid)
    }

    fn trace(&self, h: &EmbeddingMatrix, valid: &[bool]) -> Trace {
        let (l, d, k) = (h.rows(), self.dim, self.kernel_width);
        let half = k / 2;
        let mut masked = vec![0.0; l * d];
        for t in (0..l).filter(|&t| valid[t]) {
            masked[t * d..(t + 1) * d].copy_from_slice(h.row(t));
        }
        let mut conv = vec![0.0; l * d];
        for t in (0..l).filter(|&t| valid[t]) {
            let out = &mut conv[t * d..(t + 1) * d];
            out.copy_from_slice(&self.conv_bias);
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(half).filter(|&s| s < l) else {
                    continue;
                };
                let x = &masked[src * d..(src + 1) * d];
                let w = &self.conv_weight[j * d * d..(j + 1) * d * d];
                for (c, o) in out.iter_mut().enumerate() {
                    *o += w[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let scores: Vec<f64> = (0..l)
            .map(|t| {
                if valid[t] {
                    conv[t * d..(t + 1) * d].iter().zip(&self.attention).map(|(a, b)| a * b).sum()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = scores.iter().map(|&s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() }).collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        let mut pooled = vec![0.0; d];
        for t in (0..l).filter(|&t| valid[t]) {
            for (p, c) in pooled.iter_mut().zip(&conv[t * d..(t + 1) * d]) {
                *p += weights[t] * c;
            }
        }
        Trace { masked, conv, weights, pooled }
    }

    /// Convolved features, one row per position. Padded rows are zero.
    pub fn convolve(&self, h: &EmbeddingMatrix, valid: &[bool]) -> Result<EmbeddingMatrix, KernelError> {
        self.check(h, valid)?;
        EmbeddingMatrix::new(h.rows(), self.dim, self.trace(h, valid).conv)
    }

    /// Softmax attention weights over positions; zero at padded rows.
    pub fn attention_weights(&self, h: &EmbeddingMatrix, valid: &[bool]) -> Result<Vec<f64>, KernelError> {
        self.check(h, valid)?;
        Ok(self.trace(h, valid).weights)
    }

    /// Pooled d-dimensional representation.
    pub fn pool(&self, h: &EmbeddingMatrix, valid: &[bool]) -> Result<Vec<f64>, KernelError> {
        self.check(h, valid)?;
        Ok(self.trace(h, valid).pooled)
    }

    /// Output map applied to the pooled representation.
    pub fn forward(&self, h: &EmbeddingMatrix, valid: &[bool]) -> Result<Vec<f64>, KernelError> {
        let pooled = self.pool(h, valid)?;
        Ok(self.project(&pooled))
    }

    fn project(&self, pooled: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.out_dim)
            .map(|o| self.output_bias[o] + self.output_map[o * d..(o + 1) * d].iter().zip(pooled).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Gradients of `upstream . forward(h)` with respect to every parameter.
    pub fn gradients(&self, h: &EmbeddingMatrix, valid: &[bool], upstream: &[f64]) -> Result<HeadGradients, KernelError> {
        self.check(h, valid)?;
        if upstream.len() != self.out_dim {
            return Err(KernelError::ShapeMismatch { expected: self.out_dim, found: upstream.len() });
        }
        let (l, d, k) = (h.rows(), self.dim, self.kernel_width);
        let half = k / 2;
        let tr = self.trace(h, valid);

        let mut output_map = vec![0.0; self.out_dim * d];
        let mut dp = vec![0.0; d];
        for (o, &g) in upstream.iter().enumerate() {
            for c in 0..d {
                output_map[o * d + c] = g * tr.pooled[c];
                dp[c] += self.output_map[o * d + c] * g;
            }
        }
        let pooled_dp: f64 = tr.pooled.iter().zip(&dp).map(|(a, b)| a * b).sum();

        let mut attention = vec![0.0; d];
        let mut conv_weight = vec![0.0; k * d * d];
        let mut conv_bias = vec![0.0; d];
        let mut dconv = vec![0.0; d];
        for t in (0..l).filter(|&t| valid[t]) {
            let conv_t = &tr.conv[t * d..(t + 1) * d];
            let a = tr.weights[t];
            let ds = a * (conv_t.iter().zip(&dp).map(|(x, y)| x * y).sum::<f64>() - pooled_dp);
            for c in 0..d {
                attention[c] += ds * conv_t[c];
                dconv[c] = a * dp[c] + ds * self.attention[c];
                conv_bias[c] += dconv[c];
            }
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(half).filter(|&s| s < l) else {
                    continue;
                };
                let x = &tr.masked[src * d..(src + 1) * d];
                let w = &mut conv_weight[j * d * d..(j + 1) * d * d];
                for c in 0..d {
                    for (wc, xc) in w[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *wc += dconv[c] * xc;
                    }
                }
            }
        }
        Ok(HeadGradients { conv_weight, conv_bias, attention, output_map, output_bias: upstream.to_vec() })
    }

    pub fn to_text(&self) -> String {
        let shapes = [
            format!("{}x{}x{}", self.kernel_width, self.dim, self.dim),
            self.dim.to_string(),
            self.dim.to_string(),
            format!("{}x{}", self.out_dim, self.dim),
            self.out_dim.to_string(),
        ];
        let mut out = format!("{HEAD_MAGIC}\t{HEAD_VERSION}\nparams\t{}\n", NAMES.len());
        for ((name, shape), values) in NAMES.iter().zip(&shapes).zip(self.blocks()) {
            let vals: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{name}\t{shape}\t{}", vals.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, KernelError> {
        let fmt = |line: usize, msg: String| KernelError::Format { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let (_, header) = lines.next().ok_or_else(|| fmt(1, "empty file".into()))?;
        if header != format!("{HEAD_MAGIC}\t{HEAD_VERSION}") {
            return Err(fmt(1, format!("bad header {header:?}")));
        }
        let (n, count) = lines.next().ok_or_else(|| fmt(2, "missing params line".into()))?;
        if count != format!("params\t{}", NAMES.len()) {
            return Err(fmt(n, format!("bad params line {count:?}")));
        }
        let mut dims = Vec::new();
        let mut params = Vec::new();
        for name in NAMES {
            let (n, line) = lines.next().ok_or_else(|| fmt(0, format!("missing {name}")))?;
            let mut cols = line.split('\t');
            if cols.next() != Some(name) {
                return Err(fmt(n, format!("expected {name}")));
            }
            let shape: Vec<usize> = cols
                .next()
                .unwrap_or_default()
                .split('x')
                .map(|s| s.parse().map_err(|_| fmt(n, format!("bad shape {s:?}"))))
                .collect::<Result<_, _>>()?;
            let values: Vec<f64> = cols
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| fmt(n, format!("bad value {s:?}"))))
                .collect::<Result<_, _>>()?;
            if values.len() != shape.iter().product::<usize>() {
                return Err(fmt(n, format!("{name}: shape {shape:?} does not match {} values", values.len())));
            }
            dims.push(shape);
            params.extend(values);
        }
        let (k, d, o) = match dims.as_slice() {
            [w, _, _, m, _] if w.len() == 3 && m.len() == 2 => (w[0], w[1], m[0]),
            _ => return Err(fmt(0, "bad parameter shapes".into())),
        };
        let head = Self::from_flat(k, d, o, &params)?;
        let expected: Vec<Vec<usize>> = vec![vec![k, d, d], vec![d], vec![d], vec![o, d], vec![o]];
        if dims != expected {
            return Err(fmt(0, format!("inconsistent shapes {dims:?}")));
        }
        Ok(head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{finite_diff_check, mean_pool};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, l: usize, d: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::new(l, d, (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_attention_is_mean_of_convolved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = Attention1dHead::random(5, 4, 2, 0.5, &mut rng).unwrap();
        head.set_attention(vec![0.0; 4]).unwrap();
        let h = random_input(&mut rng, 7, 4);
        let valid = [true, true, false, true, true, true, false];
        let conv = head.convolve(&h, &valid).unwrap();
        let expect = mean_pool(&conv, &valid).unwrap();
        for (a, b) in head.pool(&h, &valid).unwrap().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_valid_row_returns_its_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = Attention1dHead::random(5, 3, 2, 1.0, &mut rng).unwrap();
        let h = random_input(&mut rng, 4, 3);
        let valid = [false, false, true, false];
        let conv = head.convolve(&h, &valid).unwrap();
        assert_eq!(head.pool(&h, &valid).unwrap(), conv.row(2).to_vec());
    }

    #[test]
    fn weights_are_a_masked_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let head = Attention1dHead::random(5, 6, 3, 1.0, &mut rng).unwrap();
            let h = random_input(&mut rng, 9, 6);
            let mut valid: Vec<bool> = (0..9).map(|_| rng.gen_bool(0.7)).collect();
            valid[0] = true;
            let w = head.attention_weights(&h, &valid).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().zip(&valid).all(|(w, v)| *v || *w == 0.0));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = Attention1dHead::random(5, 4, 3, 1.0, &mut rng).unwrap();
        let h = random_input(&mut rng, 6, 4);
        let g = head.gradients(&h, &[true; 6], &[0.0; 3]).unwrap();
        assert!(g.to_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (l, d, o) = (6, 8, 3);
            let head = Attention1dHead::random(5, d, o, 0.3, &mut rng).unwrap();
            let h = random_input(&mut rng, l, d);
            let mut valid: Vec<bool> = (0..l).map(|_| rng.gen_bool(0.8)).collect();
            valid[1] = true;
            let up: Vec<f64> = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let analytic = head.gradients(&h, &valid, &up).unwrap().to_flat();
            let f = |p: &[f64]| {
                let hd = Attention1dHead::from_flat(5, d, o, p).unwrap();
                hd.forward(&h, &valid).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
            };
            let err = finite_diff_check(f, &head.to_flat(), &analytic, 1e-5).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn padded_rows_do_not_affect_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let head = Attention1dHead::random(5, 4, 2, 1.0, &mut rng).unwrap();
        let mut h = random_input(&mut rng, 6, 4);
        let valid = [true, false, true, true, false, true];
        let before = head.forward(&h, &valid).unwrap();
        h.row_mut(1).iter_mut().for_each(|x| *x += 100.0);
        h.row_mut(4).iter_mut().for_each(|x| *x = -3.0);
        assert_eq!(head.forward(&h, &valid).unwrap(), before);
    }

    #[test]
    fn parameter_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let head = Attention1dHead::random(5, 3, 2, 1.0, &mut rng).unwrap();
        let text = head.to_text();
        assert_eq!(Attention1dHead::from_text(&text).unwrap(), head);
        assert!(Attention1dHead::from_text(&text.replace("conv_bias\t3", "conv_bias\t4")).is_err());
        assert!(Attention1dHead::from_text("protok-head\t2\n").is_err());
    }

    #[test]
    fn shape_errors() {
        assert_eq!(Attention1dHead::from_flat(4, 2, 1, &[]).unwrap_err(), KernelError::EvenKernel(4));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = Attention1dHead::random(3, 2, 1, 1.0, &mut rng).unwrap();
        let h = random_input(&mut rng, 3, 4);
        assert!(matches!(head.pool(&h, &[true; 3]), Err(KernelError::ShapeMismatch { .. })));
        let h = random_input(&mut rng, 3, 2);
        assert_eq!(head.pool(&h, &[false; 3]), Err(KernelError::NoValidRows));
        assert!(head.gradients(&h, &[true; 3], &[1.0, 2.0]).is_err());
    }
}
