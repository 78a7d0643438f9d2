//! Fully connected tanh network over a flat parameter vector.
//!
//! Layer `l` stores its weight matrix row-major (`out x in`) followed by its
//! bias. Hidden layers use tanh; the last layer is linear.

use crate::rng::{std_normal, Rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Activations of one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn forward(&self, theta: &[f64], x: &[f64], tape: &mut Tape) {
        debug_assert_eq!(theta.len(), self.param_count());
        let n_layers = self.sizes.len() - 1;
        tape.acts.resize_with(self.sizes.len(), Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &theta[off..off + n_out * n_in];
            let b = &theta[off + n_out * n_in..off + n_out * n_in + n_out];
            off += n_out * n_in + n_out;
            let (prev, rest) = tape.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    s += wi * xi;
                }
                out.push(if l + 1 < n_layers { s.tanh() } else { s });
            }
        }
    }

    /// Accumulates `d(out)/d(theta)^T * dout` into `grad`.
    pub fn backward(&self, theta: &[f64], tape: &Tape, dout: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l + 1] * self.sizes[l] + self.sizes[l + 1];
        }
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &tape.acts[l];
            {
                let (gw, gb) = grad[off..off + n_out * n_in + n_out].split_at_mut(n_out * n_in);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, xi) in row.iter_mut().zip(input.iter()) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &theta[off..off + n_out * n_in];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (nx, wi) in next.iter_mut().zip(row) {
                    *nx += d * wi;
                }
            }
            // input to layer l is tanh output of layer l-1
            for (nx, a) in next.iter_mut().zip(input.iter()) {
                *nx *= 1.0 - a * a;
            }
            delta = next;
        }
    }

    /// Orthogonal initialization: each weight block has orthonormal rows or
    /// columns scaled by its gain; biases start at zero.
    pub fn init(&self, hidden_gain: f64, output_gain: f64, rng: &mut Rng) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut theta = Vec::with_capacity(self.param_count());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 < n_layers {
                hidden_gain
            } else {
                output_gain
            };
            let w = orthogonal(n_out, n_in, gain, rng);
            theta.extend_from_slice(&w);
            theta.extend(std::iter::repeat_n(0.0, n_out));
        }
        theta
    }
}

/// `rows x cols` row-major matrix with orthonormal rows (rows <= cols) or
/// orthonormal columns (rows > cols), times `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let transpose = rows > cols;
    let (r, c) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let mut m: Vec<Vec<f64>> = Vec::with_capacity(r);
    while m.len() < r {
        let mut v: Vec<f64> = (0..c).map(|_| std_normal(rng)).collect();
        for u in &m {
            let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-8 {
            continue;
        }
        for vi in &mut v {
            *vi /= n;
        }
        m.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = gain * if transpose { m[j][i] } else { m[i][j] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    #[test]
    fn param_count_and_layout() {
        let net = Mlp::new(vec![4, 64, 64, 2]);
        assert_eq!(net.param_count(), 4 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = Mlp::new(vec![3, 5, 4, 2]);
        let mut rng = Streams::new(1).stream("init", 0);
        let theta: Vec<f64> = (0..net.param_count())
            .map(|_| 0.5 * std_normal(&mut rng))
            .collect();
        let x = [0.3, -1.2, 0.7];
        let dout = [0.4, -1.1];
        let mut tape = Tape::default();
        net.forward(&theta, &x, &mut tape);
        let mut grad = vec![0.0; theta.len()];
        net.backward(&theta, &tape, &dout, &mut grad);
        let f = |t: &[f64]| {
            let mut tp = Tape::default();
            net.forward(t, &x, &mut tp);
            tp.output()
                .iter()
                .zip(&dout)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (f(&tp) - f(&tm)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn orthogonal_rows_and_columns() {
        let mut rng = Streams::new(2).stream("init", 0);
        for (r, c) in [(3, 5), (5, 3), (4, 4)] {
            let w = orthogonal(r, c, 2.0, &mut rng);
            let (outer, inner) = if r <= c { (r, c) } else { (c, r) };
            for a in 0..outer {
                for b in 0..outer {
                    let p: f64 = (0..inner)
                        .map(|k| {
                            if r <= c {
                                w[a * c + k] * w[b * c + k]
                            } else {
                                w[k * c + a] * w[k * c + b]
                            }
                        })
                        .sum();
                    let want = if a == b { 4.0 } else { 0.0 };
                    assert!((p - want).abs() < 1e-10);
                }
            }
        }
    }
}
