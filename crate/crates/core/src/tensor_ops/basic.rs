use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::tape::{Tape, Var};

/// Max pooling over disjoint `factor x factor` windows.
///
/// Returns the pooled tensor and, per output element, the flat input index of
/// the first maximum in row-major window order.
pub fn max_pool_forward(x: &Tensor, factor: usize) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    check_divisible("max_pool", s, factor)?;
    let out_shape = Shape::new(s.n, s.c, s.h / factor, s.w / factor);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let idx = s.index(n, c, oy * factor + dy, ox * factor + dx);
                            let v = x.data()[idx];
                            // Strict comparison keeps the first maximum on ties.
                            if best_idx == usize::MAX || v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::new(out_shape, out)?, argmax))
}

pub fn avg_pool_forward(x: &Tensor, factor: usize) -> Result<Tensor> {
    let s = x.shape();
    check_divisible("avg_pool", s, factor)?;
    let out_shape = Shape::new(s.n, s.c, s.h / factor, s.w / factor);
    let scale = 1.0 / (factor * factor) as f64;
    Ok(Tensor::from_fn(out_shape, |n, c, oy, ox| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += x.at(n, c, oy * factor + dy, ox * factor + dx);
            }
        }
        acc * scale
    }))
}

fn check_divisible(op: &'static str, s: Shape, factor: usize) -> Result<()> {
    if factor < 1 {
        return Err(Error::invalid(op, "factor must be >= 1"));
    }
    if !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return Err(Error::invalid(
            op,
            format!("spatial dims {}x{} not divisible by {factor}", s.h, s.w),
        ));
    }
    Ok(())
}

impl Tape {
    /// Elementwise `max(0, x)`. The subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(
            "relu",
            out,
            &[x],
            Box::new(|g, inputs, _, _| {
                vec![Some(
                    g.zip_map(inputs[0], |g, x| if x > 0.0 { g } else { 0.0 })
                        .expect("same shape"),
                )]
            }),
        )
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        self.max_pool(x, 2)
    }

    /// Max pooling; the gradient routes to the first maximum of each window.
    pub fn max_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (out, argmax) = max_pool_forward(self.value(x), factor)?;
        Ok(self.push(
            "max_pool",
            out,
            &[x],
            Box::new(move |g, inputs, _, _| {
                let mut dx = Tensor::zeros(inputs[0].shape());
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    dx.data_mut()[idx] += gv;
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = avg_pool_forward(self.value(x), factor)?;
        Ok(self.push(
            "avg_pool",
            out,
            &[x],
            Box::new(move |g, inputs, _, _| {
                let scale = 1.0 / (factor * factor) as f64;
                let dx = Tensor::from_fn(inputs[0].shape(), |n, c, y, x| {
                    g.at(n, c, y / factor, x / factor) * scale
                });
                vec![Some(dx)]
            }),
        ))
    }

    /// Concatenates along the channel axis, preserving input order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let base = self.shape(*first);
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if (s.n, s.h, s.w) != (base.n, base.h, base.w) {
                return Err(Error::shape("concat_channels", format!("{s} vs {base}")));
            }
            channels.push(s.c);
        }
        let total: usize = channels.iter().sum();
        let out_shape = Shape::new(base.n, total, base.h, base.w);
        let plane = base.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..base.n {
            for &x in xs {
                let t = self.value(x);
                let c = t.shape().c;
                data.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            "concat_channels",
            out,
            xs,
            Box::new(move |g, inputs, _, needs| {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(inputs.len());
                for (input, &need) in inputs.iter().zip(needs) {
                    let s = input.shape();
                    if need {
                        let mut data = Vec::with_capacity(s.numel());
                        for n in 0..s.n {
                            let start = (n * total + offset) * plane;
                            data.extend_from_slice(&g.data()[start..start + s.c * plane]);
                        }
                        grads.push(Some(Tensor::new(s, data).expect("shape")));
                    } else {
                        grads.push(None);
                    }
                    offset += s.c;
                }
                grads
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.weighted_sum(&[(a, 1.0), (b, 1.0)], 0.0)
    }

    /// `offset + sum_i coeff_i * x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)], offset: f64) -> Result<Var> {
        let (first, _) = terms
            .first()
            .ok_or_else(|| Error::invalid("weighted_sum", "no terms"))?;
        let shape = self.shape(*first);
        let mut out = Tensor::full(shape, offset);
        for &(x, coeff) in terms {
            let t = self.value(x);
            if t.shape() != shape {
                return Err(Error::shape("weighted_sum", format!("{} vs {shape}", t.shape())));
            }
            for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
                *o += coeff * v;
            }
        }
        let coeffs: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(
            "weighted_sum",
            out,
            &vars,
            Box::new(move |g, _, _, needs| {
                coeffs
                    .iter()
                    .zip(needs)
                    .map(|(&c, &need)| need.then(|| g.map(|v| v * c)))
                    .collect()
            }),
        ))
    }

    /// Scalar `sum(x * weights)` for a constant weight tensor.
    pub fn dot_const(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let t = self.value(x);
        t.expect_same_shape(weights, "dot_const")?;
        let value: f64 = t.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let weights = weights.clone();
        Ok(self.push(
            "dot_const",
            Tensor::scalar(value),
            &[x],
            Box::new(move |g, _, _, _| vec![Some(weights.map(|w| w * g.item()))]),
        ))
    }
}
