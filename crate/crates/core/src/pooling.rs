//! Down-sampling layers: max and average pooling, and shuffle pooling.
//!
//! Shuffle pooling samples the input at every `factor`-th position for each
//! of the `factor²` offsets `(a, b)` and stacks the samples as extra channels.
//! With offset index `o = a * factor + b` and `c` input channels:
//!
//! * direct: `out[o * c + ch, i, j] = x[ch, factor * i + a, factor * j + b]`
//!   (channels grouped by offset),
//! * insert: `out[ch * factor² + o, i, j] = x[ch, factor * i + a, factor * j + b]`
//!   (offsets interleaved within each source channel).
//!
//! Both are permutations of the input, so nothing is lost and
//! [`shuffle_unpool`] inverts them exactly.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::tensor_ops::{avg_pool_forward, max_pool_forward, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arrangement {
    Direct,
    Insert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
    Shuffle(Arrangement),
}

impl PoolKind {
    pub const ALL: [PoolKind; 4] = [
        PoolKind::Max,
        PoolKind::Avg,
        PoolKind::Shuffle(Arrangement::Direct),
        PoolKind::Shuffle(Arrangement::Insert),
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
            PoolKind::Shuffle(Arrangement::Direct) => "shuffle-direct",
            PoolKind::Shuffle(Arrangement::Insert) => "shuffle-insert",
        }
    }

    pub fn is_shuffle(self) -> bool {
        matches!(self, PoolKind::Shuffle(_))
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "max" => Ok(PoolKind::Max),
            "avg" => Ok(PoolKind::Avg),
            "shuffle-direct" => Ok(PoolKind::Shuffle(Arrangement::Direct)),
            "shuffle-insert" => Ok(PoolKind::Shuffle(Arrangement::Insert)),
            _ => Err(Error::invalid(
                "pooling",
                format!("unknown pooling kind {s:?} (max, avg, shuffle-direct, shuffle-insert)"),
            )),
        }
    }
}

/// Pooling kind plus spatial down-scale factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub factor: usize,
}

impl PoolSpec {
    pub fn new(kind: PoolKind, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::invalid("PoolSpec", format!("factor {factor} < 2")));
        }
        Ok(PoolSpec { kind, factor })
    }

    /// Channel count after pooling `channels` input channels.
    pub fn output_channels(&self, channels: usize) -> usize {
        if self.kind.is_shuffle() {
            channels * self.factor * self.factor
        } else {
            channels
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        check_divisible(input, self.factor)?;
        Ok(Shape::new(
            input.n,
            self.output_channels(input.c),
            input.h / self.factor,
            input.w / self.factor,
        ))
    }
}

fn check_divisible(s: Shape, factor: usize) -> Result<()> {
    if factor == 0 || !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return Err(Error::invalid(
            "pooling",
            format!("spatial dims {}x{} not divisible by {factor}", s.h, s.w),
        ));
    }
    Ok(())
}

/// For each output element, the flat index of the input element it copies.
fn shuffle_index_map(input: Shape, arrangement: Arrangement, factor: usize) -> Vec<usize> {
    let ff = factor * factor;
    let out = Shape::new(input.n, input.c * ff, input.h / factor, input.w / factor);
    let mut map = vec![0; out.numel()];
    for n in 0..input.n {
        for ch in 0..input.c {
            for a in 0..factor {
                for b in 0..factor {
                    let o = a * factor + b;
                    let out_ch = match arrangement {
                        Arrangement::Direct => o * input.c + ch,
                        Arrangement::Insert => ch * ff + o,
                    };
                    for i in 0..out.h {
                        for j in 0..out.w {
                            map[out.index(n, out_ch, i, j)] =
                                input.index(n, ch, factor * i + a, factor * j + b);
                        }
                    }
                }
            }
        }
    }
    map
}

pub fn shuffle_pool(x: &Tensor, arrangement: Arrangement, factor: usize) -> Result<Tensor> {
    let s = x.shape();
    check_divisible(s, factor)?;
    let map = shuffle_index_map(s, arrangement, factor);
    let out_shape = Shape::new(s.n, s.c * factor * factor, s.h / factor, s.w / factor);
    Tensor::new(out_shape, map.iter().map(|&i| x.data()[i]).collect())
}

/// Exact inverse of [`shuffle_pool`].
pub fn shuffle_unpool(
    y: &Tensor,
    arrangement: Arrangement,
    factor: usize,
    original_channels: usize,
) -> Result<Tensor> {
    let s = y.shape();
    let ff = factor * factor;
    if factor == 0 || original_channels == 0 || s.c != original_channels * ff {
        return Err(Error::shape(
            "shuffle_unpool",
            format!("{} channels is not {original_channels} x {factor}²", s.c),
        ));
    }
    let input = Shape::new(s.n, original_channels, s.h * factor, s.w * factor);
    let map = shuffle_index_map(input, arrangement, factor);
    let mut data = vec![0.0; input.numel()];
    for (&src, &v) in map.iter().zip(y.data()) {
        data[src] = v;
    }
    Tensor::new(input, data)
}

/// Forward pass of any pooling kind without recording a tape.
pub fn pool(x: &Tensor, spec: PoolSpec) -> Result<Tensor> {
    match spec.kind {
        PoolKind::Max => Ok(max_pool_forward(x, spec.factor)?.0),
        PoolKind::Avg => avg_pool_forward(x, spec.factor),
        PoolKind::Shuffle(arr) => shuffle_pool(x, arr, spec.factor),
    }
}

impl Tape {
    /// Shuffle pooling; the gradient is the inverse permutation.
    pub fn shuffle_pool(&mut self, x: Var, arrangement: Arrangement, factor: usize) -> Result<Var> {
        let input = self.shape(x);
        let out = shuffle_pool(self.value(x), arrangement, factor)?;
        Ok(self.push(
            "shuffle_pool",
            out,
            &[x],
            Box::new(move |g, _, _, _| {
                vec![Some(
                    shuffle_unpool(g, arrangement, factor, input.c).expect("shape"),
                )]
            }),
        ))
    }

    pub fn pool(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        match spec.kind {
            PoolKind::Max => self.max_pool(x, spec.factor),
            PoolKind::Avg => self.avg_pool(x, spec.factor),
            PoolKind::Shuffle(arr) => self.shuffle_pool(x, arr, spec.factor),
        }
    }
}

/// Exact non-negative fraction `num / den` in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    pub fn new(num: usize, den: usize) -> Self {
        assert!(den > 0, "zero denominator");
        let g = gcd(num, den).max(1);
        Fraction {
            num: num / g,
            den: den / g,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn min(self, other: Fraction) -> Fraction {
        if self.num * other.den <= other.num * self.den {
            self
        } else {
            other
        }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Outcome of probing one pooling configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Retention {
    pub kind: PoolKind,
    pub factor: usize,
    /// Input positions whose individual perturbation changes the output.
    pub influential: Fraction,
    /// Input degrees of freedom that survive pooling: the influential
    /// fraction, capped by the output/input size ratio.
    pub retained: Fraction,
}

impl Retention {
    pub fn loss(&self) -> Fraction {
        Fraction::new(self.retained.den - self.retained.num, self.retained.den)
    }
}

/// Measures information retention of a pooling kind empirically.
///
/// The probe tensor holds a random permutation of distinct integers, so a
/// perturbation of ±0.5 can never reorder values inside a window. Max pooling
/// reports only the window maxima as influential; average pooling reports
/// every position as influential but its output has `1/factor²` as many
/// values, so it is rank-deficient; shuffle pooling retains everything.
pub fn retention_fraction(kind: PoolKind, factor: usize) -> Result<Retention> {
    let spec = PoolSpec::new(kind, factor)?;
    let shape = Shape::new(1, 2, 2 * factor, 3 * factor);
    let mut values: Vec<f64> = (0..shape.numel()).map(|v| v as f64).collect();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(factor as u64));
    let x = Tensor::new(shape, values)?;
    let base = pool(&x, spec)?;

    let mut influential = 0;
    let mut probe = x.clone();
    for i in 0..shape.numel() {
        let orig = probe.data()[i];
        let mut changed = false;
        for delta in [0.5, -0.5] {
            probe.data_mut()[i] = orig + delta;
            changed |= pool(&probe, spec)?.data() != base.data();
        }
        probe.data_mut()[i] = orig;
        if changed {
            influential += 1;
        }
    }
    let influential = Fraction::new(influential, shape.numel());
    let capacity = Fraction::new(base.numel().min(x.numel()), x.numel());
    Ok(Retention {
        kind,
        factor,
        influential,
        retained: influential.min(capacity),
    })
}

/// CSV with header `kind,factor,retained_fraction`.
pub fn retention_csv(rows: &[Retention]) -> String {
    let mut out = String::from("kind,factor,retained_fraction\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.kind, r.factor, r.retained.to_f64()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ramp16() -> Tensor {
        Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f64)
    }

    #[test]
    fn direct_enumerated_example() {
        let y = shuffle_pool(&ramp16(), Arrangement::Direct, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 2, 2));
        assert_eq!(y.plane(0, 0), &[0.0, 2.0, 8.0, 10.0]);
        assert_eq!(y.plane(0, 1), &[1.0, 3.0, 9.0, 11.0]);
        assert_eq!(y.plane(0, 2), &[4.0, 6.0, 12.0, 14.0]);
        assert_eq!(y.plane(0, 3), &[5.0, 7.0, 13.0, 15.0]);
        let back = shuffle_unpool(&y, Arrangement::Direct, 2, 1).unwrap();
        assert_eq!(back, ramp16());
    }

    #[test]
    fn single_channel_arrangements_coincide() {
        let d = shuffle_pool(&ramp16(), Arrangement::Direct, 2).unwrap();
        let i = shuffle_pool(&ramp16(), Arrangement::Insert, 2).unwrap();
        assert_eq!(d, i);
    }

    #[test]
    fn two_channel_arrangements_differ_by_fixed_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = 2;
        let f = 2;
        let x = Tensor::random_uniform(Shape::new(1, c, 6, 4), 0.0, 1.0, &mut rng);
        let d = shuffle_pool(&x, Arrangement::Direct, f).unwrap();
        let ins = shuffle_pool(&x, Arrangement::Insert, f).unwrap();
        assert_ne!(d, ins);
        for o in 0..f * f {
            for ch in 0..c {
                assert_eq!(d.plane(0, o * c + ch), ins.plane(0, ch * f * f + o));
            }
        }
    }

    #[test]
    fn rejects_indivisible_input_and_bad_channel_count() {
        let x = Tensor::zeros(Shape::new(1, 1, 5, 4));
        assert!(shuffle_pool(&x, Arrangement::Insert, 2).is_err());
        let y = Tensor::zeros(Shape::new(1, 6, 2, 2));
        assert!(shuffle_unpool(&y, Arrangement::Insert, 2, 1).is_err());
        assert!(PoolSpec::new(PoolKind::Max, 1).is_err());
    }

    #[test]
    fn retention_values() {
        let max2 = retention_fraction(PoolKind::Max, 2).unwrap();
        assert_eq!(max2.retained, Fraction::new(1, 4));
        assert_eq!(max2.loss(), Fraction::new(3, 4));
        assert_eq!(retention_fraction(PoolKind::Max, 4).unwrap().retained, Fraction::new(1, 16));
        let avg = retention_fraction(PoolKind::Avg, 2).unwrap();
        assert_eq!(avg.influential, Fraction::new(1, 1));
        assert_eq!(avg.retained, Fraction::new(1, 4));
        for arr in [Arrangement::Direct, Arrangement::Insert] {
            for f in [2, 3, 4] {
                let r = retention_fraction(PoolKind::Shuffle(arr), f).unwrap();
                assert_eq!(r.retained, Fraction::new(1, 1));
            }
        }
    }

    #[test]
    fn parses_both_spellings() {
        assert_eq!(
            "shuffle_insert".parse::<PoolKind>().unwrap(),
            PoolKind::Shuffle(Arrangement::Insert)
        );
        assert_eq!("shuffle-direct".parse::<PoolKind>().unwrap().name(), "shuffle-direct");
        assert!("median".parse::<PoolKind>().is_err());
    }
}
