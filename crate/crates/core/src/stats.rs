//! Monte Carlo accumulators and estimates.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            n: 0,
        }
    }
}

/// Complex-valued estimate; `stderr` is the standard error of the modulus of
/// the deviation, i.e. `sqrt(Var Re + Var Im) / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub value: Complex64,
    pub stderr: f64,
    pub n: usize,
}

impl ComplexEstimate {
    pub fn exact(value: Complex64) -> Self {
        ComplexEstimate {
            value,
            stderr: 0.0,
            n: 0,
        }
    }

    /// Number of standard errors separating the estimate from `target`.
    /// Infinite when the estimate has zero variance and differs at all.
    pub fn z_score(&self, target: Complex64) -> f64 {
        let dev = (self.value - target).norm();
        if self.stderr > 0.0 {
            dev / self.stderr
        } else if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Welford running mean/variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean,
            stderr: self.stderr(),
            n: self.count,
        }
    }

    /// Chan et al. pairwise merge; `self` precedes `other` in path order.
    pub fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexAccumulator {
    re: Accumulator,
    im: Accumulator,
}

impl ComplexAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, z: Complex64) {
        self.re.push(z.re);
        self.im.push(z.im);
    }

    pub fn count(&self) -> usize {
        self.re.count()
    }

    pub fn merge(&mut self, other: &ComplexAccumulator) {
        self.re.merge(&other.re);
        self.im.merge(&other.im);
    }

    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.re.mean(), self.im.mean())
    }

    pub fn estimate(&self) -> ComplexEstimate {
        ComplexEstimate {
            value: self.mean(),
            stderr: (self.re.stderr().powi(2) + self.im.stderr().powi(2)).sqrt(),
            n: self.count(),
        }
    }
}

impl FromIterator<Complex64> for ComplexAccumulator {
    fn from_iter<I: IntoIterator<Item = Complex64>>(iter: I) -> Self {
        let mut acc = ComplexAccumulator::new();
        for z in iter {
            acc.push(z);
        }
        acc
    }
}

/// Sample mean of `exp(i * arg * s)` with its standard error.
pub fn empirical_char_function(samples: &[f64], arg: f64) -> crate::Result<ComplexEstimate> {
    if samples.is_empty() {
        return Err(crate::Error::Empty("characteristic-function samples"));
    }
    Ok(samples
        .iter()
        .map(|&s| Complex64::from_polar(1.0, arg * s))
        .collect::<ComplexAccumulator>()
        .estimate())
}

/// Two-dimensional variant: mean of `exp(i <arg, s>)`.
pub fn empirical_char_function_2d(
    samples: &[[f64; 2]],
    arg: [f64; 2],
) -> crate::Result<ComplexEstimate> {
    if samples.is_empty() {
        return Err(crate::Error::Empty("characteristic-function samples"));
    }
    Ok(samples
        .iter()
        .map(|s| Complex64::from_polar(1.0, arg[0] * s[0] + arg[1] * s[1]))
        .collect::<ComplexAccumulator>()
        .estimate())
}
