//! Reductions used by every Monte Carlo estimate.
//!
//! Sums are correctly rounded (Shewchuk's exact partials, the algorithm behind
//! Python's `math.fsum`). The result does not depend on summation order, so an
//! estimate is bit-identical however the samples were produced.

/// Correctly rounded sum of `xs`.
///
/// Falls back to plain summation when a non-finite value is present.
pub fn exact_sum(xs: &[f64]) -> f64 {
    let mut acc = ExactSum::default();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Incremental correctly rounded accumulator.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    special: f64,
    has_special: bool,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special += x;
            self.has_special = true;
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        if self.has_special {
            return self.special + self.partials.iter().sum::<f64>();
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // round-half-even correction when the tail points the same way as lo
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

/// Sample mean, computed from the correctly rounded sum.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    exact_sum(xs) / xs.len() as f64
}

/// Standard error of the sample mean (unbiased variance). Zero for fewer than two samples.
pub fn std_error(xs: &[f64], mean: f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = ExactSum::default();
    for &x in xs {
        let d = x - mean;
        acc.add(d * d);
    }
    (acc.value() / (n as f64 - 1.0) / n as f64).sqrt()
}

/// Mean and standard error in one call.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    (m, std_error(xs, m))
}

/// Combined standard error of a difference of two estimates.
pub fn pooled(se_a: f64, se_b: f64) -> f64 {
    se_a.hypot(se_b)
}

/// Sample excess-free kurtosis `E[(x-m)^4] / E[(x-m)^2]^2`.
pub fn kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut m2 = ExactSum::default();
    let mut m4 = ExactSum::default();
    for &x in xs {
        let d = (x - m) * (x - m);
        m2.add(d);
        m4.add(d * d);
    }
    let n = xs.len() as f64;
    let v = m2.value() / n;
    m4.value() / n / (v * v)
}
