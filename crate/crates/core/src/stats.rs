//! Mergeable Monte Carlo accumulators and confidence intervals.

use serde::{Deserialize, Serialize};

use crate::walk::rng::Merge;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MonteCarlo,
    ExactDp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub se: f64,
    pub level: f64,
    pub samples: u64,
    pub method: Method,
}

impl EstimateWithCI {
    pub fn exact(estimate: f64) -> Self {
        EstimateWithCI {
            estimate,
            se: 0.0,
            level: 0.95,
            samples: 0,
            method: Method::ExactDp,
        }
    }

    pub fn monte_carlo(estimate: f64, se: f64, samples: u64) -> Self {
        EstimateWithCI {
            estimate,
            se: se.max(0.0),
            level: 0.95,
            samples,
            method: Method::MonteCarlo,
        }
    }

    pub fn half_width(&self) -> f64 {
        Z95 * self.se
    }

    pub fn ci(&self) -> (f64, f64) {
        (self.estimate - self.half_width(), self.estimate + self.half_width())
    }

    /// Whether two estimates agree within the 95% interval of their difference.
    pub fn agrees_with(&self, other: &EstimateWithCI) -> bool {
        let se = self.se.hypot(other.se);
        (self.estimate - other.estimate).abs() <= Z95 * se
    }

    /// `|self − other| / SE(self − other)`, infinite when both are exact and differ.
    pub fn z_score(&self, other: &EstimateWithCI) -> f64 {
        let se = self.se.hypot(other.se);
        let d = (self.estimate - other.estimate).abs();
        if se > 0.0 {
            d / se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Count, mean and centred second moment with Chan's parallel merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MeanVar {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl MeanVar {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn var(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.var() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> EstimateWithCI {
        EstimateWithCI::monte_carlo(self.mean, self.se(), self.count)
    }
}

impl Merge for MeanVar {
    fn merge(&mut self, o: Self) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = o;
            return;
        }
        let n = (self.count + o.count) as f64;
        let d = o.mean - self.mean;
        self.mean += d * o.count as f64 / n;
        self.m2 += o.m2 + d * d * self.count as f64 * o.count as f64 / n;
        self.count += o.count;
    }
}

/// `log mean exp(x_i)` with max subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogMeanExp {
    pub count: u64,
    pub max: f64,
    /// `Σ exp(x_i − max)`.
    pub sum: f64,
    /// `Σ exp(2(x_i − max))`.
    pub sum_sq: f64,
}

impl Default for LogMeanExp {
    fn default() -> Self {
        LogMeanExp {
            count: 0,
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }
}

impl LogMeanExp {
    fn rescale(&mut self, new_max: f64) {
        if new_max > self.max {
            if self.count > 0 {
                let f = (self.max - new_max).exp();
                self.sum *= f;
                self.sum_sq *= f * f;
            }
            self.max = new_max;
        }
    }

    pub fn push(&mut self, x: f64) {
        self.rescale(x);
        let w = (x - self.max).exp();
        self.sum += w;
        self.sum_sq += w * w;
        self.count += 1;
    }

    pub fn log_mean(&self) -> f64 {
        self.max + (self.sum / self.count as f64).ln()
    }

    /// Delta-method standard error of [`Self::log_mean`].
    pub fn se(&self) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return 0.0;
        }
        let m = self.sum / n;
        let var = ((self.sum_sq / n - m * m) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt() / m
    }

    /// Kish effective sample size of the exponential weights.
    pub fn ess(&self) -> f64 {
        if self.sum_sq == 0.0 {
            0.0
        } else {
            self.sum * self.sum / self.sum_sq
        }
    }
}

impl Merge for LogMeanExp {
    fn merge(&mut self, mut o: Self) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = o;
            return;
        }
        let m = self.max.max(o.max);
        self.rescale(m);
        o.rescale(m);
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.count += o.count;
    }
}

/// Wilson score interval for `hits / n` at 95%.
pub fn wilson(hits: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}
