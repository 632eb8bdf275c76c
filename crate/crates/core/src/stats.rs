//! Small, order-fixed statistics used by the Monte-Carlo diagnostics.

/// Pairwise (cascade) summation; the result depends only on the order of
/// `xs`, never on how the values were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Sample mean with its standard error `s / sqrt(M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub estimate: f64,
    pub standard_error: f64,
    pub sample_count: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            estimate: mean(xs),
            standard_error: (sample_variance(xs) / xs.len() as f64).sqrt(),
            sample_count: xs.len(),
        }
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &Summary, k: f64) -> bool {
        let se = self.standard_error.hypot(other.standard_error);
        (self.estimate - other.estimate).abs() <= k * se
    }
}

/// Running batch accumulator for the batch-means error estimate of a
/// correlated time series of known length.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    total: usize,
    seen: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl BatchMeans {
    pub fn new(batches: usize, total: usize) -> Self {
        assert!(batches >= 2 && total >= batches);
        Self {
            total,
            seen: 0,
            sums: vec![0.0; batches],
            counts: vec![0; batches],
        }
    }

    pub fn push(&mut self, x: f64) {
        let b = (self.seen * self.sums.len() / self.total).min(self.sums.len() - 1);
        self.sums[b] += x;
        self.counts[b] += 1;
        self.seen += 1;
    }

    pub fn summary(&self) -> Summary {
        let means: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect();
        let mut s = Summary::of(&means);
        s.sample_count = self.seen;
        s
    }
}

/// Least-squares line `y = intercept + slope * x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}
