use ndarray::ArrayView2;

/// Column-wise discretization of a training matrix. Each feature has an
/// ascending list of cut points; a value's code is the number of cuts strictly
/// below it, so `x <= cuts[b]` exactly when `code(x) <= b`.
#[derive(Debug, Clone)]
pub(crate) struct BinnedMatrix {
    pub codes: Vec<Vec<u32>>,
    pub cuts: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }
}

/// Threshold between two consecutive distinct values `a < b`, guaranteed to
/// satisfy `a <= t < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * a + 0.5 * b;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

fn sorted_column(x: ArrayView2<f64>, j: usize) -> Vec<f64> {
    let mut v: Vec<f64> = x.column(j).to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn exact_cuts(sorted: &[f64]) -> Vec<f64> {
    sorted
        .windows(2)
        .filter(|w| w[0] < w[1])
        .map(|w| midpoint(w[0], w[1]))
        .collect()
}

/// At most `n_bins - 1` cuts placed at the quantile boundaries of the sorted
/// column, each halfway to the next distinct value.
fn quantile_cuts(sorted: &[f64], n_bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] < w[1]).count();
    if distinct <= n_bins {
        return exact_cuts(sorted);
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(n_bins - 1);
    for q in 1..n_bins {
        let idx = (q * n / n_bins).max(1);
        let lo = sorted[idx - 1];
        let next = sorted[idx..].iter().copied().find(|&v| v > lo);
        if let Some(hi) = next {
            let c = midpoint(lo, hi);
            if cuts.last().is_none_or(|&last| c > last) {
                cuts.push(c);
            }
        }
    }
    cuts
}

fn encode(x: ArrayView2<f64>, cuts: Vec<Vec<f64>>) -> BinnedMatrix {
    let codes = cuts
        .iter()
        .enumerate()
        .map(|(j, c)| x.column(j).iter().map(|&v| c.partition_point(|&t| t < v) as u32).collect())
        .collect();
    BinnedMatrix { codes, cuts }
}

/// Every midpoint between consecutive distinct values is a cut.
pub(crate) fn bin_exact(x: ArrayView2<f64>) -> BinnedMatrix {
    let cuts = (0..x.ncols()).map(|j| exact_cuts(&sorted_column(x, j))).collect();
    encode(x, cuts)
}

pub(crate) fn bin_quantile(x: ArrayView2<f64>, n_bins: usize) -> BinnedMatrix {
    let cuts = (0..x.ncols())
        .map(|j| quantile_cuts(&sorted_column(x, j), n_bins))
        .collect();
    encode(x, cuts)
}
