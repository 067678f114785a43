//! Mixing diagnostics for scalar chain output.

/// Sample autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    if n < 2 {
        return vec![1.0];
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return vec![1.0];
    }
    (0..=max_lag.min(n - 1))
        .map(|k| {
            let ck = centered[..n - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64;
            ck / c0
        })
        .collect()
}

/// Integrated autocorrelation time `1 + 2 sum_k rho_k`, with Geyer's initial
/// positive sequence truncation.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let rho = autocorrelation(series, series.len().saturating_sub(1).min(10_000));
    if rho.len() < 2 {
        return 1.0;
    }
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < rho.len() {
        let pair = rho[k] + rho[k + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    tau.max(1.0)
}

/// Potential scale reduction factor across chains of equal length.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m < 2 || len < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c[..len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = len as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..len].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (len - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (len - 1) as f64 / len as f64 * w + b / len as f64;
    (var_plus / w).sqrt()
}

/// Standard error of the mean from `batches` non-overlapping batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let batches = batches.max(2);
    let size = series.len() / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let k = means.len() as f64;
    let grand = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (k - 1.0);
    (var / k).sqrt()
}
