//! Chain diagnostics: effective sample size and split potential scale
//! reduction.

/// Effective sample size of one series, with a degeneracy marker for
/// zero-variance chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssEstimate {
    pub value: f64,
    pub degenerate: bool,
}

/// ESS = N / (1 + 2 * sum of autocorrelations), with the sum truncated by
/// Geyer's initial monotone pairs rule: consecutive-lag pairs are summed
/// while positive, each capped by the previous pair.
///
/// Clamped to (0, N]. A constant series is reported as N with the
/// degenerate flag set. Panics on fewer than 10 points.
pub fn effective_sample_size(series: &[f64]) -> EssEstimate {
    let n = series.len();
    assert!(n >= 10, "need at least 10 points, got {n}");
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / nf;
    if c0 <= 1e-300 {
        return EssEstimate {
            value: nf,
            degenerate: true,
        };
    }

    let autocorr = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n - lag {
            acc += centered[t] * centered[t + lag];
        }
        acc / nf / c0
    };

    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0usize;
    while lag + 1 < n {
        let pair = if lag == 0 {
            1.0 + autocorr(1)
        } else {
            autocorr(lag) + autocorr(lag + 1)
        };
        if pair <= 0.0 {
            break;
        }
        pair_sum += pair.min(prev_pair);
        prev_pair = pair.min(prev_pair);
        lag += 2;
    }

    let tau = (2.0 * pair_sum - 1.0).max(1e-12);
    EssEstimate {
        value: (nf / tau).min(nf),
        degenerate: false,
    }
}

/// Split potential scale reduction factor across chains.
///
/// Each chain is split in half, then the usual between/within variance
/// ratio is formed over the half-chains. Values near 1 indicate the chains
/// agree. Panics on unequal chain lengths, fewer than 10 points per chain,
/// or no chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    assert!(!chains.is_empty(), "need at least one chain");
    let len = chains[0].len();
    assert!(
        chains.iter().all(|c| c.len() == len),
        "chains must have equal lengths"
    );
    assert!(len >= 10, "need at least 10 points per chain, got {len}");

    let half = len / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        halves.push(&chain[..half]);
        halves.push(&chain[chain.len() - half..]);
    }

    let m = halves.len() as f64;
    let l = half as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / l)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = l / (m - 1.0) * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (l - 1.0))
        .sum::<f64>()
        / m;

    if within <= 1e-300 {
        // All half-chains constant: identical chains count as converged.
        return 1.0;
    }
    let var_plus = (l - 1.0) / l * within + between / l;
    (var_plus / within).sqrt()
}
