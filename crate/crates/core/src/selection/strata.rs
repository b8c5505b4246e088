use crate::error::{PumaError, Result};

/// Equal-frequency bins `0..b` in ascending value order. Tied values share the
/// lowest bin any of them would reach.
pub fn stratify(values: &[f64], b: usize) -> Vec<usize> {
    let n = values.len();
    let b = b.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]).then(x.cmp(&y)));
    let mut bins = vec![0; n];
    let mut group_bin = 0;
    for (rank, &i) in order.iter().enumerate() {
        let fresh = rank == 0 || values[order[rank - 1]].total_cmp(&values[i]).is_ne();
        if fresh {
            group_bin = rank * b / n;
        }
        bins[i] = group_bin;
    }
    bins
}

/// `w_j ∝ exp(-(j - (b-1)/2)^2 / (2 sigma^2))`, normalized to sum to one.
pub fn normal_bin_weights(b: usize, sigma: f64) -> Result<Vec<f64>> {
    if b == 0 || !(sigma > 0.0) {
        return Err(PumaError::Config(format!(
            "normal bin weights need b >= 1 and sigma > 0 (got {b}, {sigma})"
        )));
    }
    let mid = (b as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..b)
        .map(|j| {
            let t = j as f64 - mid;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Splits `total` integer units in proportion to `weights` (largest remainder,
/// ties to the lower index). With `caps`, no slot exceeds its cap and the
/// overflow is re-spread over slots with room, again by weight.
pub fn largest_remainder(weights: &[f64], total: usize, caps: Option<&[usize]>) -> Result<Vec<usize>> {
    let n = weights.len();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(PumaError::Config("allocation weights must be finite and non-negative".into()));
    }
    let caps: Vec<usize> = match caps {
        Some(c) if c.len() != n => return Err(PumaError::dims("allocation caps", c.len(), n)),
        Some(c) => c.to_vec(),
        None => vec![usize::MAX; n],
    };
    let room: usize = caps.iter().fold(0usize, |a, &c| a.saturating_add(c));
    if total > room {
        return Err(PumaError::OutOfRange {
            what: "allocation total",
            value: total as f64,
            limit: room as f64,
        });
    }
    let mut q = vec![0usize; n];
    let mut remaining = total;
    while remaining > 0 {
        let open: Vec<usize> = (0..n).filter(|&i| q[i] < caps[i]).collect();
        let mut active: Vec<usize> = open.iter().copied().filter(|&i| weights[i] > 0.0).collect();
        let uniform = active.is_empty();
        if uniform {
            active = open;
        }
        let w = |i: usize| if uniform { 1.0 } else { weights[i] };
        let sum: f64 = active.iter().map(|&i| w(i)).sum();
        let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(active.len());
        let mut given = 0;
        for &i in &active {
            let share = remaining as f64 * w(i) / sum;
            let fl = (share.floor() as usize).min(caps[i] - q[i]);
            q[i] += fl;
            given += fl;
            if q[i] < caps[i] {
                fracs.push((share - fl as f64, i));
            }
        }
        remaining -= given;
        fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in fracs.iter().take(remaining) {
            q[i] += 1;
            remaining -= 1;
        }
    }
    Ok(q)
}
