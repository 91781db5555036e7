//! Small numeric helpers shared by the corpus, QA and inference modules.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Replaces NaN entries by linear interpolation between the nearest finite
/// neighbors; leading and trailing gaps take the nearest finite value.
/// Returns `None` when no value is finite.
pub fn fill_missing(xs: &[f64]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].is_finite()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut out = xs.to_vec();
    for v in &mut out[..first] {
        *v = xs[first];
    }
    for v in &mut out[last + 1..] {
        *v = xs[last];
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let t = (i - a) as f64 / (b - a) as f64;
            *v = xs[a] + t * (xs[b] - xs[a]);
        }
    }
    Some(out)
}

/// Least-squares line `y = intercept + slope * t` over `t = 0..n`.
/// Returns `(slope, intercept, residual_std)`.
pub fn ols_line(ys: &[f64]) -> (f64, f64, f64) {
    let n = ys.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = mean(ys);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ys.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = y_mean - slope * t_mean;
    let rss: f64 = ys
        .iter()
        .enumerate()
        .map(|(t, y)| (y - intercept - slope * t as f64).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Sample autocorrelation at `lag` with the usual full-series normalization.
pub fn acf(xs: &[f64], lag: usize) -> f64 {
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if denom == 0.0 || lag >= xs.len() {
        return 0.0;
    }
    let num: f64 = xs
        .iter()
        .zip(&xs[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    num / denom
}

/// Pearson correlation between `xs[..n-lag]` and `xs[lag..]`; NaN when
/// either side is constant.
pub fn lagged_correlation(xs: &[f64], lag: usize) -> f64 {
    if lag >= xs.len() {
        return f64::NAN;
    }
    let a = &xs[..xs.len() - lag];
    let b = &xs[lag..];
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

/// Fraction of variance explained by the best sinusoid (plus offset) at
/// frequency `freq` in cycles per step.
pub fn sinusoid_fit_fraction(ys: &[f64], freq: f64) -> f64 {
    let n = ys.len() as f64;
    let w = std::f64::consts::TAU * freq;
    let (mut mc, mut ms) = (0.0, 0.0);
    for t in 0..ys.len() {
        mc += (w * t as f64).cos();
        ms += (w * t as f64).sin();
    }
    mc /= n;
    ms /= n;
    let my = mean(ys);
    let (mut cc, mut ss, mut cs, mut cy, mut sy, mut yy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, y) in ys.iter().enumerate() {
        let c = (w * t as f64).cos() - mc;
        let s = (w * t as f64).sin() - ms;
        let y = y - my;
        cc += c * c;
        ss += s * s;
        cs += c * s;
        cy += c * y;
        sy += s * y;
        yy += y * y;
    }
    let det = cc * ss - cs * cs;
    if yy == 0.0 || det.abs() < 1e-12 * (cc * ss).max(1e-300) {
        return 0.0;
    }
    let a = (cy * ss - sy * cs) / det;
    let b = (sy * cc - cy * cs) / det;
    ((a * cy + b * sy) / yy).clamp(0.0, 1.0)
}

/// Frequency in `[min_freq, max_freq]` whose sinusoid explains the most
/// variance, found by a coarse scan refined around the best coarse point.
/// Returns `(frequency, explained_fraction)`.
pub fn best_sinusoid(ys: &[f64], min_freq: f64, max_freq: f64) -> (f64, f64) {
    let n = ys.len() as f64;
    let coarse = 1.0 / (4.0 * n);
    let mut best = (min_freq, sinusoid_fit_fraction(ys, min_freq));
    let mut f = min_freq;
    while f <= max_freq {
        let r = sinusoid_fit_fraction(ys, f);
        if r > best.1 {
            best = (f, r);
        }
        f += coarse;
    }
    let fine = coarse / 32.0;
    let center = best.0;
    for k in -32..=32 {
        let f = center + k as f64 * fine;
        if f < min_freq || f > max_freq {
            continue;
        }
        let r = sinusoid_fit_fraction(ys, f);
        if r > best.1 {
            best = (f, r);
        }
    }
    best
}

/// Deterministic 64-bit mixer used to derive per-item seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix64(h);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
