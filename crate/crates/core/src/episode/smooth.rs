/// Moving-average window for 100 Hz recordings.
pub const DEFAULT_WINDOW: usize = 25;

/// Centered moving average with a truncated window at the edges, applied
/// twice. Output length equals input length.
pub fn smooth(signal: &[f64]) -> Vec<f64> {
    smooth_with_window(signal, DEFAULT_WINDOW)
}

pub fn smooth_with_window(signal: &[f64], window: usize) -> Vec<f64> {
    let once = moving_average(signal, window);
    moving_average(&once, window)
}

fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Smooth each column of a `steps × dims` trajectory.
pub fn smooth_trajectory(traj: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let Some(first) = traj.first() else { return Vec::new() };
    let mut out = traj.to_vec();
    for d in 0..first.len() {
        let col: Vec<f64> = traj.iter().map(|r| r[d]).collect();
        for (row, v) in out.iter_mut().zip(smooth_with_window(&col, window)) {
            row[d] = v;
        }
    }
    out
}

/// Window covering the same time span as [`DEFAULT_WINDOW`] samples at
/// 100 Hz, rounded to an odd count of at least 1.
pub fn window_for_rate(hz: f64) -> usize {
    let w = (DEFAULT_WINDOW as f64 * hz / 100.0).round().max(1.0) as usize;
    if w.is_multiple_of(2) {
        w + 1
    } else {
        w
    }
}
