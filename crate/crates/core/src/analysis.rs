//! Exponential decay-rate estimation for energy traces.

/// Fraction of the initial energy gap that must already be gone before the
/// fit window opens.
pub const WINDOW_START_DECAYED: f64 = 0.10;
/// Fraction of the initial gap still remaining when the window closes.
pub const WINDOW_END_REMAINING: f64 = 0.01;
/// Fits on fewer samples are reported as skipped.
pub const MIN_WINDOW_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// `r` in `E(τ) - E_final ≈ C e^{-rτ}`.
    pub rate: f64,
    /// Coefficient of determination of the linear fit of `log(E - E_final)`.
    pub r_squared: f64,
    pub samples: usize,
    pub tau_start: f64,
    pub tau_end: f64,
}

/// Least-squares fit of `log(E(τ) - E_final)` against `τ` over the
/// mid-decay window, where the remaining gap
/// `(E - E_final) / (E_0 - E_final)` lies in `[0.01, 0.90]`.
///
/// `E_final` is the last trace entry. Returns `None` when the window holds
/// fewer than [`MIN_WINDOW_SAMPLES`] samples or the trace never decays.
pub fn fit_decay_rate(trace: &[(f64, f64)]) -> Option<DecayFit> {
    let (&(_, e0), &(_, e_final)) = (trace.first()?, trace.last()?);
    let gap0 = e0 - e_final;
    if !(gap0 > 0.0) {
        return None;
    }
    let hi = 1.0 - WINDOW_START_DECAYED;
    let lo = WINDOW_END_REMAINING;
    let start = trace.iter().position(|(_, e)| (e - e_final) / gap0 <= hi)?;
    let window: Vec<(f64, f64)> = trace[start..]
        .iter()
        .take_while(|(_, e)| (e - e_final) / gap0 >= lo)
        .map(|&(t, e)| (t, (e - e_final).ln()))
        .collect();
    if window.len() < MIN_WINDOW_SAMPLES {
        return None;
    }
    let n = window.len() as f64;
    let mean_t = window.iter().map(|w| w.0).sum::<f64>() / n;
    let mean_y = window.iter().map(|w| w.1).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in &window {
        stt += (t - mean_t) * (t - mean_t);
        sty += (t - mean_t) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Some(DecayFit {
        rate: -slope,
        r_squared,
        samples: window.len(),
        tau_start: window[0].0,
        tau_end: window[window.len() - 1].0,
    })
}
