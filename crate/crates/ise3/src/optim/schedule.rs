//! Cosine annealing learning-rate schedule.

/// lr(e) = lr_end + ½ (lr_start − lr_end)(1 + cos(π e / (E−1))):
/// starts at lr_start, ends at lr_end, monotone non-increasing.
pub fn cosine_lr(epoch: usize, epochs: usize, lr_start: f64, lr_end: f64) -> f64 {
    assert!(epoch < epochs, "epoch {epoch} out of {epochs}");
    if epochs == 1 {
        return lr_start;
    }
    let t = epoch as f64 / (epochs - 1) as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}
