//! Euclidean projection onto the probability simplex.

/// Projects `y` onto `{x ≥ 0, Σx = 1}` in place (sort-and-threshold method).
pub fn project_to_simplex(y: &mut [f64]) {
    if y.is_empty() {
        return;
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in y.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}
