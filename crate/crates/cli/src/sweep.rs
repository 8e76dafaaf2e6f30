//! Equal-parameter width solving for dense depth sweeps.

use framenet::{Error, Result};

/// Parameters of `depth` dense hidden layers of `width` units between an
/// input of `input` features and a `classes`-way softmax.
pub fn dense_params(input: u64, depth: u64, width: u64, classes: u64) -> u64 {
    input * width + width + (depth - 1) * (width * width + width) + width * classes + classes
}

/// Largest width whose dense stack has at most `target` parameters.
pub fn solve_width(target: u64, depth: usize, input: usize, classes: usize) -> Result<usize> {
    if depth == 0 {
        return Err(Error::Config("depth must be at least 1".into()));
    }
    let (d, l, k) = (input as u64, depth as u64, classes as u64);
    if dense_params(d, l, 1, k) > target {
        return Err(Error::Parameter(format!(
            "target of {target} parameters is below the {} needed for width 1 at depth {depth}",
            dense_params(d, l, 1, k)
        )));
    }
    // (l−1)w² + (d + 1 + (l−1) + k)w + k − target = 0
    let a = (l - 1) as f64;
    let b = (d + l + k) as f64;
    let c = k as f64 - target as f64;
    let root = if l == 1 {
        -c / b
    } else {
        (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
    };
    let mut w = root.floor().max(1.0) as u64;
    // the float root can be off by one either way near integer boundaries
    while w > 1 && dense_params(d, l, w, k) > target {
        w -= 1;
    }
    while dense_params(d, l, w + 1, k) <= target {
        w += 1;
    }
    Ok(w as usize)
}
