//! Independent reference implementations used by the property and
//! acceptance suites. They favour obviousness over speed and share no code
//! with the library.

#![allow(dead_code)]

/// Key-frame bin rule on an integer scalar clip with `γ = 1`, in exact
/// integer arithmetic.
///
/// Cumulative mass at frame `i` is `S_i / R` with `S_i = Σ_{j<i} |x_{j+1} − x_j|`.
/// Bin `k` (1-based) wants the first frame with `S_i / R ≥ (k − ½)/n`, i.e.
/// `2n·S_i ≥ (2k − 1)·R`; taken frames push it forward, and it may not go
/// past `ħ − n + k − 1` so that the remaining bins still get distinct frames.
/// Without motion, frame `⌊(k − ½)/n · ħ⌋`.
pub fn keyframes_integer(values: &[i64], n: usize) -> Option<Vec<usize>> {
    let frames = values.len();
    if n == 0 || n > frames {
        return None;
    }
    let mut prefix = vec![0i64];
    for w in values.windows(2) {
        let last = *prefix.last().unwrap();
        prefix.push(last + (w[1] - w[0]).abs());
    }
    let total = *prefix.last().unwrap();
    let mut taken = vec![false; frames];
    let mut out = Vec::new();
    for k in 1..=n {
        let mut idx = if total == 0 {
            (2 * k - 1) * frames / (2 * n)
        } else {
            let target_num = (2 * k as i64 - 1) * total;
            (0..frames)
                .find(|&i| 2 * n as i64 * prefix[i] >= target_num)
                .unwrap()
        };
        if total != 0 {
            while idx < frames && taken[idx] {
                idx += 1;
            }
            idx = idx.min(frames - n + k - 1);
        }
        taken[idx] = true;
        out.push(idx);
    }
    Some(out)
}

/// The same rule in floating point for arbitrary scalar clips and `γ`.
pub fn keyframes_real(values: &[f64], n: usize, gamma: f64) -> Option<Vec<usize>> {
    let frames = values.len();
    if n == 0 || n > frames {
        return None;
    }
    let energies: Vec<f64> = values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs().powf(gamma))
        .collect();
    let total: f64 = energies.iter().sum();
    let mut out: Vec<usize> = Vec::new();
    for k in 1..=n {
        let target = (k as f64 - 0.5) / n as f64;
        let idx = if total > 0.0 {
            let mut first = frames - 1;
            let mut running = 0.0;
            for i in 0..frames {
                let c = if i == frames - 1 {
                    1.0
                } else {
                    running / total
                };
                if c >= target {
                    first = i;
                    break;
                }
                if i < energies.len() {
                    running += energies[i];
                }
            }
            let after_prev = out.last().map_or(0, |&p| p + 1);
            first.max(after_prev).min(frames - n + k - 1)
        } else {
            (2 * k - 1) * frames / (2 * n)
        };
        out.push(idx);
    }
    Some(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(points: &[&[f64]]) -> Vec<f64> {
    let dim = points[0].len();
    let mut m = vec![0.0; dim];
    for p in points {
        for d in 0..dim {
            m[d] += p[d];
        }
    }
    m.iter().map(|v| v / points.len() as f64).collect()
}

/// Greedy herding that, at every step, forms the candidate exemplar set
/// explicitly and measures the distance of its mean to the class mean.
pub fn herding_greedy(embeddings: &[Vec<f64>], m: usize) -> Vec<usize> {
    let all: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
    let target = mean_of(&all);
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..embeddings.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut set: Vec<&[f64]> = chosen.iter().map(|&c| all[c]).collect();
            set.push(all[i]);
            let d = sq_dist(&target, &mean_of(&set));
            if best.is_none() || d < best.unwrap().1 {
                best = Some((i, d));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Index of the embedding nearest (Euclidean) to the mean; lowest index on ties.
pub fn nearest_to_mean(embeddings: &[Vec<f64>]) -> usize {
    let all: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
    let target = mean_of(&all);
    let mut best = 0;
    for i in 1..embeddings.len() {
        if sq_dist(&target, &embeddings[i]) < sq_dist(&target, &embeddings[best]) {
            best = i;
        }
    }
    best
}

/// `χ = (ŷ + p)^α / Σ (ŷ + p)^α` written out directly.
pub fn teacher_agent(class: usize, p: &[f64], alpha: f64) -> Vec<f64> {
    let raw: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| (if c == class { 1.0 + pc } else { pc }).powf(alpha))
        .collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|r| r / z).collect()
}
