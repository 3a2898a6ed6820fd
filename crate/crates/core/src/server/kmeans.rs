//! Seeded k-means with k-means++ initialization. Returns `None` when a
//! cluster empties out (the caller treats that restart as invalid).

use rand::Rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen: Vec<usize> = vec![rng.gen_range(0..n)];
    while chosen.len() < k {
        let centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // Degenerate geometry: every point coincides with a chosen
            // centroid. Take the lowest unchosen index.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// One k-means run; assignments stabilize or 100 iterations elapse.
pub(crate) fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
    debug_assert!(k >= 1 && k <= points.len());
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let mut counts = vec![0usize; k];
        for &c in &next {
            counts[c] += 1;
        }
        if counts.contains(&0) {
            return None;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &c) in points.iter().zip(&next) {
            for (s, &v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            for v in sums[c].iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        centroids = sums;
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Some(assignment)
}
