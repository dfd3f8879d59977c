//! Open-path tour ordering: nearest-neighbor construction refined by 2-opt
//! and Or-opt local search.

use crate::geometry::Point2;

/// Length of the open path visiting `points` in order.
pub fn path_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

fn nearest_index(points: &[Point2], from: Point2) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if p.distance(&from) < points[best].distance(&from) {
            best = i;
        }
    }
    best
}

/// Greedy nearest-neighbor open tour beginning at the point nearest `start`.
pub fn nearest_neighbor(points: &[Point2], start: Point2) -> Vec<Point2> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut remaining = points.to_vec();
    let mut tour = vec![remaining.remove(nearest_index(&remaining, start))];
    while !remaining.is_empty() {
        let last = *tour.last().expect("tour is non-empty");
        tour.push(remaining.remove(nearest_index(&remaining, last)));
    }
    tour
}

/// Length change from reversing `tour[i..=j]`, with `tour[0]` fixed and an
/// open end after the last point.
pub fn two_opt_delta(tour: &[Point2], i: usize, j: usize) -> f64 {
    let before = tour[i - 1];
    let removed_in = before.distance(&tour[i]);
    let added_in = before.distance(&tour[j]);
    match tour.get(j + 1) {
        Some(after) => added_in + tour[i].distance(after) - removed_in - tour[j].distance(after),
        None => added_in - removed_in,
    }
}

/// Applies best-improvement 2-opt moves until none shortens the path.
/// Returns whether anything changed.
pub fn two_opt(tour: &mut [Point2]) -> bool {
    let n = tour.len();
    if n < 3 {
        return false;
    }
    let mut changed = false;
    loop {
        let mut best = (-1e-10, 0, 0);
        for i in 1..n - 1 {
            for j in i + 1..n {
                let delta = two_opt_delta(tour, i, j);
                if delta < best.0 {
                    best = (delta, i, j);
                }
            }
        }
        if best.1 == 0 {
            return changed;
        }
        tour[best.1..=best.2].reverse();
        changed = true;
    }
}

/// Moves segments of up to three points (either orientation) to a better
/// slot, first improvement. `tour[0]` stays fixed. Returns whether anything
/// changed.
pub fn or_opt(tour: &mut Vec<Point2>) -> bool {
    let n = tour.len();
    if n < 3 {
        return false;
    }
    let mut changed = false;
    'search: loop {
        let base = path_length(tour);
        for len in 1..=3.min(n - 1) {
            for i in 1..=n - len {
                let mut rest = tour.clone();
                let seg: Vec<Point2> = rest.drain(i..i + len).collect();
                for k in 1..=rest.len() {
                    if k == i {
                        continue;
                    }
                    for reversed in [false, true] {
                        let mut cand = rest.clone();
                        let mut s = seg.clone();
                        if reversed {
                            s.reverse();
                        }
                        cand.splice(k..k, s);
                        if path_length(&cand) < base - 1e-10 {
                            *tour = cand;
                            changed = true;
                            continue 'search;
                        }
                    }
                }
            }
        }
        return changed;
    }
}

/// Open tour over `points` starting at the one nearest `start`: nearest
/// neighbor, then alternating 2-opt and Or-opt until both are stuck. The
/// result is 2-opt optimal.
pub fn order_tour(points: &[Point2], start: Point2) -> Vec<Point2> {
    let mut tour = nearest_neighbor(points, start);
    two_opt(&mut tour);
    while or_opt(&mut tour) {
        if !two_opt(&mut tour) {
            break;
        }
    }
    tour
}
