//! Pareto dominance, non-dominated sorting, crowding distance and truncation.

use std::cmp::Ordering;

/// `a` dominates `b`: no worse in every component, strictly better in one.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len(), "objective arity");
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Fronts of `points` in ascending rank; indices inside a front are ascending.
pub fn nondominated_sort<T: AsRef<[f64]>>(points: &[T]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (points[i].as_ref(), points[j].as_ref());
            if dominates(a, b) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(b, a) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Rank (front number) of every point.
pub fn ranks<T: AsRef<[f64]>>(points: &[T]) -> Vec<usize> {
    let mut rank = vec![0; points.len()];
    for (r, front) in nondominated_sort(points).iter().enumerate() {
        for &i in front {
            rank[i] = r;
        }
    }
    rank
}

/// Crowding distance of each member of `front`, aligned with `front`.
/// Boundary points get infinity.
pub fn crowding_distance<T: AsRef<[f64]>>(points: &[T], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = points[front[0]].as_ref().len();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        let value = |pos: usize| points[front[pos]].as_ref()[k];
        order.sort_by(|&a, &b| value(a).partial_cmp(&value(b)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        let lo = value(order[0]);
        let hi = value(order[n - 1]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if hi - lo <= 0.0 || !(hi - lo).is_finite() {
            continue;
        }
        for w in 1..n - 1 {
            let gap = value(order[w + 1]) - value(order[w - 1]);
            dist[order[w]] += gap / (hi - lo);
        }
    }
    dist
}

/// Rank and crowding distance of every point.
pub fn rank_and_crowding<T: AsRef<[f64]>>(points: &[T]) -> (Vec<usize>, Vec<f64>) {
    let mut rank = vec![0; points.len()];
    let mut crowd = vec![0.0; points.len()];
    for (r, front) in nondominated_sort(points).iter().enumerate() {
        let d = crowding_distance(points, front);
        for (pos, &i) in front.iter().enumerate() {
            rank[i] = r;
            crowd[i] = d[pos];
        }
    }
    (rank, crowd)
}

/// Indices of the `target` survivors: whole fronts in rank order, the cut
/// front filled by descending crowding distance (ties by index).
pub fn truncate_indices<T: AsRef<[f64]>>(points: &[T], target: usize) -> Vec<usize> {
    if points.len() <= target {
        return (0..points.len()).collect();
    }
    let mut keep = Vec::with_capacity(target);
    for front in nondominated_sort(points) {
        if keep.len() + front.len() <= target {
            keep.extend_from_slice(&front);
            if keep.len() == target {
                break;
            }
            continue;
        }
        let d = crowding_distance(points, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        let room = target - keep.len();
        keep.extend(order.into_iter().take(room).map(|pos| front[pos]));
        break;
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]));
        assert!(!dominates(&[1.0, 2.0], &[2.0, 1.0]));
        assert!(!dominates(&[2.0, 1.0], &[1.0, 2.0]));
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]));
        assert!(dominates(&[1.0, 1.0], &[1.0, 2.0]));
    }

    #[test]
    fn incomparable_points_share_a_front() {
        let pts = vec![[1.0, 4.0], [2.0, 3.0], [3.0, 2.0], [4.0, 1.0]];
        assert_eq!(nondominated_sort(&pts), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn chain_gives_singleton_fronts() {
        let pts = vec![[3.0, 3.0], [1.0, 1.0], [4.0, 4.0], [2.0, 2.0]];
        assert_eq!(nondominated_sort(&pts), vec![vec![1], vec![3], vec![0], vec![2]]);
    }

    #[test]
    fn truncate_keeps_small_population() {
        let pts = vec![[1.0, 2.0], [2.0, 1.0]];
        assert_eq!(truncate_indices(&pts, 5), vec![0, 1]);
    }

    #[test]
    fn truncate_cuts_second_front_by_crowding() {
        // Front 0: three points; front 1: four points on the line x + y = 10.
        let pts = vec![
            [1.0, 5.0],
            [2.0, 3.0],
            [4.0, 1.0],
            [2.0, 8.0],
            [3.0, 7.0],
            [7.0, 3.0],
            [8.0, 2.0],
        ];
        let fronts = nondominated_sort(&pts);
        assert_eq!(fronts, vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);
        // Interior members of front 1 have equal finite crowding; the two
        // extremes are infinite, so they survive.
        let keep = truncate_indices(&pts, 5);
        assert_eq!(keep, vec![0, 1, 2, 3, 6]);
    }

    #[test]
    fn truncate_with_duplicates_is_exact_size() {
        let pts = vec![[1.0, 1.0]; 6];
        assert_eq!(truncate_indices(&pts, 4).len(), 4);
    }

    #[test]
    fn crowding_of_three_collinear_points() {
        let pts = vec![[0.0, 2.0], [1.0, 1.0], [2.0, 0.0]];
        let d = crowding_distance(&pts, &[0, 1, 2]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn front_zero_is_never_dominated(pts in prop::collection::vec(prop::array::uniform3(0u8..6), 1..30)) {
            let pts: Vec<[f64; 3]> = pts.iter().map(|p| p.map(f64::from)).collect();
            let fronts = nondominated_sort(&pts);
            let total: usize = fronts.iter().map(Vec::len).sum();
            prop_assert_eq!(total, pts.len());
            for &i in &fronts[0] {
                prop_assert!(pts.iter().all(|q| !dominates(q, &pts[i])));
            }
        }

        #[test]
        fn truncation_size_is_exact(pts in prop::collection::vec(prop::array::uniform2(0u8..5), 1..25), t in 1usize..25) {
            let pts: Vec<[f64; 2]> = pts.iter().map(|p| p.map(f64::from)).collect();
            let keep = truncate_indices(&pts, t);
            prop_assert_eq!(keep.len(), t.min(pts.len()));
            let mut sorted = keep.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), keep.len());
        }
    }
}
