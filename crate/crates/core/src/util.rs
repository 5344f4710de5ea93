/// Calls `f` on every `k`-subset of `0..n`, in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // rightmost index that can still move
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// `n choose k` as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `n` values from `lo` to `hi` spaced evenly in log scale.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i + 1 == n {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_count_and_order() {
        let mut seen = Vec::new();
        for_each_combination(5, 3, |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[9], vec![2, 3, 4]);
        let mut sorted = seen.clone();
        sorted.sort();
        assert_eq!(sorted, seen);
    }

    #[test]
    fn combinations_edge_cases() {
        let mut count = 0;
        for_each_combination(4, 0, |c| {
            assert!(c.is_empty());
            count += 1
        });
        assert_eq!(count, 1);
        for_each_combination(2, 3, |_| panic!("no subsets"));
        let mut all = 0;
        for_each_combination(3, 3, |_| all += 1);
        assert_eq!(all, 1);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(10, 2), 45.0);
        assert_eq!(binomial(10, 3), 120.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn logspace_endpoints() {
        let g = logspace(0.001, 0.1, 3);
        assert_eq!(g[0], 0.001);
        assert_eq!(g[2], 0.1);
        assert!((g[1] - 0.01).abs() < 1e-15);
    }
}
