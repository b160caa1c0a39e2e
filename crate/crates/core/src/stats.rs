//! Rank statistics: Mann-Whitney U, Spearman's rho and the level-ranking
//! notation (`"2>1,3"`, `"Inconclusive"`) built on pairwise U tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::{Error, Result};

/// Two-sided significance level.
pub const ALPHA: f64 = 0.05;

/// Largest combined sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample: pairs with `a > b`, ties counting half.
    pub u: f64,
    pub u_other: f64,
    pub p: f64,
    pub significant: bool,
    pub method: PMethod,
}

/// Midranks (1-based) of `values`; tied values share their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Number of ways each U value in `0..=n1*n2` arises among all
/// `C(n1 + n2, n1)` rank assignments (no ties).
fn u_distribution(n1: usize, n2: usize) -> Vec<f64> {
    // table[i][j][u]: arrangements of i first-sample and j second-sample
    // values with statistic u, recursing on who holds the largest rank.
    let max_u = n1 * n2;
    let mut table = vec![vec![vec![0.0f64; max_u + 1]; n2 + 1]; n1 + 1];
    table[0][0][0] = 1.0;
    for i in 0..=n1 {
        for j in 0..=n2 {
            if i == 0 && j == 0 {
                continue;
            }
            for u in 0..=i * j {
                // Largest pooled rank belongs to the first sample: it beats all j others.
                let from_first = if i > 0 && u >= j { table[i - 1][j][u - j] } else { 0.0 };
                let from_second = if j > 0 { table[i][j - 1][u] } else { 0.0 };
                table[i][j][u] = from_first + from_second;
            }
        }
    }
    table[n1][n2].clone()
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("mann-whitney sample"));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let nprod = (n1 * n2) as f64;
    let u_other = nprod - u;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let has_ties = tie_term > 0.0;

    let (p, method) = if n1 + n2 <= EXACT_MAX_N && !has_ties {
        let dist = u_distribution(n1, n2);
        let total: f64 = dist.iter().sum();
        let k = u.round() as usize;
        let lower: f64 = dist[..=k].iter().sum::<f64>() / total;
        let upper: f64 = dist[k..].iter().sum::<f64>() / total;
        ((2.0 * lower.min(upper)).min(1.0), PMethod::Exact)
    } else {
        let n = (n1 + n2) as f64;
        let mean = nprod / 2.0;
        let var = nprod / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::standard();
            (2.0 * normal.sf(z)).min(1.0)
        };
        (p, PMethod::Normal)
    };
    Ok(MannWhitney {
        u,
        u_other,
        p,
        significant: p < ALPHA,
        method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho with a two-sided t-approximation p-value.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::SampleLengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let mut rho = pearson(&midranks(x), &midranks(y)).ok_or(Error::UndefinedCorrelation)?;
    // Rounding in the Pearson ratio can leave perfect rank agreement just shy of 1.
    if (1.0 - rho.abs()) < 1e-12 {
        rho = rho.signum();
    }
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(CorrelationResult { rho, p_value, n })
}

pub const INCONCLUSIVE: &str = "Inconclusive";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    /// Group labels in input order.
    pub groups: Vec<String>,
    pub notation: String,
    /// `pairwise[i][j]`: test of group `i` against group `j` (`None` on the diagonal).
    pub pairwise: Vec<Vec<Option<MannWhitney>>>,
}

impl RankResult {
    pub fn is_inconclusive(&self) -> bool {
        self.notation == INCONCLUSIVE
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Orders groups by descending median and groups them into clusters.
///
/// Adjacent groups (in median order) whose pairwise test is not
/// significant share a cluster, listed in input order. The notation is
/// emitted only when every within-cluster pair is non-significant and
/// every cross-cluster pair is significant with the higher-ranked group
/// stochastically larger; otherwise the result is [`INCONCLUSIVE`].
pub fn rank_levels(groups: &[(String, Vec<f64>)]) -> Result<RankResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("ranking needs at least two groups".into()));
    }
    let k = groups.len();
    let mut pairwise = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                pairwise[i][j] = Some(mann_whitney_u(&groups[i].1, &groups[j].1)?);
            }
        }
    }
    let test = |i: usize, j: usize| pairwise[i][j].expect("off-diagonal");

    let medians: Vec<f64> = groups.iter().map(|(_, s)| median(s)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    // Median ties are broken by the U statistic, then input order.
    order.sort_by(|&i, &j| {
        medians[j]
            .total_cmp(&medians[i])
            .then_with(|| {
                let ui = test(i, j).u / (groups[i].1.len() * groups[j].1.len()) as f64;
                0.5f64.total_cmp(&ui)
            })
            .then(i.cmp(&j))
    });

    let mut clusters: Vec<Vec<usize>> = vec![vec![order[0]]];
    for w in order.windows(2) {
        if test(w[0], w[1]).significant {
            clusters.push(vec![w[1]]);
        } else {
            clusters.last_mut().expect("non-empty").push(w[1]);
        }
    }

    let mut consistent = true;
    for (ci, cluster) in clusters.iter().enumerate() {
        for (x, &i) in cluster.iter().enumerate() {
            if cluster[x + 1..].iter().any(|&j| test(i, j).significant) {
                consistent = false;
            }
            for lower in &clusters[ci + 1..] {
                for &j in lower {
                    let t = test(i, j);
                    let half = (groups[i].1.len() * groups[j].1.len()) as f64 / 2.0;
                    if !t.significant || t.u <= half {
                        consistent = false;
                    }
                }
            }
        }
    }

    let notation = if consistent {
        clusters
            .iter()
            .map(|c| {
                // Members of a cluster are indistinguishable; list them in input order.
                let mut members = c.clone();
                members.sort_unstable();
                members.iter().map(|&i| groups[i].0.as_str()).collect::<Vec<_>>().join(",")
            })
            .collect::<Vec<_>>()
            .join(">")
    } else {
        INCONCLUSIVE.to_string()
    };
    Ok(RankResult {
        groups: groups.iter().map(|(l, _)| l.clone()).collect(),
        notation,
        pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn group(label: &str, values: Vec<f64>) -> (String, Vec<f64>) {
        (label.to_string(), values)
    }

    /// Exact two-sided p by listing every split of the pooled ranks.
    fn enumeration_p(n1: usize, n2: usize, u_obs: f64) -> f64 {
        let n = n1 + n2;
        let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != n1 {
                continue;
            }
            let rank_sum: usize = (0..n).filter(|r| mask >> r & 1 == 1).map(|r| r + 1).sum();
            let u = rank_sum as f64 - (n1 * (n1 + 1)) as f64 / 2.0;
            total += 1;
            if u <= u_obs {
                le += 1;
            }
            if u >= u_obs {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
    }

    #[test]
    fn complete_separation_small() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.u_other, 9.0);
        assert_eq!(r.method, PMethod::Exact);
        assert!((r.p - enumeration_p(3, 3, 0.0)).abs() < 1e-15);
        assert!((r.p - 0.1).abs() < 1e-12);
        assert!(!r.significant);
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert!(r.p >= 0.99);
        assert!(!r.significant);
        let b: Vec<f64> = (1..=6).map(f64::from).collect();
        let r = mann_whitney_u(&b, &b).unwrap();
        assert!(r.p >= 0.99);
    }

    #[test]
    fn eight_vs_eight_separated() {
        let a: Vec<f64> = (1..=8).map(f64::from).collect();
        let b: Vec<f64> = (9..=16).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(r.significant);
        // Exact: 2 / C(16, 8).
        assert!(2.0 / 12870.0 < 0.05);
        assert_eq!(r.method, PMethod::Normal);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
        assert!(mann_whitney_u(&[1.0], &[]).is_err());
    }

    #[test]
    fn all_tied_is_not_significant() {
        let r = mann_whitney_u(&[2.0; 20], &[2.0; 20]).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        let r = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(r.rho, 1.0);
        assert_eq!(r.p_value, 0.0);
        let r = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[8.0, 6.0, 4.0, 2.0]).unwrap();
        assert_eq!(r.rho, -1.0);
        let r = spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        // d = (0, 1, 1): 1 - 6*2 / (3*8) = 0.5.
        assert!((r.rho - 0.5).abs() < 1e-12);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
        assert!(matches!(spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation)));
        assert!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_p_value_reference() {
        // n = 10, rho = 0.6: t = 0.6 * sqrt(8 / 0.64) = 2.1213; two-sided p ≈ 0.0667.
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y = [2.0, 0.0, 1.0, 5.0, 3.0, 9.0, 4.0, 6.0, 8.0, 7.0];
        let r = spearman_rho(&x, &y).unwrap();
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let rho = 1.0 - 6.0 * d2 / (10.0 * 99.0);
        assert!((r.rho - rho).abs() < 1e-12);
        let t = rho * (8.0 / (1.0 - rho * rho)).sqrt();
        let p = 2.0 * StudentsT::new(0.0, 1.0, 8.0).unwrap().sf(t);
        assert!((r.p_value - p).abs() < 1e-12);
    }

    fn jittered(center: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| center + 0.01 * ((i as f64 * 0.37).sin())).collect()
    }

    #[test]
    fn ranking_separated_constants() {
        let groups = vec![group("1", jittered(3.0, 10)), group("2", jittered(2.0, 10)), group("3", jittered(1.0, 10))];
        let r = rank_levels(&groups).unwrap();
        assert_eq!(r.notation, "1>2>3");
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            // Complete separation of 10 vs 10: exact two-sided p = 2 / C(20, 10).
            assert!(2.0 / 184756.0 < ALPHA);
            assert!(r.pairwise[i][j].unwrap().significant);
        }
    }

    #[test]
    fn ranking_identical_groups_cluster() {
        let g = jittered(1.0, 8);
        let r = rank_levels(&[group("A", g.clone()), group("B", g)]).unwrap();
        assert_eq!(r.notation, "A,B");
        assert!(!r.is_inconclusive());
    }

    #[test]
    fn ranking_middle_level_stands_out() {
        let r = rank_levels(&[group("1", jittered(1.0, 12)), group("2", jittered(5.0, 12)), group("3", jittered(1.0, 12))]).unwrap();
        assert_eq!(r.notation, "2>1,3");
    }

    #[test]
    fn ranking_chain_of_overlaps_is_inconclusive() {
        // A overlaps B, B overlaps C, A and C separated.
        let a: Vec<f64> = (0..10).map(|i| 5.2 + i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| 2.6 + i as f64).collect();
        let c: Vec<f64> = (0..10).map(f64::from).collect();
        let groups = vec![group("A", a), group("B", b), group("C", c)];
        let r = rank_levels(&groups).unwrap();
        let ab = r.pairwise[0][1].unwrap();
        let bc = r.pairwise[1][2].unwrap();
        let ac = r.pairwise[0][2].unwrap();
        assert!(!ab.significant && !bc.significant && ac.significant, "{ab:?} {bc:?} {ac:?}");
        assert_eq!(r.notation, INCONCLUSIVE);
    }

    #[test]
    fn ranking_needs_two_groups() {
        assert!(rank_levels(&[group("A", vec![1.0])]).is_err());
        assert!(rank_levels(&[group("A", vec![1.0]), group("B", vec![])]).is_err());
    }

    proptest! {
        #[test]
        fn u_symmetry(
            a in proptest::collection::vec(0i32..20, 1..15),
            b in proptest::collection::vec(0i32..20, 1..15),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = mann_whitney_u(&a, &b).unwrap();
            let ba = mann_whitney_u(&b, &a).unwrap();
            prop_assert_eq!(ab.u + ab.u_other, (a.len() * b.len()) as f64);
            prop_assert_eq!(ab.u, ba.u_other);
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn spearman_monotone_invariant(
            pairs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..40),
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let Ok(base) = spearman_rho(&x, &y) else { return Ok(()); };
            let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let moved = spearman_rho(&ex, &y).unwrap();
            prop_assert!((base.rho - moved.rho).abs() < 1e-12);
            prop_assert!(base.rho.abs() <= 1.0);
        }

        #[test]
        fn ranking_relabel_invariant(perm in 0usize..6, shift in 0.0f64..3.0) {
            let centers = [3.0 + shift, 1.0, 2.0];
            let labels = ["x", "y", "z"];
            let base: Vec<_> = (0..3).map(|i| group(labels[i], jittered(centers[i], 10))).collect();
            let r = rank_levels(&base).unwrap();
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm];
            let renamed: Vec<_> = (0..3).map(|i| group(labels[p[i]], base[i].1.clone())).collect();
            let r2 = rank_levels(&renamed).unwrap();
            let expect: String = r.notation.chars().map(|c| match c {
                'x' => labels[p[0]].chars().next().unwrap(),
                'y' => labels[p[1]].chars().next().unwrap(),
                'z' => labels[p[2]].chars().next().unwrap(),
                other => other,
            }).collect();
            prop_assert_eq!(r2.notation, expect);
        }
    }
}
