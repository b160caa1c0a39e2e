#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
}

fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i - 1] < x[i] {
            // Flat tops count once, at their middle.
            let mut ahead = i + 1;
            while ahead + 1 < x.len() && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Local maxima filtered by height and prominence, then thinned so no two
/// kept peaks are closer than `min_distance` samples (higher peaks win).
/// Results are in index order.
pub fn find_peaks(x: &[f64], min_height: Option<f64>, min_prominence: Option<f64>, min_distance: usize) -> Vec<Peak> {
    let mut peaks: Vec<Peak> = local_maxima(x)
        .into_iter()
        .filter(|&i| min_height.is_none_or(|h| x[i] > h))
        .map(|i| Peak {
            index: i,
            height: x[i],
            prominence: prominence(x, i),
        })
        .filter(|p| min_prominence.is_none_or(|m| p.prominence >= m))
        .collect();
    if min_distance > 1 && peaks.len() > 1 {
        let mut by_height: Vec<usize> = (0..peaks.len()).collect();
        by_height.sort_by(|&a, &b| peaks[b].height.total_cmp(&peaks[a].height).then(a.cmp(&b)));
        let mut keep = vec![true; peaks.len()];
        for &p in &by_height {
            if !keep[p] {
                continue;
            }
            let idx = peaks[p].index;
            for (q, k) in keep.iter_mut().enumerate() {
                if q != p && peaks[q].index.abs_diff(idx) < min_distance {
                    *k = false;
                }
            }
        }
        let mut k = keep.into_iter();
        peaks.retain(|_| k.next().unwrap_or(false));
    }
    peaks
}
