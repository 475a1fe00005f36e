//! One-way ANOVA F statistic and K-best selection.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::MlError;

/// One-way ANOVA F of `values` grouped by `classes`.
///
/// Returns `f64::INFINITY` when every group is constant but the group means
/// differ, and 0 when the group means coincide.
pub fn anova_f(values: &[f64], classes: &[usize]) -> Result<f64, MlError> {
    if values.len() != classes.len() {
        return Err(MlError::DimensionMismatch { expected: classes.len(), got: values.len() });
    }
    // Per group: first value, count, sum, whether every value equals the first.
    let mut groups: BTreeMap<usize, (f64, usize, f64, bool)> = BTreeMap::new();
    for (&v, &c) in values.iter().zip(classes) {
        let g = groups.entry(c).or_insert((v, 0, 0.0, true));
        g.1 += 1;
        g.2 += v;
        g.3 &= v == g.0;
    }
    let k = groups.len();
    if k < 2 {
        return Err(MlError::SingleClass);
    }
    let n = values.len();
    // A constant group's mean is its value exactly, so it adds nothing to SSW.
    let means: BTreeMap<usize, f64> = groups
        .iter()
        .map(|(&c, &(first, count, sum, constant))| (c, if constant { first } else { sum / count as f64 }))
        .collect();
    let mut ssw = 0.0;
    for (&v, c) in values.iter().zip(classes) {
        let d = v - means[c];
        ssw += d * d;
    }
    let grand = values.iter().sum::<f64>() / n as f64;
    let mut between: Vec<f64> = Vec::with_capacity(k);
    let mut all_equal = true;
    let mut reference: Option<f64> = None;
    for (c, &(_, count, _, _)) in &groups {
        let mean = means[c];
        match reference {
            None => reference = Some(mean),
            Some(r) if r != mean => all_equal = false,
            _ => {}
        }
        between.push(count as f64 * (mean - grand) * (mean - grand));
    }
    // Summed in value order so class numbering cannot change the result.
    between.sort_by(f64::total_cmp);
    let ssb: f64 = between.iter().sum();
    if all_equal || ssb == 0.0 {
        return Ok(0.0);
    }
    if ssw == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((ssb / (k - 1) as f64) / (ssw / (n - k) as f64))
}

/// F value of every column.
pub fn f_scores(columns: &[Vec<f64>], classes: &[usize]) -> Result<Vec<f64>, MlError> {
    columns.iter().map(|col| anova_f(col, classes)).collect()
}

/// Indices of the `k` largest scores (ties to the lower index), ascending.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// K-best feature selection over column-major data.
pub fn select_k_best(columns: &[Vec<f64>], classes: &[usize], k: usize) -> Result<Vec<usize>, MlError> {
    Ok(top_k(&f_scores(columns, classes)?, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hand_evaluated_f() {
        let f = anova_f(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((f - 13.5).abs() < 1e-12);
        assert_eq!(anova_f(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0], &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
        assert_eq!(anova_f(&[1.0, 1.0, 2.0, 2.0], &[0, 0, 1, 1]).unwrap(), f64::INFINITY);
        assert_eq!(anova_f(&[0.1, 0.1, 0.1], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(anova_f(&[1.0, 2.0], &[0, 0]), Err(MlError::SingleClass));
    }

    #[test]
    fn selection_rules() {
        let y = [0, 0, 1, 1];
        let cols = vec![vec![0.0, 0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0, 0.0], vec![5.0; 4]];
        assert_eq!(select_k_best(&cols, &y, 1).unwrap(), [0]);
        assert_eq!(select_k_best(&cols, &y, 10).unwrap(), [0, 1, 2]);
        let twins = vec![vec![0.0, 1.0, 1.0, 3.0], vec![0.0, 1.0, 1.0, 3.0], vec![0.0, 0.0, 0.0, 1.0]];
        assert_eq!(select_k_best(&twins, &y, 1).unwrap(), [0]);
    }
}
