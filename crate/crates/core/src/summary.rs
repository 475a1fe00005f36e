//! Category tally of the most important features per label.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureCategory, FeatureSchema};

pub const TOP_FEATURES: usize = 5;

/// Reference tallies reported for the original 143-subject study, for
/// display next to computed tallies.
pub const REFERENCE_TALLIES: [(FeatureCategory, usize); 4] = [
    (FeatureCategory::Domain, 39),
    (FeatureCategory::DeepPacketInspection, 4),
    (FeatureCategory::Statistical, 4),
    (FeatureCategory::ApplicationLayer, 3),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub category: FeatureCategory,
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelTopFeatures {
    pub label: String,
    pub features: Vec<RankedFeature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub category: FeatureCategory,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub labels: Vec<LabelTopFeatures>,
    pub tallies: Vec<CategoryTally>,
    pub total: usize,
}

/// Takes the first [`TOP_FEATURES`] of each label's ranking (feature name,
/// importance; already sorted) and counts them per category.
pub fn importance_summary(rankings: &[(String, Vec<(String, f64)>)], schema: &FeatureSchema) -> ImportanceSummary {
    let labels: Vec<LabelTopFeatures> = rankings
        .iter()
        .map(|(label, ranked)| LabelTopFeatures {
            label: label.clone(),
            features: ranked
                .iter()
                .take(TOP_FEATURES)
                .filter_map(|(name, importance)| {
                    Some(RankedFeature { name: name.clone(), category: schema.category_of(name)?, importance: *importance })
                })
                .collect(),
        })
        .collect();
    tally(labels)
}

fn tally(labels: Vec<LabelTopFeatures>) -> ImportanceSummary {
    let total: usize = labels.iter().map(|l| l.features.len()).sum();
    let tallies = FeatureCategory::ALL
        .iter()
        .map(|&category| {
            let count = labels.iter().flat_map(|l| &l.features).filter(|f| f.category == category).count();
            let percent = if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
            CategoryTally { category, count, percent }
        })
        .collect();
    ImportanceSummary { labels, tallies, total }
}

/// Share in percent of `category` among reference tallies.
pub fn reference_share(category: FeatureCategory) -> f64 {
    let total: usize = REFERENCE_TALLIES.iter().map(|(_, c)| c).sum();
    let count = REFERENCE_TALLIES.iter().find(|(c, _)| *c == category).map_or(0, |(_, n)| *n);
    100.0 * count as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Taxonomy;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn ten_labels_tally_to_fifty() {
        let schema = FeatureSchema::new(&Taxonomy::builtin());
        let ranked: Vec<(String, f64)> = ["category_news", "category_search", "form_count_avg", "bytes_tx_max", "cookie_count_avg", "frac_80"]
            .iter()
            .map(|n| (n.to_string(), 0.1))
            .collect();
        let rankings: Vec<_> = (0..10).map(|i| (alloc::format!("l{i}"), ranked.clone())).collect();
        let s = importance_summary(&rankings, &schema);
        assert_eq!(s.total, 50);
        let counts: Vec<usize> = s.tallies.iter().map(|t| t.count).collect();
        assert_eq!(counts, vec![20, 10, 10, 10]);
        assert_eq!(s.tallies.iter().map(|t| t.percent).sum::<f64>(), 100.0);
    }

    #[test]
    fn reference_domain_share() {
        assert_eq!(reference_share(FeatureCategory::Domain), 78.0);
    }
}
