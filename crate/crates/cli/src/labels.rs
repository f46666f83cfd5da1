//! Per-slide label CSV files for the metrics command.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context};

/// Reads `slide_id` and the first present column of `label_columns`.
/// Rows with a non-empty `error` column are skipped.
pub fn read_labels(path: &Path, label_columns: &[&str]) -> anyhow::Result<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("slide_id").ok_or_else(|| anyhow!("{} has no slide_id column", path.display()))?;
    let label_col = label_columns.iter().find_map(|c| col(c)).ok_or_else(|| {
        anyhow!(
            "{} has none of the columns {}",
            path.display(),
            label_columns.join(", ")
        )
    })?;
    let error_col = col("error");

    let mut labels = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{} row {}", path.display(), line + 2))?;
        if error_col.is_some_and(|c| !record.get(c).unwrap_or("").trim().is_empty()) {
            continue;
        }
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let label = record.get(label_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            bail!("{} row {} has an empty slide_id", path.display(), line + 2);
        }
        if labels.insert(id.clone(), label).is_some() {
            bail!("{} lists slide {id} twice", path.display());
        }
    }
    Ok(labels)
}

/// Joins predictions with truth on slide id and maps labels to 1 (positive)
/// or 0 (anything else, including "indeterminate"). Every truth slide must
/// have a prediction.
pub fn binary_pairs(
    pred: &BTreeMap<String, String>,
    truth: &BTreeMap<String, String>,
    positive: &str,
) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    let missing: Vec<&str> = truth
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        bail!("no prediction for slides: {}", missing.join(", "));
    }
    if !truth.values().any(|l| l == positive) && !pred.values().any(|l| l == positive) {
        bail!("positive class {positive:?} appears in neither file");
    }
    let bit = |l: &str| usize::from(l == positive);
    Ok(truth.iter().map(|(id, t)| (bit(&pred[id]), bit(t))).unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[(&str, &str)]) -> BTreeMap<String, String> {
        rows.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn pairs_follow_truth_order() {
        let pred = map(&[("a", "pos"), ("b", "neg"), ("c", "indeterminate"), ("extra", "pos")]);
        let truth = map(&[("a", "pos"), ("b", "pos"), ("c", "neg")]);
        let (p, t) = binary_pairs(&pred, &truth, "pos").unwrap();
        assert_eq!(p, [1, 0, 0]);
        assert_eq!(t, [1, 1, 0]);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let err = binary_pairs(&map(&[("a", "pos")]), &map(&[("a", "pos"), ("b", "neg")]), "pos").unwrap_err();
        assert!(err.to_string().contains('b'));
    }

    #[test]
    fn reads_summary_columns_and_skips_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "slide_id,predicted_class,n_patches,error\ns1,positive,3,\ns2,,0,open failed\n",
        )
        .unwrap();
        let labels = read_labels(&path, &["predicted_class", "label"]).unwrap();
        assert_eq!(labels, map(&[("s1", "positive")]));
        assert!(read_labels(&path, &["label"]).is_err());
    }
}
