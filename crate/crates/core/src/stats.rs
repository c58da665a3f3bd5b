//! Confusion tallies, class-wise and conditional misclassification rates,
//! the cross-model homogeneity test, and score samples for misclassified
//! images.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassificationRecord;
use crate::error::{Error, IoContext, Result};
use crate::special::chi_squared_sf;

/// `counts[i][j]` is the number of images of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    /// `n_i`
    pub fn class_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// `n_{i→j, j≠i}`
    pub fn misclassified_total(&self, i: usize) -> u64 {
        self.class_total(i) - self.counts[i][i]
    }

    pub fn misclassified_totals(&self) -> Vec<u64> {
        (0..self.num_classes)
            .map(|i| self.misclassified_total(i))
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn write_csv(&self, out: impl Write, names: &[String]) -> Result<()> {
        write_matrix(
            out,
            names,
            self.counts
                .iter()
                .map(|r| r.iter().map(u64::to_string).collect()),
            None,
        )
    }
}

pub fn tally(records: &[ClassificationRecord], num_classes: usize) -> Result<ConfusionCounts> {
    let mut out = ConfusionCounts::zeros(num_classes);
    for r in records {
        if r.scores.len() != num_classes {
            return Err(Error::MixedClasses {
                first: num_classes,
                other: r.scores.len(),
            });
        }
        if r.true_label >= num_classes || r.predicted_label >= num_classes {
            return Err(Error::InvalidClass {
                class: r.true_label.max(r.predicted_label),
                num_classes,
            });
        }
        out.counts[r.true_label][r.predicted_label] += 1;
    }
    Ok(out)
}

/// Per-class rates; `defined[i]` is false when the denominator was zero, in
/// which case `values[i]` is stored as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
}

/// `matrix[i][j] = v_{j|i}`; the diagonal is 0 and undefined rows are all 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRates {
    pub matrix: Vec<Vec<f64>>,
    pub defined: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub u: ClassRates,
    pub v: ConditionalRates,
}

impl RateTable {
    pub fn num_classes(&self) -> usize {
        self.u.values.len()
    }
}

/// `u_i = n_{i→j,j≠i} / n_i`
pub fn misclass_rates(counts: &ConfusionCounts) -> ClassRates {
    let (values, defined) = (0..counts.num_classes)
        .map(|i| {
            let n = counts.class_total(i);
            if n == 0 {
                (0.0, false)
            } else {
                (counts.misclassified_total(i) as f64 / n as f64, true)
            }
        })
        .unzip();
    ClassRates { values, defined }
}

/// `v_{j|i} = n_{j|i} / n_{i→j,j≠i}`
pub fn conditional_rates(counts: &ConfusionCounts) -> ConditionalRates {
    let c = counts.num_classes;
    let mut matrix = vec![vec![0.0; c]; c];
    let mut defined = vec![false; c];
    for i in 0..c {
        let miss = counts.misclassified_total(i);
        if miss == 0 {
            continue;
        }
        defined[i] = true;
        for j in (0..c).filter(|&j| j != i) {
            matrix[i][j] = counts.counts[i][j] as f64 / miss as f64;
        }
    }
    ConditionalRates { matrix, defined }
}

pub fn rate_table(counts: &ConfusionCounts) -> RateTable {
    RateTable {
        u: misclass_rates(counts),
        v: conditional_rates(counts),
    }
}

fn write_matrix(
    out: impl Write,
    names: &[String],
    rows: impl Iterator<Item = Vec<String>>,
    defined: Option<&[bool]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["true_class".to_string()];
    header.extend(names.iter().cloned());
    if defined.is_some() {
        header.push("defined".into());
    }
    w.write_record(&header)?;
    for (i, mut row) in rows.enumerate() {
        row.insert(0, names[i].clone());
        if let Some(d) = defined {
            row.push(u8::from(d[i]).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

impl ClassRates {
    pub fn write_csv(&self, out: impl Write, names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "rate", "defined"])?;
        for (i, (v, d)) in self.values.iter().zip(&self.defined).enumerate() {
            w.write_record([names[i].clone(), v.to_string(), u8::from(*d).to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

impl ConditionalRates {
    /// Rows are the correct class, columns the predicted class.
    pub fn write_csv(&self, out: impl Write, names: &[String]) -> Result<()> {
        write_matrix(
            out,
            names,
            self.matrix
                .iter()
                .map(|r| r.iter().map(f64::to_string).collect()),
            Some(&self.defined),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// Classes left out because no model misclassified them.
    pub dropped_columns: Vec<usize>,
    /// Models left out because they had no misclassifications.
    pub dropped_rows: Vec<usize>,
}

/// Pearson chi-squared test that the per-class misclassification counts of
/// several models come from one distribution. Each row is one model.
pub fn chi_squared_homogeneity(tables: &[Vec<u64>]) -> Result<HomogeneityResult> {
    if tables.len() < 2 {
        return Err(Error::Config(
            "homogeneity needs at least two models".into(),
        ));
    }
    let width = tables[0].len();
    if let Some(bad) = tables.iter().find(|r| r.len() != width) {
        return Err(Error::MixedClasses {
            first: width,
            other: bad.len(),
        });
    }
    let col_total = |j: usize| tables.iter().map(|r| r[j]).sum::<u64>();
    let (cols, dropped_columns): (Vec<usize>, Vec<usize>) =
        (0..width).partition(|&j| col_total(j) > 0);
    let (rows, dropped_rows): (Vec<usize>, Vec<usize>) =
        (0..tables.len()).partition(|&i| tables[i].iter().sum::<u64>() > 0);
    if rows.is_empty() {
        return Err(Error::DegenerateTable(
            "no misclassifications in any model".into(),
        ));
    }
    for j in &dropped_columns {
        log::warn!("class {j} has zero expected count in every model; column dropped");
    }
    for i in &dropped_rows {
        log::warn!("model {i} has no misclassifications; row dropped");
    }
    if rows.len() < 2 || cols.len() < 2 {
        return Err(Error::DegenerateTable(format!(
            "{} usable models and {} usable classes",
            rows.len(),
            cols.len()
        )));
    }

    let row_sum: Vec<f64> = rows
        .iter()
        .map(|&i| tables[i].iter().sum::<u64>() as f64)
        .collect();
    let col_sum: Vec<f64> = cols.iter().map(|&j| col_total(j) as f64).collect();
    let grand: f64 = row_sum.iter().sum();
    let mut statistic = 0.0;
    for (ri, &i) in rows.iter().enumerate() {
        for (cj, &j) in cols.iter().enumerate() {
            let expected = row_sum[ri] * col_sum[cj] / grand;
            let diff = tables[i][j] as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    let df = (rows.len() - 1) * (cols.len() - 1);
    Ok(HomogeneityResult {
        statistic,
        degrees_of_freedom: df,
        p_value: chi_squared_sf(statistic, df),
        dropped_columns,
        dropped_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Morphology,
    Interference,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Morphology, Category::Interference];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Morphology => "morphology",
            Category::Interference => "interference",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub from: usize,
    pub to: usize,
    pub category: Category,
}

/// Assigns ordered misclassification pairs (true → predicted) to a cause
/// category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryMap {
    pairs: BTreeMap<(usize, usize), Category>,
}

impl CategoryMap {
    pub fn from_entries(entries: &[CategoryEntry]) -> Self {
        Self {
            pairs: entries
                .iter()
                .map(|e| ((e.from, e.to), e.category))
                .collect(),
        }
    }

    /// CIFAR-10 defaults: cat↔dog and car↔truck as morphology, frog→cat and
    /// ship→plane as interference.
    pub fn cifar10_default() -> Self {
        let (plane, car, cat, dog, frog, ship, truck) = (0, 1, 3, 5, 6, 8, 9);
        let m = Category::Morphology;
        let i = Category::Interference;
        Self {
            pairs: [
                ((cat, dog), m),
                ((dog, cat), m),
                ((car, truck), m),
                ((truck, car), m),
                ((frog, cat), i),
                ((ship, plane), i),
            ]
            .into_iter()
            .collect(),
        }
    }

    pub fn get(&self, from: usize, to: usize) -> Option<Category> {
        self.pairs.get(&(from, to)).copied()
    }

    pub fn entries(&self) -> Vec<CategoryEntry> {
        self.pairs
            .iter()
            .map(|(&(from, to), &category)| CategoryEntry { from, to, category })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).at(path)?;
        let entries: Vec<CategoryEntry> = serde_json::from_str(&text)?;
        Ok(Self::from_entries(&entries))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `scores[true] / scores[predicted]`
    #[default]
    Ratio,
    /// `scores[true] − scores[predicted]`
    Difference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRatioSample {
    pub category: Category,
    pub kind: ScoreKind,
    pub image_ids: Vec<String>,
    pub values: Vec<f64>,
}

/// Collects one score value per misclassified record whose (true → predicted)
/// pair is mapped to a category. Returns one sample per category, in
/// [`Category::ALL`] order.
pub fn score_ratios(
    records: &[ClassificationRecord],
    map: &CategoryMap,
    kind: ScoreKind,
) -> Result<Vec<ScoreRatioSample>> {
    score_samples(records, kind, |r| map.get(r.true_label, r.predicted_label))
}

/// Like [`score_ratios`] with an arbitrary per-record categorization, e.g.
/// from per-image ground truth.
pub fn score_samples(
    records: &[ClassificationRecord],
    kind: ScoreKind,
    categorize: impl Fn(&ClassificationRecord) -> Option<Category>,
) -> Result<Vec<ScoreRatioSample>> {
    let mut out: Vec<ScoreRatioSample> = Category::ALL
        .iter()
        .map(|&category| ScoreRatioSample {
            category,
            kind,
            image_ids: Vec::new(),
            values: Vec::new(),
        })
        .collect();
    for r in records.iter().filter(|r| !r.is_correct()) {
        let Some(category) = categorize(r) else {
            continue;
        };
        let s = r.scores.as_slice();
        let (truth, pred) = (s[r.true_label], s[r.predicted_label]);
        let value = match kind {
            ScoreKind::Ratio => {
                if pred <= 0.0 {
                    return Err(Error::ZeroScore(r.image_id.clone()));
                }
                truth / pred
            }
            ScoreKind::Difference => truth - pred,
        };
        let sample = &mut out[category as usize];
        sample.image_ids.push(r.image_id.clone());
        sample.values.push(value);
    }
    Ok(out)
}

pub fn write_score_samples_csv(samples: &[ScoreRatioSample], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "kind", "image_id", "value"])?;
    for s in samples {
        let kind = match s.kind {
            ScoreKind::Ratio => "ratio",
            ScoreKind::Difference => "difference",
        };
        for (id, v) in s.image_ids.iter().zip(&s.values) {
            w.write_record([
                s.category.to_string(),
                kind.to_string(),
                id.clone(),
                v.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
