//! Evaluation metrics: OrganIoU with per-abnormality threshold selection,
//! AUROC, and per-slice score summaries.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds 0.00, 0.05, ..., 1.00.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// How binarized attention is summed into allowed and forbidden totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// Count elements above the threshold.
    #[default]
    Count,
    /// Sum the attention values of elements above the threshold.
    RawSum,
}

/// One scan's squashed attention, allowed regions and label presence.
#[derive(Clone, Copy, Debug)]
pub struct IouScan<'a> {
    pub attention: ArrayView4<'a, f64>,
    pub allowed: ArrayView4<'a, bool>,
    pub present: &'a [bool],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbnormalityIou {
    pub threshold: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganIouResult {
    /// `None` when the abnormality has no positive scan in either split or
    /// no threshold gives a defined ratio on validation.
    pub per_abnormality: Vec<Option<AbnormalityIou>>,
    pub mean: f64,
}

fn check_scan(scan: &IouScan, m: usize) -> Result<()> {
    if scan.attention.shape() != scan.allowed.shape() {
        return Err(Error::DimensionMismatch(format!(
            "attention {:?} vs ground truth {:?}",
            scan.attention.shape(),
            scan.allowed.shape()
        )));
    }
    if scan.attention.shape()[0] != m || scan.present.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "expected {m} abnormalities, got attention rows {} and {} labels",
            scan.attention.shape()[0],
            scan.present.len()
        )));
    }
    Ok(())
}

/// Allowed and forbidden totals of abnormality `m` over the positive scans.
fn totals(scans: &[IouScan], m: usize, t: f64, mode: IouMode) -> (f64, f64) {
    let mut allowed = 0.0;
    let mut forbidden = 0.0;
    for scan in scans.iter().filter(|s| s.present[m]) {
        let a = scan.attention.index_axis(ndarray::Axis(0), m);
        let g = scan.allowed.index_axis(ndarray::Axis(0), m);
        for (&v, &ok) in a.iter().zip(g.iter()) {
            if v > t {
                let w = match mode {
                    IouMode::Count => 1.0,
                    IouMode::RawSum => v,
                };
                if ok {
                    allowed += w;
                } else {
                    forbidden += w;
                }
            }
        }
    }
    (allowed, forbidden)
}

fn ratio((allowed, forbidden): (f64, f64)) -> Option<f64> {
    let total = allowed + forbidden;
    (total > 0.0).then(|| allowed / total)
}

/// OrganIoU of one abnormality at a fixed threshold, pooled over the scans
/// where it is present. `None` when nothing exceeds the threshold.
pub fn iou_at(scans: &[IouScan], m: usize, t: f64, mode: IouMode) -> Option<f64> {
    ratio(totals(scans, m, t, mode))
}

/// Chooses a threshold per abnormality on `val` and reports `test` OrganIoU.
///
/// Binarization keeps elements strictly above the threshold. Allowed and
/// forbidden totals are pooled over the scans where the abnormality is
/// present. Ties between thresholds go to the lowest. A test split with
/// nothing above the chosen threshold scores 0.
pub fn organ_iou<'a>(
    val: &[IouScan<'a>],
    test: &[IouScan<'a>],
    grid: &[f64],
    mode: IouMode,
) -> Result<OrganIouResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let m_count = val
        .first()
        .or(test.first())
        .map(|s| s.present.len())
        .ok_or_else(|| Error::InvalidArgument("no scans to evaluate".into()))?;
    for s in val.iter().chain(test) {
        check_scan(s, m_count)?;
    }
    let mut per = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let has_val = val.iter().any(|s| s.present[m]);
        let has_test = test.iter().any(|s| s.present[m]);
        if !has_val || !has_test {
            per.push(None);
            continue;
        }
        let mut best: Option<(f64, f64)> = None;
        for &t in grid {
            if let Some(r) = iou_at(val, m, t, mode) {
                if best.is_none_or(|(_, br)| r > br) {
                    best = Some((t, r));
                }
            }
        }
        per.push(best.map(|(t, _)| AbnormalityIou {
            threshold: t,
            iou: iou_at(test, m, t, mode).unwrap_or(0.0),
        }));
    }
    let defined: Vec<f64> = per.iter().flatten().map(|r| r.iou).collect();
    if defined.is_empty() {
        return Err(Error::Undefined(
            "mean OrganIoU: no abnormality has positive scans".into(),
        ));
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(OrganIouResult {
        per_abnormality: per,
        mean,
    })
}

/// Mann–Whitney AUROC; tied positive/negative pairs count one half. `None`
/// without at least one positive and one negative.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AurocResult {
    pub per_label: Vec<Option<f64>>,
    /// Median over defined labels.
    pub median: Option<f64>,
}

/// AUROC per column of `scores` and `labels` (rows are scans).
pub fn auroc_table(scores: ArrayView2<f64>, labels: ArrayView2<bool>) -> Result<AurocResult> {
    if scores.dim() != labels.dim() {
        return Err(Error::DimensionMismatch(format!(
            "scores {:?} vs labels {:?}",
            scores.dim(),
            labels.dim()
        )));
    }
    let per_label: Vec<Option<f64>> = (0..scores.ncols())
        .map(|m| {
            let s: Vec<f64> = scores.column(m).to_vec();
            let y: Vec<bool> = labels.column(m).to_vec();
            auroc(&s, &y)
        })
        .collect();
    let median = median(per_label.iter().flatten().copied().collect());
    Ok(AurocResult { per_label, median })
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Present,
    Absent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceScoreRow {
    pub abnormality: usize,
    pub slice: usize,
    pub group: Group,
    pub n: usize,
    pub mean: f64,
    /// 1.96 · sample sd / √n.
    pub ci_half_width: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceScoreSummary {
    pub rows: Vec<SliceScoreRow>,
    /// Abnormalities with fewer than two scans in a group.
    pub skipped: Vec<usize>,
}

/// Mean and 95% interval of per-slice scores `c[m, h]`, split by whether the
/// label is present. `scores[i]` is scan `i`'s `[M, H]` matrix.
pub fn summarize_slice_scores(
    scores: &[Array2<f64>],
    present: &[Vec<bool>],
) -> Result<SliceScoreSummary> {
    if scores.len() != present.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} score matrices vs {} label rows",
            scores.len(),
            present.len()
        )));
    }
    let Some(first) = scores.first() else {
        return Ok(SliceScoreSummary::default());
    };
    let (m_count, h_count) = first.dim();
    for (c, y) in scores.iter().zip(present) {
        if c.dim() != (m_count, h_count) || y.len() != m_count {
            return Err(Error::DimensionMismatch("slice score shapes differ".into()));
        }
    }
    let mut out = SliceScoreSummary::default();
    for m in 0..m_count {
        let pos: Vec<usize> = (0..scores.len()).filter(|&i| present[i][m]).collect();
        let neg: Vec<usize> = (0..scores.len()).filter(|&i| !present[i][m]).collect();
        if pos.len() < 2 || neg.len() < 2 {
            log::warn!(
                "abnormality {m}: {} present / {} absent scans, need 2 each; skipped",
                pos.len(),
                neg.len()
            );
            out.skipped.push(m);
            continue;
        }
        for h in 0..h_count {
            for (group, idx) in [(Group::Present, &pos), (Group::Absent, &neg)] {
                let vals: Vec<f64> = idx.iter().map(|&i| scores[i][[m, h]]).collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                out.rows.push(SliceScoreRow {
                    abnormality: m,
                    slice: h,
                    group,
                    n: vals.len(),
                    mean,
                    ci_half_width: 1.96 * var.sqrt() / n.sqrt(),
                });
            }
        }
    }
    Ok(out)
}

fn name_of(names: &[String], m: usize) -> String {
    names.get(m).cloned().unwrap_or_else(|| m.to_string())
}

pub fn organ_iou_csv(result: &OrganIouResult, names: &[String]) -> String {
    let mut s = String::from("abnormality,threshold,organ_iou\n");
    for (m, r) in result.per_abnormality.iter().enumerate() {
        match r {
            Some(r) => writeln!(s, "{},{},{}", name_of(names, m), r.threshold, r.iou),
            None => writeln!(s, "{},,", name_of(names, m)),
        }
        .expect("writing to a String");
    }
    writeln!(s, "mean,,{}", result.mean).expect("writing to a String");
    s
}

pub fn auroc_csv(result: &AurocResult, names: &[String]) -> String {
    let mut s = String::from("abnormality,auroc\n");
    for (m, a) in result.per_label.iter().enumerate() {
        let v = a.map(|a| a.to_string()).unwrap_or_default();
        writeln!(s, "{},{v}", name_of(names, m)).expect("writing to a String");
    }
    let med = result.median.map(|a| a.to_string()).unwrap_or_default();
    writeln!(s, "median,{med}").expect("writing to a String");
    s
}

pub fn slice_summary_csv(summary: &SliceScoreSummary, names: &[String]) -> String {
    let mut s = String::from("abnormality,slice,group,n,mean,ci_half_width\n");
    for r in &summary.rows {
        let g = match r.group {
            Group::Present => "present",
            Group::Absent => "absent",
        };
        writeln!(
            s,
            "{},{},{g},{},{},{}",
            name_of(names, r.abnormality),
            r.slice,
            r.n,
            r.mean,
            r.ci_half_width
        )
        .expect("writing to a String");
    }
    s
}
