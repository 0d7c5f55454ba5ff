//! Pointing game, Recall@k and overall IoU, plus stratified reports.
//!
//! Pixels are ranked by activation, highest first; equal activations are
//! ordered by row-major index, smallest first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Action;
use crate::error::{Error, Result};
use crate::image::{Mask, ProbMap};

/// Default k values: 20 pixels is about 0.5% of a 64×64 image.
pub const DEFAULT_KS: [usize; 5] = [1, 2, 5, 10, 20];

fn check_pair(prob: &ProbMap, gt: &Mask) -> Result<()> {
    if (prob.width, prob.height) != (gt.width, gt.height) {
        return Err(Error::dim("metric", &[prob.height, prob.width], &[gt.height, gt.width]));
    }
    if !gt.data.contains(&true) {
        return Err(Error::Contract("ground-truth mask is empty".into()));
    }
    Ok(())
}

/// Number of pixels ranked ahead of the best-ranked ground-truth pixel. The
/// top-k set contains a ground-truth pixel exactly when this is below k.
pub fn first_hit_rank(prob: &ProbMap, gt: &Mask) -> Result<usize> {
    check_pair(prob, gt)?;
    let p = &prob.data;
    let mut best = usize::MAX;
    for (i, &inside) in gt.data.iter().enumerate() {
        if inside && (best == usize::MAX || p[i].total_cmp(&p[best]).is_gt()) {
            best = i;
        }
    }
    let pb = p[best];
    Ok(p.iter()
        .enumerate()
        .filter(|&(j, v)| v.total_cmp(&pb).is_gt() || (v.total_cmp(&pb).is_eq() && j < best))
        .count())
}

/// Hit when the highest-activation pixel lies inside the ground truth.
pub fn pointing_game(prob: &ProbMap, gt: &Mask) -> Result<bool> {
    Ok(first_hit_rank(prob, gt)? == 0)
}

/// Hit when any of the `k` highest-activation pixels lies inside the ground
/// truth.
pub fn recall_at_k(prob: &ProbMap, gt: &Mask, k: usize) -> Result<bool> {
    if k == 0 || k > prob.data.len() {
        return Err(Error::Contract(format!("k = {k} outside 1..={}", prob.data.len())));
    }
    Ok(first_hit_rank(prob, gt)? < k)
}

/// Pixel counts of (intersection, union) after thresholding.
pub fn intersection_union(prob: &ProbMap, gt: &Mask, threshold: f32) -> Result<(u64, u64)> {
    if (prob.width, prob.height) != (gt.width, gt.height) {
        return Err(Error::dim("iou", &[prob.height, prob.width], &[gt.height, gt.width]));
    }
    let (mut inter, mut union) = (0, 0);
    for (&p, &g) in prob.data.iter().zip(&gt.data) {
        let pred = p >= threshold;
        inter += (pred && g) as u64;
        union += (pred || g) as u64;
    }
    Ok((inter, union))
}

/// Total intersection over total union across the collection.
pub fn overall_iou(probs: &[ProbMap], gts: &[Mask], threshold: f32) -> Result<f64> {
    if probs.is_empty() || probs.len() != gts.len() {
        return Err(Error::Contract(format!(
            "overall_iou needs equal nonempty collections, got {} and {}",
            probs.len(),
            gts.len()
        )));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (p, g) in probs.iter().zip(gts) {
        let (i, u) = intersection_union(p, g, threshold)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Pointing game of a predictor that always picks pixel (⌊H/2⌋, ⌊W/2⌋).
pub fn center_baseline(gts: &[Mask]) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::Contract("center baseline needs at least one mask".into()));
    }
    let hits = gts.iter().filter(|m| m.get(m.height / 2, m.width / 2)).count();
    Ok(hits as f64 / gts.len() as f64)
}

/// Fraction of masks whose centroid column falls in the left, middle and
/// right third of the image. Empty masks are not counted.
pub fn centroid_thirds(gts: &[Mask]) -> Result<[f64; 3]> {
    if gts.is_empty() {
        return Err(Error::Contract("centroid audit needs at least one mask".into()));
    }
    let mut counts = [0usize; 3];
    for m in gts {
        if let Some((_, col)) = m.centroid() {
            let third = ((col + 0.5) * 3.0 / m.width as f64) as usize;
            counts[third.min(2)] += 1;
        }
    }
    Ok(counts.map(|c| c as f64 / gts.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub pgm: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub overall_iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<BTreeMap<String, EvalReport>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Scores a collection. `ks` is extended with 1 if missing; the report is
/// checked to have Recall@1 equal to the pointing game.
pub fn evaluate(probs: &[ProbMap], gts: &[Mask], ks: &[usize], threshold: f32) -> Result<EvalReport> {
    let iou = overall_iou(probs, gts, threshold)?;
    let mut ks: Vec<usize> = ks.to_vec();
    ks.push(1);
    ks.sort_unstable();
    ks.dedup();
    let n = probs.len();
    let mut pgm_hits = 0usize;
    let mut hits = vec![0usize; ks.len()];
    for (p, g) in probs.iter().zip(gts) {
        for &k in &ks {
            if k == 0 || k > p.data.len() {
                return Err(Error::Contract(format!("k = {k} outside 1..={}", p.data.len())));
            }
        }
        pgm_hits += pointing_game(p, g)? as usize;
        let rank = first_hit_rank(p, g)?;
        for (h, &k) in hits.iter_mut().zip(&ks) {
            *h += (rank < k) as usize;
        }
    }
    let frac = |h: usize| h as f64 / n as f64;
    let report = EvalReport {
        n,
        pgm: frac(pgm_hits),
        recall_at: ks.iter().zip(&hits).map(|(&k, &h)| (k, frac(h))).collect(),
        overall_iou: iou,
        strata: None,
    };
    if report.recall_at[&1] != report.pgm {
        return Err(Error::Contract(format!(
            "Recall@1 {} differs from pointing game {}",
            report.recall_at[&1], report.pgm
        )));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stratum {
    /// Command word count: under 10, 10 to 19, 20 or more.
    Length,
    Action,
}

impl std::str::FromStr for Stratum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "length" => Ok(Stratum::Length),
            "action" => Ok(Stratum::Action),
            _ => Err(Error::Config(format!("unknown stratum `{s}` (length, action)"))),
        }
    }
}

pub fn length_bucket(words: usize) -> &'static str {
    match words {
        0..=9 => "lt10",
        10..=19 => "10to19",
        _ => "ge20",
    }
}

/// What stratification needs to know about a sample.
#[derive(Clone, Copy, Debug)]
pub struct SampleInfo {
    pub word_count: usize,
    pub action: Action,
}

/// Overall report with one sub-report per non-empty group.
pub fn stratified_report(
    info: &[SampleInfo],
    probs: &[ProbMap],
    gts: &[Mask],
    stratum: Stratum,
    ks: &[usize],
    threshold: f32,
) -> Result<EvalReport> {
    if info.len() != probs.len() {
        return Err(Error::Contract(format!(
            "{} sample descriptions for {} predictions",
            info.len(),
            probs.len()
        )));
    }
    let mut report = evaluate(probs, gts, ks, threshold)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in info.iter().enumerate() {
        let label = match stratum {
            Stratum::Length => length_bucket(s.word_count),
            Stratum::Action => s.action.label(),
        };
        groups.entry(label.to_string()).or_default().push(i);
    }
    let mut strata = BTreeMap::new();
    for (label, idx) in groups {
        let p: Vec<ProbMap> = idx.iter().map(|&i| probs[i].clone()).collect();
        let g: Vec<Mask> = idx.iter().map(|&i| gts[i].clone()).collect();
        strata.insert(label, evaluate(&p, &g, ks, threshold)?);
    }
    report.strata = Some(strata);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(w: usize, h: usize, d: &[f32]) -> ProbMap {
        ProbMap::new(w, h, d.to_vec()).unwrap()
    }

    fn mask(w: usize, h: usize, on: &[usize]) -> Mask {
        let mut m = Mask::new(w, h);
        for &i in on {
            m.data[i] = true;
        }
        m
    }

    #[test]
    fn pointing_game_cases() {
        let p = pm(2, 2, &[0.1, 0.9, 0.3, 0.2]);
        assert!(pointing_game(&p, &mask(2, 2, &[0, 1, 2, 3])).unwrap());
        assert!(pointing_game(&p, &mask(2, 2, &[1])).unwrap());
        assert!(!pointing_game(&p, &mask(2, 2, &[2])).unwrap());
        let uniform = pm(2, 2, &[0.5; 4]);
        assert!(pointing_game(&uniform, &mask(2, 2, &[0])).unwrap());
        assert!(!pointing_game(&uniform, &mask(2, 2, &[3])).unwrap());
        assert!(pointing_game(&p, &Mask::new(2, 2)).is_err());
    }

    #[test]
    fn centroid_thirds_split_by_column() {
        // 6 columns: 0-1 left, 2-3 middle, 4-5 right
        let gts = [mask(6, 1, &[0, 1]), mask(6, 1, &[1, 2]), mask(6, 1, &[5]), mask(6, 1, &[0, 5])];
        assert_eq!(centroid_thirds(&gts).unwrap(), [0.25, 0.5, 0.25]);
        assert!(centroid_thirds(&[]).is_err());
    }

    #[test]
    fn second_ranked_pixel_is_found_at_k_two() {
        let mut d = [0.0f32; 16];
        d[5] = 0.9;
        d[11] = 0.8;
        let p = pm(4, 4, &d);
        let g = mask(4, 4, &[11]);
        assert!(!recall_at_k(&p, &g, 1).unwrap());
        assert!(recall_at_k(&p, &g, 2).unwrap());
        assert!(recall_at_k(&p, &g, 16).unwrap());
        assert!(recall_at_k(&p, &g, 17).is_err());
    }

    #[test]
    fn overall_iou_accumulates_counts() {
        // 10-pixel exact match plus a 90-vs-90 disjoint pair
        let on: Vec<usize> = (0..10).collect();
        let a_p = pm(10, 10, &(0..100).map(|i| if i < 10 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        let a_g = mask(10, 10, &on);
        let b_p = pm(15, 12, &(0..180).map(|i| if i < 90 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        let b_g = mask(15, 12, &(90..180).collect::<Vec<_>>());
        let iou = overall_iou(&[a_p.clone(), b_p], &[a_g.clone(), b_g], 0.5).unwrap();
        assert!((iou - 10.0 / 190.0).abs() < 1e-12);
        assert_eq!(overall_iou(&[a_p], &[a_g], 0.5).unwrap(), 1.0);
        assert!(overall_iou(&[], &[], 0.5).is_err());
    }

    #[test]
    fn centre_baseline_reads_the_middle_pixel() {
        let hit = mask(4, 4, &[2 * 4 + 2]);
        let miss = mask(4, 4, &[0]);
        assert_eq!(center_baseline(&[hit.clone(), hit.clone()]).unwrap(), 1.0);
        assert_eq!(center_baseline(&[hit, miss]).unwrap(), 0.5);
    }

    #[test]
    fn strata_partition_the_samples() {
        let probs: Vec<ProbMap> = (0..6).map(|i| pm(2, 1, &[i as f32 / 10.0, 0.5])).collect();
        let gts: Vec<Mask> = (0..6).map(|i| mask(2, 1, &[i % 2])).collect();
        let info: Vec<SampleInfo> = Action::ALL
            .iter()
            .map(|&action| SampleInfo {
                word_count: 5,
                action,
            })
            .collect();
        let r = stratified_report(&info, &probs, &gts, Stratum::Action, &[1, 2], 0.5).unwrap();
        let strata = r.strata.as_ref().unwrap();
        assert_eq!(strata.len(), 6);
        assert!(strata.values().all(|s| s.n == 1));
        let r = stratified_report(&info, &probs, &gts, Stratum::Length, &[1, 2], 0.5).unwrap();
        let only = &r.strata.as_ref().unwrap()["lt10"];
        assert_eq!(only.pgm, r.pgm);
        assert!("colour".parse::<Stratum>().is_err());
    }

    #[test]
    fn report_json_has_stable_key_order() {
        let r = evaluate(&[pm(2, 1, &[0.2, 0.7])], &[mask(2, 1, &[1])], &[2], 0.5).unwrap();
        let j = r.to_json().unwrap();
        assert!(j.find("\"n\"").unwrap() < j.find("\"pgm\"").unwrap());
        assert!(j.find("\"1\"").unwrap() < j.find("\"2\"").unwrap());
        assert_eq!(serde_json::from_str::<EvalReport>(&j).unwrap(), r);
    }
}
