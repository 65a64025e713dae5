//! Static-map scoring and multi-object tracking metrics.

mod assignment;

use std::collections::BTreeMap;
use std::fmt;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::front_end::BoundingBox;
use crate::voxel_map::VoxelMap;

pub use assignment::max_weight_assignment;

/// Preservation and rejection rates in percent; `None` when the reference
/// set is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapScore {
    pub pr: Option<f64>,
    pub rr: Option<f64>,
    pub f1: Option<f64>,
    pub resolution: f64,
}

impl fmt::Display for MapScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        let f1 = self.f1.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        write!(f, "PR {} RR {} F1 {}", pct(self.pr), pct(self.rr), f1)
    }
}

pub fn score_map(estimated: &VoxelMap, gt_static: &VoxelMap, gt_dynamic: &VoxelMap) -> Result<MapScore> {
    let res = gt_static.resolution();
    for (name, m) in [("estimated", estimated), ("dynamic ground truth", gt_dynamic)] {
        if (m.resolution() - res).abs() > 1e-12 {
            return Err(Error::config(format!(
                "{name} map resolution {} differs from {res}",
                m.resolution()
            )));
        }
    }
    let pr = (!gt_static.is_empty())
        .then(|| estimated.intersection_count(gt_static) as f64 / gt_static.len() as f64 * 100.0);
    let rr = (!gt_dynamic.is_empty())
        .then(|| (1.0 - estimated.intersection_count(gt_dynamic) as f64 / gt_dynamic.len() as f64) * 100.0);
    let f1 = match (pr, rr) {
        (Some(p), Some(r)) => {
            let (p, r) = (p / 100.0, r / 100.0);
            Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        }
        _ => None,
    };
    Ok(MapScore { pr, rr, f1, resolution: res })
}

/// One detection of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: u32,
    pub id: u32,
    pub bbox: BoundingBox,
}

/// Result of matching one frame; indices refer to the slices passed to
/// [`match_boxes`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt index, pr index, IoU)`, ascending by gt index.
    pub tp: Vec<(usize, usize, f64)>,
    pub fn_: Vec<usize>,
    pub fp: Vec<usize>,
}

/// Optimal one-to-one matching that maximizes the number of pairs with
/// `IoU >= alpha`, then their total IoU.
pub fn match_boxes(gt: &[&TrackRecord], pr: &[&TrackRecord], alpha: f64) -> FrameMatch {
    let n = gt.len().min(pr.len());
    // 1 + iou/(n+1) per admissible pair: any extra pair outweighs every IoU sum
    let scale = 1.0 / (n as f64 + 1.0);
    let iou: Vec<Vec<f64>> = gt.iter().map(|g| pr.iter().map(|p| g.bbox.iou(&p.bbox)).collect()).collect();
    let weights: Vec<Vec<f64>> = iou
        .iter()
        .map(|row| row.iter().map(|&v| if v >= alpha && v > 0.0 { 1.0 + v * scale } else { 0.0 }).collect())
        .collect();
    let assigned = max_weight_assignment(&weights);
    let mut out = FrameMatch::default();
    let mut pr_used = vec![false; pr.len()];
    for (gi, a) in assigned.iter().enumerate() {
        match a {
            Some(pi) if weights[gi][*pi] > 0.0 => {
                pr_used[*pi] = true;
                out.tp.push((gi, *pi, iou[gi][*pi]));
            }
            _ => out.fn_.push(gi),
        }
    }
    out.fp = (0..pr.len()).filter(|&i| !pr_used[i]).collect();
    out
}

/// [`match_boxes`] on the records of one frame, with each side ordered by
/// id so that exact ties resolve toward lower ids.
pub fn match_frame(gt: &[TrackRecord], pr: &[TrackRecord], frame: u32, alpha: f64) -> FrameMatch {
    let pick = |recs: &[TrackRecord]| {
        let mut idx: Vec<usize> = (0..recs.len()).filter(|&i| recs[i].frame == frame).collect();
        idx.sort_by_key(|&i| recs[i].id);
        idx
    };
    let (gi, pi) = (pick(gt), pick(pr));
    let g: Vec<&TrackRecord> = gi.iter().map(|&i| &gt[i]).collect();
    let p: Vec<&TrackRecord> = pi.iter().map(|&i| &pr[i]).collect();
    let m = match_boxes(&g, &p, alpha);
    FrameMatch {
        tp: m.tp.into_iter().map(|(a, b, v)| (gi[a], pi[b], v)).collect(),
        fn_: m.fn_.into_iter().map(|a| gi[a]).collect(),
        fp: m.fp.into_iter().map(|b| pi[b]).collect(),
    }
}

/// Per-frame matches of a whole sequence as `(frame, gt id, pr id)` pairs.
struct SequenceMatch {
    tp: Vec<(u32, u32, u32)>,
    fn_: usize,
    fp: usize,
}

fn by_frame(recs: &[TrackRecord]) -> BTreeMap<u32, Vec<&TrackRecord>> {
    let mut out: BTreeMap<u32, Vec<&TrackRecord>> = BTreeMap::new();
    for r in recs {
        out.entry(r.frame).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.id);
    }
    out
}

fn match_sequence(gt: &[TrackRecord], pr: &[TrackRecord], alpha: f64) -> SequenceMatch {
    let (g, p) = (by_frame(gt), by_frame(pr));
    let mut frames: Vec<u32> = g.keys().chain(p.keys()).copied().collect();
    frames.sort_unstable();
    frames.dedup();
    let empty = Vec::new();
    let mut out = SequenceMatch { tp: Vec::new(), fn_: 0, fp: 0 };
    for f in frames {
        let (gf, pf) = (g.get(&f).unwrap_or(&empty), p.get(&f).unwrap_or(&empty));
        let m = match_boxes(gf, pf, alpha);
        out.tp.extend(m.tp.iter().map(|&(a, b, _)| (f, gf[a].id, pf[b].id)));
        out.fn_ += m.fn_.len();
        out.fp += m.fp.len();
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MotCounts {
    pub gt_dets: usize,
    pub pr_dets: usize,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub idsw: usize,
    pub idtp: usize,
    pub idfn: usize,
    pub idfp: usize,
}

/// `1 − (FN + FP + IDSW)/|gtDet|`; `None` without ground-truth detections.
/// Counts other than the identity ones are filled in.
pub fn mota(gt: &[TrackRecord], pr: &[TrackRecord], alpha: f64) -> (Option<f64>, MotCounts) {
    let m = match_sequence(gt, pr, alpha);
    let mut last_pr: FxHashMap<u32, u32> = FxHashMap::default();
    let mut idsw = 0;
    for &(_, g, p) in &m.tp {
        if let Some(prev) = last_pr.insert(g, p) {
            if prev != p {
                idsw += 1;
            }
        }
    }
    let counts = MotCounts {
        gt_dets: gt.len(),
        pr_dets: pr.len(),
        tp: m.tp.len(),
        fn_: m.fn_,
        fp: m.fp,
        idsw,
        ..MotCounts::default()
    };
    let value = (!gt.is_empty()).then(|| 1.0 - (m.fn_ + m.fp + idsw) as f64 / gt.len() as f64);
    (value, counts)
}

/// Identity F1 under the trajectory bijection that maximizes IDTP.
pub fn idf1(gt: &[TrackRecord], pr: &[TrackRecord], alpha: f64) -> (Option<f64>, MotCounts) {
    let (g, p) = (by_frame(gt), by_frame(pr));
    let mut gids: Vec<u32> = gt.iter().map(|r| r.id).collect();
    let mut pids: Vec<u32> = pr.iter().map(|r| r.id).collect();
    gids.sort_unstable();
    gids.dedup();
    pids.sort_unstable();
    pids.dedup();
    let gix: FxHashMap<u32, usize> = gids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let pix: FxHashMap<u32, usize> = pids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    // co-occurrences with IoU >= alpha per trajectory pair
    let mut overlap = vec![vec![0.0; pids.len()]; gids.len()];
    for (f, gf) in &g {
        let Some(pf) = p.get(f) else { continue };
        for gr in gf {
            for prr in pf {
                if gr.bbox.iou(&prr.bbox) >= alpha {
                    overlap[gix[&gr.id]][pix[&prr.id]] += 1.0;
                }
            }
        }
    }
    let assigned = max_weight_assignment(&overlap);
    let idtp: usize = assigned
        .iter()
        .enumerate()
        .filter_map(|(gi, a)| a.map(|pi| overlap[gi][pi] as usize))
        .sum();
    let counts = MotCounts {
        gt_dets: gt.len(),
        pr_dets: pr.len(),
        idtp,
        idfn: gt.len() - idtp,
        idfp: pr.len() - idtp,
        ..MotCounts::default()
    };
    let value = (!gt.is_empty()).then(|| {
        idtp as f64 / (idtp as f64 + 0.5 * counts.idfn as f64 + 0.5 * counts.idfp as f64)
    });
    (value, counts)
}

/// The 19 similarity thresholds 0.05, 0.10, …, 0.95.
pub fn alpha_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotaAtAlpha {
    pub alpha: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotaScore {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub per_alpha: Vec<HotaAtAlpha>,
    /// Neither side has any detection; all scores are 1 by convention.
    pub degenerate: bool,
}

/// Mean taken relative to the first value, so a constant sequence averages
/// to itself exactly.
fn shifted_mean(v: &[f64]) -> f64 {
    let first = v[0];
    first + v.iter().map(|x| x - first).sum::<f64>() / v.len() as f64
}

pub fn hota_at(gt: &[TrackRecord], pr: &[TrackRecord], alpha: f64) -> HotaAtAlpha {
    let m = match_sequence(gt, pr, alpha);
    let tp = m.tp.len();
    let deta = if tp + m.fn_ + m.fp > 0 { tp as f64 / (tp + m.fn_ + m.fp) as f64 } else { 0.0 };
    let mut gt_len: FxHashMap<u32, usize> = FxHashMap::default();
    let mut pr_len: FxHashMap<u32, usize> = FxHashMap::default();
    for r in gt {
        *gt_len.entry(r.id).or_default() += 1;
    }
    for r in pr {
        *pr_len.entry(r.id).or_default() += 1;
    }
    let mut pair_tp: FxHashMap<(u32, u32), usize> = FxHashMap::default();
    for &(_, g, p) in &m.tp {
        *pair_tp.entry((g, p)).or_default() += 1;
    }
    let assa = if tp == 0 {
        0.0
    } else {
        let a: Vec<f64> = m
            .tp
            .iter()
            .map(|&(_, g, p)| {
                let tpa = pair_tp[&(g, p)];
                let fna = gt_len[&g] - tpa;
                let fpa = pr_len[&p] - tpa;
                tpa as f64 / (tpa + fna + fpa) as f64
            })
            .collect();
        shifted_mean(&a)
    };
    HotaAtAlpha { alpha, hota: (deta * assa).sqrt(), deta, assa }
}

pub fn hota(gt: &[TrackRecord], pr: &[TrackRecord]) -> HotaScore {
    let grid = alpha_grid();
    if gt.is_empty() && pr.is_empty() {
        let per_alpha = grid.iter().map(|&alpha| HotaAtAlpha { alpha, hota: 1.0, deta: 1.0, assa: 1.0 }).collect();
        return HotaScore { hota: 1.0, deta: 1.0, assa: 1.0, per_alpha, degenerate: true };
    }
    let per_alpha: Vec<HotaAtAlpha> = grid.iter().map(|&a| hota_at(gt, pr, a)).collect();
    let mean = |f: fn(&HotaAtAlpha) -> f64| shifted_mean(&per_alpha.iter().map(f).collect::<Vec<_>>());
    HotaScore {
        hota: mean(|h| h.hota),
        deta: mean(|h| h.deta),
        assa: mean(|h| h.assa),
        per_alpha,
        degenerate: false,
    }
}

/// The full metric suite; CLEAR and identity metrics are taken at `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotScore {
    pub alpha: f64,
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub hota: HotaScore,
    pub counts: MotCounts,
}

pub fn evaluate_mot(gt: &[TrackRecord], pr: &[TrackRecord], alpha: f64) -> MotScore {
    let (mota_v, c) = mota(gt, pr, alpha);
    let (idf1_v, ic) = idf1(gt, pr, alpha);
    MotScore {
        alpha,
        mota: mota_v,
        idf1: idf1_v,
        hota: hota(gt, pr),
        counts: MotCounts { idtp: ic.idtp, idfn: ic.idfn, idfp: ic.idfp, ..c },
    }
}

impl fmt::Display for MotScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let c = &self.counts;
        writeln!(f, "MOTA {} IDF1 {} HOTA {:.4} DetA {:.4} AssA {:.4}", opt(self.mota), opt(self.idf1), self.hota.hota, self.hota.deta, self.hota.assa)?;
        write!(
            f,
            "alpha {:.2} gtDets {} prDets {} TP {} FN {} FP {} IDSW {} IDTP {} IDFN {} IDFP {}",
            self.alpha, c.gt_dets, c.pr_dets, c.tp, c.fn_, c.fp, c.idsw, c.idtp, c.idfn, c.idfp
        )?;
        if self.hota.degenerate {
            write!(f, "\ndegenerate: no detections on either side")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, VoxelKey};
    use nalgebra::Vector3;

    fn keys(range: std::ops::Range<i32>) -> VoxelMap {
        VoxelMap::from_keys(0.2, range.map(|i| VoxelKey::new(i, 0, 0))).unwrap()
    }

    #[test]
    fn perfect_map() {
        let s = score_map(&keys(0..10), &keys(0..10), &keys(10..14)).unwrap();
        assert_eq!(s.to_string(), "PR 100.00 RR 100.00 F1 1.0000");
    }

    #[test]
    fn everything_kept_rejects_nothing() {
        let s = score_map(&keys(0..14), &keys(0..10), &keys(10..14)).unwrap();
        assert_eq!(s.rr, Some(0.0));
    }

    #[test]
    fn fourteen_voxel_instance() {
        let est = VoxelMap::from_keys(0.2, (1..11).map(|i| VoxelKey::new(i, 0, 0))).unwrap();
        let s = score_map(&est, &keys(0..10), &keys(10..14)).unwrap();
        assert!((s.pr.unwrap() - 90.0).abs() < 1e-12);
        assert!((s.rr.unwrap() - 75.0).abs() < 1e-12);
        assert!((s.f1.unwrap() - 2.0 * 0.9 * 0.75 / 1.65).abs() < 1e-12);
    }

    #[test]
    fn no_dynamic_truth_leaves_rr_undefined() {
        let s = score_map(&keys(0..10), &keys(0..10), &keys(0..0)).unwrap();
        assert_eq!(s.rr, None);
        assert_eq!(s.to_string(), "PR 100.00 RR n/a F1 n/a");
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let other = VoxelMap::new(0.1).unwrap();
        assert!(score_map(&other, &keys(0..1), &keys(1..2)).is_err());
    }

    fn rec(frame: u32, id: u32, x: f64) -> TrackRecord {
        TrackRecord {
            frame,
            id,
            bbox: BoundingBox::new(Point3::new(x, 0.0, 0.0), Point3::new(x + 0.5, 0.5, 1.8)),
        }
    }

    #[test]
    fn identical_and_disjoint_frames() {
        let gt = [rec(0, 1, 0.0), rec(0, 2, 3.0)];
        let m = match_frame(&gt, &gt, 0, 1.0);
        assert_eq!(m.tp.len(), 2);
        let far = [rec(0, 1, 10.0), rec(0, 2, 13.0)];
        let m = match_frame(&gt, &far, 0, 0.05);
        assert!(m.tp.is_empty());
        assert_eq!((m.fn_.len(), m.fp.len()), (2, 2));
    }

    #[test]
    fn ambiguous_three_by_three_matches_permutation_search() {
        let gt = [rec(0, 0, 0.0), rec(0, 1, 0.2), rec(0, 2, 0.4)];
        let pr = [rec(0, 0, 0.1), rec(0, 1, 0.25), rec(0, 2, 0.3)];
        let alpha = 0.3;
        let iou = |g: usize, p: usize| gt[g].bbox.iou(&pr[p].bbox);
        let mut best = (0usize, 0.0f64);
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let ok: Vec<f64> = (0..3).map(|g| iou(g, perm[g])).filter(|&v| v >= alpha).collect();
            let cand = (ok.len(), ok.iter().sum::<f64>());
            if cand.0 > best.0 || (cand.0 == best.0 && cand.1 > best.1) {
                best = cand;
            }
        }
        let m = match_frame(&gt, &pr, 0, alpha);
        assert_eq!(m.tp.len(), best.0);
        assert!((m.tp.iter().map(|t| t.2).sum::<f64>() - best.1).abs() < 1e-12);
    }

    fn split_track() -> (Vec<TrackRecord>, Vec<TrackRecord>) {
        let gt: Vec<_> = (0..4).map(|f| rec(f, 1, f as f64)).collect();
        let pr: Vec<_> = (0..4).map(|f| rec(f, if f < 2 { 10 } else { 11 }, f as f64)).collect();
        (gt, pr)
    }

    #[test]
    fn split_track_mota_and_idf1() {
        let (gt, pr) = split_track();
        let (m, c) = mota(&gt, &pr, 0.5);
        assert_eq!((c.fn_, c.fp, c.idsw), (0, 0, 1));
        assert_eq!(m, Some(0.75));
        let (v, c) = idf1(&gt, &pr, 0.5);
        assert_eq!((c.idtp, c.idfn, c.idfp), (2, 2, 2));
        assert_eq!(v, Some(0.5));
    }

    #[test]
    fn perfect_tracking_scores_one() {
        let gt: Vec<_> = (0..5).flat_map(|f| [rec(f, 1, f as f64), rec(f, 2, 5.0 - f as f64 * 0.1)]).collect();
        let s = evaluate_mot(&gt, &gt, 0.5);
        assert_eq!(s.mota, Some(1.0));
        assert_eq!(s.idf1, Some(1.0));
        assert_eq!((s.hota.hota, s.hota.deta, s.hota.assa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_predictions() {
        let gt: Vec<_> = (0..4).map(|f| rec(f, 1, 0.0)).collect();
        assert_eq!(mota(&gt, &[], 0.5).0, Some(0.0));
        assert_eq!(mota(&[], &[], 0.5).0, None);
        assert!(hota(&[], &[]).degenerate);
    }

    #[test]
    fn new_id_every_frame_gives_sqrt_inverse_length() {
        let frames = 8u32;
        let gt: Vec<_> = (0..frames).map(|f| rec(f, 1, 0.3 * f as f64)).collect();
        let pr: Vec<_> = (0..frames).map(|f| rec(f, 100 + f, 0.3 * f as f64)).collect();
        let h = hota(&gt, &pr);
        assert!((h.deta - 1.0).abs() < 1e-12);
        assert!((h.assa - 1.0 / frames as f64).abs() < 1e-12);
        assert!((h.hota - (1.0 / frames as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hota_is_mean_of_per_alpha_geometric_means() {
        let gt: Vec<_> = (0..6).map(|f| rec(f, 1, 0.0)).collect();
        let pr: Vec<_> = (0..6)
            .map(|f| TrackRecord { bbox: rec(f, 3, 0.0).bbox.translated(&Vector3::new(0.05 * f as f64, 0.0, 0.0)), ..rec(f, 3, 0.0) })
            .collect();
        let h = hota(&gt, &pr);
        for a in &h.per_alpha {
            assert!((a.hota - (a.deta * a.assa).sqrt()).abs() < 1e-15);
        }
        let lo = h.per_alpha.iter().map(|a| a.hota).fold(f64::INFINITY, f64::min);
        let hi = h.per_alpha.iter().map(|a| a.hota).fold(0.0, f64::max);
        assert!(lo <= h.hota && h.hota <= hi);
    }

    #[test]
    fn relabeling_predictions_changes_nothing() {
        let (gt, pr) = split_track();
        let relabeled: Vec<_> = pr.iter().map(|r| TrackRecord { id: 1000 - r.id, ..*r }).collect();
        assert_eq!(evaluate_mot(&gt, &pr, 0.5).mota, evaluate_mot(&gt, &relabeled, 0.5).mota);
        assert_eq!(evaluate_mot(&gt, &pr, 0.5).idf1, evaluate_mot(&gt, &relabeled, 0.5).idf1);
        assert_eq!(hota(&gt, &pr).hota, hota(&gt, &relabeled).hota);
    }
}
