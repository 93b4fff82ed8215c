//! Retrieval evaluation: query/gallery ranking, average precision, mAP,
//! CMC curves, F-score, and ranking-list export, under single-query and
//! multi-query protocols with an optional cross-camera filter.
//!
//! Conventions:
//! - Gallery entries sharing both identity and camera with the query are
//!   excluded when the cross-camera filter is on.
//! - Junk entries (person id -1) keep their ranking positions but are
//!   removed before any precision computation and never count as relevant.
//! - Queries with zero relevant gallery entries are skipped and counted,
//!   not scored as zero.

use crate::error::{Error, Result};
use crate::pooling::{projection_distance_mats, unflatten};
use serde::Serialize;

/// One image: its descriptor vector plus identity, camera and a source tag.
#[derive(Debug, Clone)]
pub struct Sample {
    pub descriptor: Vec<f64>,
    pub person_id: i64,
    pub camera_id: i64,
    pub tag: String,
}

impl Sample {
    pub fn new(descriptor: Vec<f64>, person_id: i64, camera_id: i64, tag: &str) -> Sample {
        Sample {
            descriptor,
            person_id,
            camera_id,
            tag: tag.to_string(),
        }
    }

    fn is_junk(&self) -> bool {
        self.person_id < 0
    }
}

/// Distance between descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Euclidean distance on the flat descriptor vectors.
    Euclidean,
    /// Subspace projection distance; descriptors are column-major flattened
    /// `c x k` bases, with `c` inferred from the vector length.
    Projection { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Single,
    Multi,
}

/// How multi-query descriptors sharing (id, camera) are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiPool {
    Average,
    ElementwiseMax,
}

#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub mode: QueryMode,
    pub cross_camera: bool,
    pub metric: Metric,
    pub cmc_max_rank: usize,
    pub fscore_cutoff: usize,
    pub multi_pool: MultiPool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            mode: QueryMode::Single,
            cross_camera: true,
            metric: Metric::Euclidean,
            cmc_max_rank: 20,
            fscore_cutoff: 10,
            multi_pool: MultiPool::Average,
        }
    }
}

/// One gallery entry in ranked order.
#[derive(Debug, Clone)]
pub struct RankedEntry {
    pub gallery_index: usize,
    pub distance: f64,
    pub relevant: bool,
    pub junk: bool,
}

/// Aggregate metrics for one evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub f_score: f64,
    pub num_queries: usize,
    pub num_skipped: usize,
    #[serde(skip)]
    pub per_query_ap: Vec<f64>,
}

impl EvalReport {
    /// JSON with exactly the documented keys:
    /// `map`, `cmc` (array), `f_score`, `num_queries`, `num_skipped`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }
}

fn metric_distance(a: &[f64], b: &[f64], metric: &Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: format!("descriptor lengths {} vs {}", a.len(), b.len()),
        });
    }
    match metric {
        Metric::Euclidean => Ok(a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        Metric::Projection { k } => {
            if *k == 0 || !a.len().is_multiple_of(*k) {
                return Err(Error::InvalidConfig {
                    detail: format!(
                        "projection metric: descriptor length {} not divisible by k={k}",
                        a.len()
                    ),
                });
            }
            let c = a.len() / k;
            let u1 = unflatten(a, c, *k)?;
            let u2 = unflatten(b, c, *k)?;
            projection_distance_mats(&u1, &u2)
        }
    }
}

/// Rank the gallery for one query: ascending distance, ties broken by
/// gallery index. Same-id-same-camera entries are dropped when the
/// cross-camera filter is on; junk entries stay in the list but are flagged.
pub fn rank_gallery(
    query: &Sample,
    gallery: &[Sample],
    protocol: &EvalProtocol,
) -> Result<Vec<RankedEntry>> {
    if query.is_junk() {
        return Err(Error::InvalidConfig {
            detail: "query with junk id -1".to_string(),
        });
    }
    let mut entries = Vec::with_capacity(gallery.len());
    for (gi, g) in gallery.iter().enumerate() {
        if protocol.cross_camera && g.person_id == query.person_id && g.camera_id == query.camera_id
        {
            continue;
        }
        let junk = g.is_junk();
        let distance = metric_distance(&query.descriptor, &g.descriptor, &protocol.metric)?;
        entries.push(RankedEntry {
            gallery_index: gi,
            distance,
            relevant: !junk && g.person_id == query.person_id,
            junk,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyGallery);
    }
    entries.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.gallery_index.cmp(&b.gallery_index))
    });
    Ok(entries)
}

/// Uninterpolated average precision over relevance flags in rank order.
/// `total_relevant` must be at least 1.
pub fn average_precision(flags: &[bool], total_relevant: usize) -> f64 {
    debug_assert!(total_relevant >= 1);
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

/// CMC curve: `cmc[r-1]` is the fraction of queries whose first relevant
/// hit occurs at rank <= r.
pub fn cmc(flag_lists: &[Vec<bool>], max_rank: usize) -> Vec<f64> {
    debug_assert!(max_rank >= 1);
    let mut curve = vec![0.0; max_rank];
    for flags in flag_lists {
        if let Some(first) = flags.iter().position(|&r| r) {
            let start = first.min(max_rank);
            for slot in curve.iter_mut().skip(start) {
                *slot += 1.0;
            }
        }
    }
    let n = flag_lists.len().max(1) as f64;
    for slot in curve.iter_mut() {
        *slot /= n;
    }
    curve
}

/// Mean F-score at a rank cutoff: per query, precision and recall at the
/// cutoff combine as `2PR/(P+R)` (zero when both are zero).
pub fn f_score(flag_lists: &[Vec<bool>], cutoff: usize) -> f64 {
    debug_assert!(cutoff >= 1);
    if flag_lists.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for flags in flag_lists {
        let hits = flags.iter().take(cutoff).filter(|&&r| r).count();
        let relevant = flags.iter().filter(|&&r| r).count();
        let precision = hits as f64 / cutoff as f64;
        let recall = if relevant == 0 {
            0.0
        } else {
            hits as f64 / relevant as f64
        };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / flag_lists.len() as f64
}

/// Pool multi-query descriptors by (id, camera) group, preserving first
/// appearance order.
fn pool_queries(queries: &[Sample], pool: MultiPool) -> Vec<Sample> {
    let mut groups: Vec<((i64, i64), Vec<&Sample>)> = Vec::new();
    for q in queries {
        let key = (q.person_id, q.camera_id);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(q),
            None => groups.push((key, vec![q])),
        }
    }
    groups
        .into_iter()
        .map(|((id, cam), members)| {
            let dim = members[0].descriptor.len();
            let mut pooled = members[0].descriptor.clone();
            for m in members.iter().skip(1) {
                for i in 0..dim {
                    match pool {
                        MultiPool::Average => pooled[i] += m.descriptor[i],
                        MultiPool::ElementwiseMax => pooled[i] = pooled[i].max(m.descriptor[i]),
                    }
                }
            }
            if let MultiPool::Average = pool {
                let inv = 1.0 / members.len() as f64;
                for x in pooled.iter_mut() {
                    *x *= inv;
                }
            }
            Sample::new(pooled, id, cam, &format!("pooled_id{id}_cam{cam}"))
        })
        .collect()
}

/// Score a query set against a gallery, producing mAP, the CMC curve and
/// the mean F-score. In multi-query mode queries sharing (id, camera) are
/// pooled into one probe first.
pub fn evaluate(
    queries: &[Sample],
    gallery: &[Sample],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    evaluate_with_threads(queries, gallery, protocol, 1)
}

/// [`evaluate`] with per-query work spread over `threads` workers. Results
/// land in a per-query slot vector and aggregation runs in query order, so
/// the report is identical for every thread count.
pub fn evaluate_with_threads(
    queries: &[Sample],
    gallery: &[Sample],
    protocol: &EvalProtocol,
    threads: usize,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::InvalidConfig {
            detail: "no queries".to_string(),
        });
    }
    if gallery.is_empty() {
        return Err(Error::InvalidConfig {
            detail: "empty gallery".to_string(),
        });
    }
    let pooled;
    let effective: &[Sample] = match protocol.mode {
        QueryMode::Single => queries,
        QueryMode::Multi => {
            pooled = pool_queries(queries, protocol.multi_pool);
            &pooled
        }
    };

    let per_query = |q: &Sample| -> Result<Vec<bool>> {
        let ranked = rank_gallery(q, gallery, protocol)?;
        Ok(ranked
            .iter()
            .filter(|e| !e.junk)
            .map(|e| e.relevant)
            .collect())
    };
    let threads = threads.max(1).min(effective.len());
    let mut slots: Vec<Option<Result<Vec<bool>>>> = vec![None; effective.len()];
    if threads <= 1 {
        for (slot, q) in slots.iter_mut().zip(effective.iter()) {
            *slot = Some(per_query(q));
        }
    } else {
        let chunk = effective.len().div_ceil(threads);
        let per_query = &per_query;
        std::thread::scope(|scope| {
            for (slot_chunk, query_chunk) in slots.chunks_mut(chunk).zip(effective.chunks(chunk)) {
                scope.spawn(move || {
                    for (slot, q) in slot_chunk.iter_mut().zip(query_chunk.iter()) {
                        *slot = Some(per_query(q));
                    }
                });
            }
        });
    }

    let mut aps = Vec::new();
    let mut flag_lists = Vec::new();
    let mut skipped = 0usize;
    for slot in slots {
        let flags = slot.expect("every query slot filled")?;
        let total_relevant = flags.iter().filter(|&&r| r).count();
        if total_relevant == 0 {
            skipped += 1;
            continue;
        }
        aps.push(average_precision(&flags, total_relevant));
        flag_lists.push(flags);
    }
    if aps.is_empty() {
        return Err(Error::InvalidConfig {
            detail: "every query was skipped (no relevant gallery entries)".to_string(),
        });
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    let curve = cmc(&flag_lists, protocol.cmc_max_rank);
    let f = f_score(&flag_lists, protocol.fscore_cutoff);
    Ok(EvalReport {
        map,
        cmc: curve,
        f_score: f,
        num_queries: aps.len(),
        num_skipped: skipped,
        per_query_ap: aps,
    })
}

/// One row of an exported ranking list.
#[derive(Debug, Clone)]
pub struct RankingRow {
    pub query: String,
    pub rank: usize,
    pub gallery: String,
    pub distance: f64,
    pub person_id: i64,
    pub camera_id: i64,
    pub relevant: bool,
}

/// Top-`depth` ranking list per query (clamped to the effective gallery
/// size). Junk entries appear with `relevant = false`.
pub fn export_ranking(
    queries: &[Sample],
    gallery: &[Sample],
    protocol: &EvalProtocol,
    depth: usize,
) -> Result<Vec<RankingRow>> {
    if depth == 0 {
        return Err(Error::InvalidConfig {
            detail: "ranking depth must be at least 1".to_string(),
        });
    }
    let pooled;
    let effective: &[Sample] = match protocol.mode {
        QueryMode::Single => queries,
        QueryMode::Multi => {
            pooled = pool_queries(queries, protocol.multi_pool);
            &pooled
        }
    };
    let mut rows = Vec::new();
    for q in effective {
        let ranked = rank_gallery(q, gallery, protocol)?;
        for (rank0, entry) in ranked.iter().take(depth).enumerate() {
            let g = &gallery[entry.gallery_index];
            rows.push(RankingRow {
                query: q.tag.clone(),
                rank: rank0 + 1,
                gallery: g.tag.clone(),
                distance: entry.distance,
                person_id: g.person_id,
                camera_id: g.camera_id,
                relevant: entry.relevant,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of a ranking export, header included.
pub fn ranking_to_csv(rows: &[RankingRow]) -> String {
    let mut out = String::from("query,rank,gallery,distance,person_id,camera_id,relevant\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.query, r.rank, r.gallery, r.distance, r.person_id, r.camera_id, r.relevant
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(desc: &[f64], id: i64, cam: i64, tag: &str) -> Sample {
        Sample::new(desc.to_vec(), id, cam, tag)
    }

    fn protocol() -> EvalProtocol {
        EvalProtocol::default()
    }

    #[test]
    fn rank_gallery_copy_first() {
        let q = sample(&[1.0, 0.0], 3, 0, "q");
        let gallery = vec![
            sample(&[0.0, 5.0], 9, 1, "far"),
            sample(&[1.0, 0.0], 3, 1, "copy"),
        ];
        let ranked = rank_gallery(&q, &gallery, &protocol()).unwrap();
        assert_eq!(ranked[0].gallery_index, 1);
        assert!(ranked[0].relevant);
        assert_eq!(ranked[0].distance, 0.0);
    }

    #[test]
    fn rank_gallery_filter_degenerate() {
        let q = sample(&[1.0], 3, 0, "q");
        let gallery = vec![sample(&[1.0], 3, 0, "same"), sample(&[2.0], 3, 0, "same2")];
        assert!(matches!(
            rank_gallery(&q, &gallery, &protocol()),
            Err(Error::EmptyGallery)
        ));
    }

    #[test]
    fn rank_gallery_matches_naive_sort_oracle() {
        let mut rng = crate::rng::Rng::new(40);
        let q = sample(&(0..4).map(|_| rng.normal()).collect::<Vec<_>>(), 1, 0, "q");
        let gallery: Vec<Sample> = (0..20)
            .map(|i| {
                sample(
                    &(0..4).map(|_| rng.normal()).collect::<Vec<_>>(),
                    (i % 5) as i64,
                    (i % 2) as i64,
                    &format!("g{i}"),
                )
            })
            .collect();
        let ranked = rank_gallery(&q, &gallery, &protocol()).unwrap();
        // Naive oracle: independent distance computation + stable sort.
        let mut oracle: Vec<(usize, f64)> = gallery
            .iter()
            .enumerate()
            .filter(|(_, g)| !(g.person_id == 1 && g.camera_id == 0))
            .map(|(gi, g)| {
                let d = q
                    .descriptor
                    .iter()
                    .zip(g.descriptor.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (gi, d)
            })
            .collect();
        oracle.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        assert_eq!(ranked.len(), oracle.len());
        for (got, expect) in ranked.iter().zip(oracle.iter()) {
            assert_eq!(got.gallery_index, expect.0);
            assert_eq!(got.distance, expect.1);
        }
    }

    #[test]
    fn average_precision_perfect_ranking() {
        let flags = vec![true, true, true, false, false];
        assert_eq!(average_precision(&flags, 3), 1.0);
    }

    #[test]
    fn average_precision_single_hit_rank_three() {
        let flags = vec![false, false, true];
        assert!((average_precision(&flags, 1) - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn average_precision_matches_direct_oracle() {
        let mut rng = crate::rng::Rng::new(41);
        let flags: Vec<bool> = (0..50).map(|_| rng.next_f64() < 0.3).collect();
        let r = flags.iter().filter(|&&x| x).count();
        if r == 0 {
            return;
        }
        let got = average_precision(&flags, r);
        // Brute-force definition: mean over relevant ranks of precision@rank.
        let mut oracle = 0.0;
        for t in 1..=flags.len() {
            if flags[t - 1] {
                let hits = flags[..t].iter().filter(|&&x| x).count();
                oracle += hits as f64 / t as f64;
            }
        }
        oracle /= r as f64;
        assert!((got - oracle).abs() <= 1e-12);
    }

    #[test]
    fn cmc_all_first_hits_at_rank_one() {
        let lists = vec![vec![true, false], vec![true, true]];
        let curve = cmc(&lists, 2);
        assert_eq!(curve, vec![1.0, 1.0]);
    }

    #[test]
    fn cmc_closed_form_two_queries() {
        let lists = vec![vec![true, false, false], vec![false, false, true]];
        let curve = cmc(&lists, 3);
        assert_eq!(curve, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn cmc_matches_first_hit_oracle() {
        let mut rng = crate::rng::Rng::new(42);
        let lists: Vec<Vec<bool>> = (0..30)
            .map(|_| (0..15).map(|_| rng.next_f64() < 0.2).collect())
            .collect();
        let max_rank = 15;
        let got = cmc(&lists, max_rank);
        for r in 1..=max_rank {
            let hits = lists
                .iter()
                .filter(|flags| {
                    flags
                        .iter()
                        .position(|&x| x)
                        .map(|pos| pos < r)
                        .unwrap_or(false)
                })
                .count();
            let expect = hits as f64 / lists.len() as f64;
            assert_eq!(got[r - 1], expect);
        }
        // Non-decreasing.
        for r in 1..max_rank {
            assert!(got[r] >= got[r - 1]);
        }
    }

    #[test]
    fn f_score_perfect_and_zero() {
        // Perfect ranking with cutoff == number of relevant -> 1.0.
        let lists = vec![vec![true, true, false, false]];
        assert!((f_score(&lists, 2) - 1.0).abs() <= 1e-15);
        // No hits in the cutoff -> 0.
        let lists = vec![vec![false, false, true]];
        assert_eq!(f_score(&lists, 2), 0.0);
    }

    #[test]
    fn f_score_matches_direct_oracle() {
        let mut rng = crate::rng::Rng::new(43);
        let lists: Vec<Vec<bool>> = (0..25)
            .map(|_| (0..40).map(|_| rng.next_f64() < 0.25).collect())
            .collect();
        let got = f_score(&lists, 10);
        let mut oracle = 0.0;
        for flags in &lists {
            let hits = flags[..10].iter().filter(|&&x| x).count() as f64;
            let rel = flags.iter().filter(|&&x| x).count() as f64;
            let p = hits / 10.0;
            let r = if rel > 0.0 { hits / rel } else { 0.0 };
            oracle += if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
        }
        oracle /= lists.len() as f64;
        assert!((got - oracle).abs() <= 1e-12);
    }

    #[test]
    fn evaluate_trivial_perfect_query() {
        let q = sample(&[0.0, 0.0], 5, 0, "q");
        let gallery = vec![
            sample(&[0.1, 0.0], 5, 1, "match"),
            sample(&[3.0, 3.0], 7, 1, "other"),
        ];
        let report = evaluate(&[q], &gallery, &protocol()).unwrap();
        assert_eq!(report.map, 1.0);
        assert_eq!(report.cmc[0], 1.0);
        assert_eq!(report.num_queries, 1);
        assert_eq!(report.num_skipped, 0);
    }

    #[test]
    fn evaluate_multi_query_idempotent_pooling() {
        let q1 = sample(&[1.0, 2.0], 5, 0, "q1");
        let q2 = sample(&[1.0, 2.0], 5, 0, "q2");
        let gallery = vec![
            sample(&[1.0, 2.1], 5, 1, "match"),
            sample(&[9.0, 9.0], 7, 1, "other"),
        ];
        let mut proto = protocol();
        proto.mode = QueryMode::Multi;
        let multi = evaluate(&[q1.clone(), q2], &gallery, &proto).unwrap();
        let single = evaluate(&[q1], &gallery, &protocol()).unwrap();
        assert_eq!(multi.map, single.map);
        assert_eq!(multi.cmc, single.cmc);
        assert_eq!(multi.num_queries, 1);
    }

    #[test]
    fn evaluate_skips_queries_without_relevant() {
        let q_ok = sample(&[0.0], 5, 0, "ok");
        let q_skip = sample(&[0.0], 6, 0, "skip");
        let gallery = vec![sample(&[0.5], 5, 1, "g0"), sample(&[2.0], 9, 1, "g1")];
        let report = evaluate(&[q_ok, q_skip], &gallery, &protocol()).unwrap();
        assert_eq!(report.num_queries, 1);
        assert_eq!(report.num_skipped, 1);
    }

    #[test]
    fn junk_entries_keep_positions_but_never_score() {
        let q = sample(&[0.0], 5, 0, "q");
        // Junk closest, then the true match.
        let gallery = vec![
            sample(&[0.1], -1, 1, "junk"),
            sample(&[0.5], 5, 1, "match"),
            sample(&[9.0], 8, 1, "other"),
        ];
        let report = evaluate(std::slice::from_ref(&q), &gallery, &protocol()).unwrap();
        // Junk removed for precision: the match is effectively rank 1.
        assert_eq!(report.map, 1.0);
        let rows = export_ranking(&[q], &gallery, &protocol(), 3).unwrap();
        // But the ranking list itself retains the junk entry at rank 1.
        assert_eq!(rows[0].gallery, "junk");
        assert!(!rows[0].relevant);
        assert_eq!(rows[1].gallery, "match");
        assert!(rows[1].relevant);
    }

    #[test]
    fn export_ranking_depth_clamps() {
        let q = sample(&[0.0], 5, 0, "q");
        let gallery = vec![sample(&[0.5], 5, 1, "g0"), sample(&[2.0], 9, 1, "g1")];
        let rows = export_ranking(std::slice::from_ref(&q), &gallery, &protocol(), 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].relevant);
        let rows = export_ranking(&[q], &gallery, &protocol(), 99).unwrap();
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn export_ranking_rejects_zero_depth() {
        let q = sample(&[0.0], 5, 0, "q");
        let gallery = vec![sample(&[0.5], 5, 1, "g0")];
        assert!(matches!(
            export_ranking(&[q], &gallery, &protocol(), 0),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn csv_header_exact() {
        let csv = ranking_to_csv(&[]);
        assert_eq!(
            csv,
            "query,rank,gallery,distance,person_id,camera_id,relevant\n"
        );
    }

    #[test]
    fn threaded_evaluation_is_order_independent() {
        let mut rng = crate::rng::Rng::new(44);
        let queries: Vec<Sample> = (0..9)
            .map(|i| {
                sample(
                    &(0..3).map(|_| rng.normal()).collect::<Vec<_>>(),
                    (i % 4) as i64,
                    0,
                    &format!("q{i}"),
                )
            })
            .collect();
        let gallery: Vec<Sample> = (0..30)
            .map(|i| {
                sample(
                    &(0..3).map(|_| rng.normal()).collect::<Vec<_>>(),
                    (i % 4) as i64,
                    1,
                    &format!("g{i}"),
                )
            })
            .collect();
        let base = evaluate(&queries, &gallery, &protocol()).unwrap();
        for threads in [2, 3, 8, 64] {
            let par = evaluate_with_threads(&queries, &gallery, &protocol(), threads).unwrap();
            assert_eq!(base.to_json(), par.to_json(), "threads = {threads}");
            assert_eq!(base.per_query_ap, par.per_query_ap);
        }
    }

    #[test]
    fn report_json_has_documented_keys() {
        let report = EvalReport {
            map: 0.5,
            cmc: vec![0.25, 0.5],
            f_score: 0.4,
            num_queries: 4,
            num_skipped: 1,
            per_query_ap: vec![0.5; 4],
        };
        let json = report.to_json();
        assert_eq!(
            json,
            r#"{"map":0.5,"cmc":[0.25,0.5],"f_score":0.4,"num_queries":4,"num_skipped":1}"#
        );
    }
}
